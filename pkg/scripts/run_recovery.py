"""Clutter-recovery experiment: train on generated scenes, score agreement
between predicted and planted object classes on a held-out set."""

import argparse
import time
from collections import Counter

import numpy as np

from declutter.decomposer import TrainConfig, contribution, train_decomposer
from declutter.scenes import generate_scene, scenes_to_dataset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-scenes", type=int, default=2000)
    ap.add_argument("--eval-scenes", type=int, default=200)
    ap.add_argument("--eval-seed-base", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--out", help="checkpoint path for the trained model")
    args = ap.parse_args()

    t0 = time.time()
    train = [generate_scene(args.seed + i) for i in range(args.train_scenes)]
    holdout = [generate_scene(args.eval_seed_base + i) for i in range(args.eval_scenes)]
    print(f"scene generation: {time.time() - t0:.0f}s")
    per_scene = Counter(len(s.objects) for s in holdout)
    print(f"objects per eval scene: {dict(sorted(per_scene.items()))}")

    t0 = time.time()
    config = TrainConfig(max_epochs=args.epochs, seed=args.seed)
    model, history = train_decomposer(scenes_to_dataset(train), config)
    print(f"training: {time.time() - t0:.0f}s, best epoch {history.best_epoch}"
          f" of {len(history.val_rows)}, early stop {history.stopped_early}")

    tp = fn = fp = tn = 0
    q_clutter, q_normal = [], []
    for scene in holdout:
        report = contribution(model, scene.image, scene.objects)
        for obj, planted in zip(report.objects, scene.is_clutter):
            (q_clutter if planted else q_normal).append(obj.q)
            if planted and obj.is_clutter:
                tp += 1
            elif planted:
                fn += 1
            elif obj.is_clutter:
                fp += 1
            else:
                tn += 1
    total = tp + fn + fp + tn
    print(f"object agreement: {100 * (tp + tn) / total:.1f}% ({tp + tn}/{total})")
    print(f"confusion: tp {tp} fn {fn} fp {fp} tn {tn}")
    print(f"q planted-clutter mean {np.mean(q_clutter):+.5f},"
          f" normal mean {np.mean(q_normal):+.5f}")

    if args.out:
        model.save(args.out)
        print(f"saved {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
