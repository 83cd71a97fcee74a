"""Command-line driver.

Subcommands: gen-scenes, train-decomposer, train-inpainter, analyze, clean,
grad-check, serve.  Missing required flags exit 2 with usage; a checkpoint
or image that fails to load exits 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .decomposer import DecomposerModel, TrainConfig, build_graph, contribution, train_decomposer
from .guidance import FIDELITY_ITERS, Engine, analyze as analyze_session, clean as clean_session
from .inpaint import InpainterModel, InpaintTrainConfig, build_train_graph, train_inpainter
from .scenes import (SceneConfig, load_corpus, load_png, save_corpus, save_png,
                     generate_scene)
from .segmentation import detect_objects, mask_to_rle, rle_to_mask, ObjectMask


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="declutter",
                                     description="clutter analysis and removal toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-scenes", help="write a synthetic scene corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--side", type=int, default=64)

    p = sub.add_parser("train-decomposer", help="train the score decomposition model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=4e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=15)
    p.add_argument("--lambda-aes", type=float, default=1.0)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-inpainter", help="train the inpainting model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("analyze", help="score objects and write a contribution report")
    p.add_argument("--image", required=True)
    p.add_argument("--decomposer", required=True)
    p.add_argument("--masks", choices=["oracle", "heuristic"], default="heuristic")
    p.add_argument("--mask-file", help="corpus JSON entry with RLE masks (oracle mode)")
    p.add_argument("--out", help="report JSON path (default: stdout)")

    p = sub.add_parser("clean", help="inpaint the clutter named by a report")
    p.add_argument("--image", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--inpainter", required=True)
    p.add_argument("--fidelity", choices=sorted(FIDELITY_ITERS), default="capture")
    p.add_argument("--out", required=True)

    p = sub.add_parser("grad-check", help="finite-difference check of the shipped graphs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=4)

    p = sub.add_parser("serve", help="launch the HTTP service")
    p.add_argument("--decomposer", required=True)
    p.add_argument("--inpainter")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--masks", choices=["oracle", "heuristic"], default="heuristic")

    return parser


def _load_or_exit(kind: str, path: str, loader):
    try:
        return loader(path)
    except Exception as e:
        print(f"failed to load {kind} from {path}: {e}", file=sys.stderr)
        sys.exit(1)


def _cmd_gen_scenes(args) -> int:
    config = SceneConfig(side=args.side)
    scenes = [generate_scene(args.seed + i, config) for i in range(args.count)]
    save_corpus(args.out, scenes)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def _cmd_train_decomposer(args) -> int:
    dataset = _load_or_exit("corpus", args.data, load_corpus)
    config = TrainConfig(lambda_aes=args.lambda_aes, learning_rate=args.lr,
                         batch_size=args.batch, max_epochs=args.epochs,
                         patience=args.patience, clip_norm=args.clip,
                         side=args.side, seed=args.seed)
    model, history = train_decomposer(dataset, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    history.write_csv(out.with_suffix(".csv"))
    best = (history.val_rows[history.best_epoch - 1]["total"]
            if history.val_rows and history.best_epoch else float("nan"))
    print(f"saved {out}; best val total {best:.6f} at epoch {history.best_epoch}")
    return 0


def _cmd_train_inpainter(args) -> int:
    dataset = _load_or_exit("corpus", args.data, load_corpus)
    config = InpaintTrainConfig(learning_rate=args.lr, batch_size=args.batch,
                                steps=args.steps, seed=args.seed)
    model, history = train_inpainter(dataset, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    history.write_csv(out.with_suffix(".csv"))
    print(f"saved {out}; final rec loss {history.rows[-1]['l_g_rec']:.6f}")
    return 0


def _oracle_mask_loader(image_path: str):
    def load(path: str) -> list[ObjectMask]:
        with open(path, encoding="utf-8") as f:
            entry = json.load(f)
        if "samples" in entry:  # corpus index: select by image filename
            name = Path(image_path).name
            matches = [s for s in entry["samples"] if s["image"] == name]
            if not matches:
                raise ValueError(f"{name} not listed in {path}")
            entry = matches[0]
        return [ObjectMask(i, m.get("label", f"object-{i}"), rle_to_mask(m["rle"]))
                for i, m in enumerate(entry["objects"])]
    return load


def _cmd_analyze(args) -> int:
    image = _load_or_exit("image", args.image, load_png)
    model = _load_or_exit("decomposer checkpoint", args.decomposer, DecomposerModel.load)
    if args.masks == "oracle":
        if not args.mask_file:
            print("oracle masks need --mask-file", file=sys.stderr)
            return 2
        masks = _load_or_exit("masks", args.mask_file, _oracle_mask_loader(args.image))
    else:
        masks = detect_objects(image, mode="heuristic")
    side = model.side
    scored_masks, scored = masks, image
    if image.shape[:2] != (side, side):
        from .scenes import resize_bilinear
        from .guidance import _resized_mask
        scored_masks = [ObjectMask(m.id, m.label, _resized_mask(m.mask, side)) for m in masks]
        scored = resize_bilinear(image, side, side)
    report = contribution(model, scored, scored_masks)
    body = report.to_json()
    for obj, mask in zip(body["objects"], masks):
        obj["mask_rle"] = mask_to_rle(mask.mask)
    payload = json.dumps(body, indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(payload)
    return 0


def _cmd_clean(args) -> int:
    image = _load_or_exit("image", args.image, load_png)
    model = _load_or_exit("inpainter checkpoint", args.inpainter, InpainterModel.load)
    with open(args.report, encoding="utf-8") as f:
        report = json.load(f)
    from .guidance import Session, SessionObject, clean as run_clean
    from .decomposer import ObjectContribution
    objects = []
    for o in report["objects"]:
        mask = rle_to_mask(o["mask_rle"]) if "mask_rle" in o else None
        if mask is None:
            print("report lacks mask_rle fields; re-run analyze on corpus data",
                  file=sys.stderr)
            return 1
        contrib = ObjectContribution(object_id=o["id"], label=o.get("label", ""),
                                     q=o["q"], beta=o.get("beta", 0.0),
                                     gamma=o.get("gamma", 0.0),
                                     s_aes_sub=o.get("s_aes_sub", 0.0),
                                     s_content_sub=o.get("s_content_sub", 0.0),
                                     is_clutter=o["is_clutter"])
        objects.append(SessionObject(id=o["id"], mask=ObjectMask(o["id"], contrib.label, mask),
                                     result=contrib))
    session = Session(id="cli", image=image, objects=objects)
    engine = Engine(inpainter=model)
    preview = run_clean(engine, session, args.fidelity)
    save_png(args.out, preview)
    print(f"wrote {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = []

    side, k = 16, 2
    graph = build_graph(side, k, with_loss=True)
    params = dc.init_params(graph, args.seed)
    inputs = {
        "image": rng.uniform(0.1, 0.9, (1, side, side, 3)).astype(np.float32),
        "k_const": np.float32(k),
        "lambda_aes": np.float32(1.0),
        "y_aes": rng.uniform(0.2, 0.8, (1, 1)).astype(np.float32),
        "y_content": rng.uniform(0.2, 0.8, (1, 1)).astype(np.float32),
    }
    from .decomposer import MASK_FEATURE_SIDE
    for i in range(k):
        inputs[f"sub_{i}"] = rng.uniform(0.1, 0.9, (1, side, side, 3)).astype(np.float32)
        inputs[f"mask_feat_{i}"] = rng.uniform(0, 1, (1, MASK_FEATURE_SIDE ** 2)).astype(np.float32)
    report = dc.grad_check(graph, inputs, params, "loss_total",
                           samples_per_param=args.samples, seed=args.seed)
    print("decomposer loss:")
    print(report.format())
    if not report.ok:
        failures.append("decomposer")

    from . import inpaint as ip
    igraph = build_train_graph()
    iparams = dc.init_params(igraph, args.seed)
    n, iside = 1, 16
    p = rng.uniform(0.1, 0.9, (n, iside, iside, 3)).astype(np.float32)
    maskf = ip.random_shape_mask(rng, iside, iside).astype(np.float32)[None, :, :, None]
    iinputs = {"p": p, "p_c": p * (1 - maskf), "mask": maskf, "inv_mask": 1 - maskf,
               "one": np.float32(1.0), "lambda_b": np.float32(ip.LAMBDA_B)}
    for loss in ("l_g", "l_d", "l_b"):
        report = dc.grad_check(igraph, iinputs, iparams, loss,
                               samples_per_param=args.samples, seed=args.seed)
        print(f"inpainter {loss}: ok={report.ok} worst={report.worst:.3e}")
        if not report.ok:
            failures.append(loss)

    if failures:
        print(f"FAILED: {', '.join(failures)}", file=sys.stderr)
        return 1
    print("all gradient checks passed")
    return 0


def _cmd_serve(args) -> int:
    from .server import serve
    serve(args.decomposer, args.inpainter, host=args.host, port=args.port,
          segmentation=args.masks)
    return 0


_COMMANDS = {
    "gen-scenes": _cmd_gen_scenes,
    "train-decomposer": _cmd_train_decomposer,
    "train-inpainter": _cmd_train_inpainter,
    "analyze": _cmd_analyze,
    "clean": _cmd_clean,
    "grad-check": _cmd_grad_check,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.subcommand](args)


if __name__ == "__main__":
    sys.exit(main())
