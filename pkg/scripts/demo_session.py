"""End-to-end walkthrough: analyze a generated scene with trained models,
flip one object, clean at both fidelities, and save the session folder."""

import argparse

from declutter.decomposer import DecomposerModel
from declutter.guidance import Engine, analyze, clean, flip, save_session, suggest
from declutter.inpaint import InpainterModel
from declutter.scenes import generate_scene


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--decomposer", required=True)
    ap.add_argument("--inpainter", required=True)
    ap.add_argument("--scene-seed", type=int, default=10_000)
    ap.add_argument("--out", default="runs/demo_session")
    args = ap.parse_args()

    engine = Engine(decomposer=DecomposerModel.load(args.decomposer),
                    inpainter=InpainterModel.load(args.inpainter),
                    segmentation="oracle")
    scene = generate_scene(args.scene_seed)
    session = analyze(engine, scene.image, masks=scene.objects)

    print(f"session {session.id}: {len(session.objects)} objects")
    for obj in session.objects:
        marker = "clutter" if obj.effective_clutter else "normal "
        print(f"  [{obj.id}] {obj.result.label:12s} q={obj.result.q:+.4f} {marker}"
              f" suggestions: {suggest(session, obj.id)[0]}, ...")

    if session.objects:
        first = session.objects[0].id
        flipped = flip(session, first)
        print(f"flipped object {first} -> {'clutter' if flipped else 'normal'}")
        flip(session, first)  # and back

    for fidelity in ("capture", "high"):
        preview = clean(engine, session, fidelity)
        print(f"cleaned ({fidelity}): preview {preview.shape}")

    out = save_session(session, args.out)
    print(f"saved session to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
