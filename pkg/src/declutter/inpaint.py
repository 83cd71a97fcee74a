"""Dual-branch inpainting GAN and the confidence-guided refill loop.

The generator maps a corrupted image (masked pixels zeroed, mask appended
as a fourth channel) to a full reconstruction plus a per-pixel artifact
map; a small discriminator scores composites.  Cleaning runs the generator
repeatedly, accepting only pixels the artifact branch trusts and shrinking
the mask to the rest, with forced acceptance on the last iteration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .scenes import Dataset, DatasetEntry, save_png

ENCODER_CHANNELS = (48, 48, 96, 96, 192, 192)
DECODER_CHANNELS = (192, 192, 96, 96, 48, 24, 3)
DISC_CHANNELS = (32, 64, 128, 128)
GEN_INPUT_CHANNELS = 4
TOTAL_STRIDE = 8  # encoder downsamples on even layers: 2 * 2 * 2
LAMBDA_B = 0.05
ARTIFACT_THRESHOLD = 0.5
CAPTURE_MAX_ITERS = 3
HIGH_MAX_ITERS = 10


@dataclass
class CorruptedImage:
    p_c: np.ndarray  # float32 [h, w, 3], masked pixels zeroed
    m_c: np.ndarray  # bool [h, w]


@dataclass
class InpaintState:
    """One round of the refill loop.

    remaining is always a subset of the original mask; iteration counts
    generator passes so far and never exceeds the loop's max_iters.
    """
    current: np.ndarray   # float32 [h, w, 3]
    remaining: np.ndarray  # bool [h, w]
    b: np.ndarray | None  # artifact map from the latest pass, None before it
    iteration: int


def corrupt(image: np.ndarray, mask: np.ndarray) -> CorruptedImage:
    """Zero out the masked region."""
    image = np.asarray(image, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.bool_)
    if image.ndim != 3 or image.shape[2] != 3 or mask.shape != image.shape[:2]:
        raise ValueError(f"image {image.shape} and mask {mask.shape} do not match")
    p_c = np.where(mask[:, :, None], np.float32(0.0), image)
    return CorruptedImage(p_c, mask)


def composite(p: np.ndarray, y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked pixels from y, everything else bit-identical to p."""
    return np.where(np.asarray(mask, dtype=np.bool_)[:, :, None], y, p)


# ---------------------------------------------------------------------------
# graphs

def _generator(g: dc.GraphBuilder, p_c: str, mask: str) -> tuple[str, str]:
    h = g.concat([p_c, mask], axis=3)
    c_in = GEN_INPUT_CHANNELS
    for i, c_out in enumerate(ENCODER_CHANNELS, 1):
        h = g.relu(g.conv_layer(h, f"gen.enc{i}", c_in, c_out, stride=2 if i % 2 == 0 else 1))
        c_in = c_out
    penultimate = None
    for i, c_out in enumerate(DECODER_CHANNELS, 1):
        stride = "half" if i in (2, 4, 6) else 1
        conv = g.conv_layer(h, f"gen.dec{i}", c_in, c_out, stride=stride)
        if i == len(DECODER_CHANNELS):
            y = g.sigmoid(conv)
        else:
            h = g.relu(conv)
            if i == len(DECODER_CHANNELS) - 1:
                penultimate = h
        c_in = c_out
    b = g.sigmoid(g.conv_layer(penultimate, "artifact.head", DECODER_CHANNELS[-2], 1))
    return y, b


def _discriminator(g: dc.GraphBuilder, img: str) -> str:
    h, c_in = img, 3
    for i, c_out in enumerate(DISC_CHANNELS, 1):
        h = g.relu(g.conv_layer(h, f"disc.conv{i}", c_in, c_out, stride=2))
        c_in = c_out
    h = g.mean(g.mean(h, axis=1), axis=1)  # global average pool keeps it side-agnostic
    return g.sigmoid(g.fc_layer(h, "disc.fc", DISC_CHANNELS[-1], 1))


def build_generator_graph() -> dc.Graph:
    g = dc.GraphBuilder()
    p_c = g.input("p_c")
    mask = g.input("mask")
    y, b = _generator(g, p_c, mask)
    g.output("y", y)
    g.output("b", b)
    return g.build()


def build_train_graph() -> dc.Graph:
    """Generator, composites, both discriminator passes, all three losses."""
    g = dc.GraphBuilder()
    p = g.input("p")
    p_c = g.input("p_c")
    mask = g.input("mask")
    inv_mask = g.input("inv_mask")
    one = g.input("one")
    lambda_b = g.input("lambda_b")

    y, b = _generator(g, p_c, mask)
    comp = g.add(g.multiply(p, inv_mask), g.multiply(y, mask))
    d_fake = _discriminator(g, comp)
    d_real = _discriminator(g, p)

    diff = g.abs(g.subtract(y, p))
    l_rec = g.mean(diff)
    l_adv = g.mean(g.subtract(one, d_fake))
    l_g = g.add(l_rec, l_adv)
    l_d = g.add(g.mean(g.subtract(one, d_real)), g.mean(g.add(one, d_fake)))
    l_b = g.add(g.mean(g.multiply(mask, g.multiply(g.subtract(one, b), diff))),
                g.multiply(lambda_b, g.mean(g.multiply(mask, b))))

    for name, node in [("y", y), ("b", b), ("comp", comp), ("d_real", d_real),
                       ("d_fake", d_fake), ("l_rec", l_rec), ("l_adv", l_adv),
                       ("l_g", l_g), ("l_d", l_d), ("l_b", l_b)]:
        g.output(name, node)
    return g.build()


class InpainterModel:
    """Generator, artifact branch, and discriminator parameters.

    Convolutional throughout, so one parameter set serves any input side
    divisible by the encoder stride.
    """

    def __init__(self, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self._graphs: dict[str, dc.Graph] = {}
        if params is None:
            params = dc.init_params(self.train_graph(), seed)
        self.params = params

    def generator_graph(self) -> dc.Graph:
        if "gen" not in self._graphs:
            self._graphs["gen"] = build_generator_graph()
        return self._graphs["gen"]

    def train_graph(self) -> dc.Graph:
        if "train" not in self._graphs:
            self._graphs["train"] = build_train_graph()
        return self._graphs["train"]

    def param_group(self, prefix: str) -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def save(self, path: str | Path) -> None:
        dc.save_checkpoint(path, self.params)

    @classmethod
    def load(cls, path: str | Path) -> "InpainterModel":
        return cls(params=dc.load_checkpoint(path))


def generate(model: InpainterModel, corrupted: CorruptedImage) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction y and artifact map b for one corrupted image."""
    h, w = corrupted.p_c.shape[:2]
    if h % TOTAL_STRIDE or w % TOTAL_STRIDE:
        raise ValueError(f"input side {(h, w)} not divisible by encoder stride {TOTAL_STRIDE}")
    inputs = {"p_c": corrupted.p_c[None],
              "mask": corrupted.m_c.astype(np.float32)[None, :, :, None]}
    fwd = dc.forward(model.generator_graph(), inputs, model.params)
    return fwd.output("y")[0], fwd.output("b")[0, :, :, 0]


def iterative_inpaint(model: InpainterModel, image: np.ndarray, mask: np.ndarray,
                      max_iters: int, threshold: float = ARTIFACT_THRESHOLD,
                      debug_dir: str | Path | None = None) -> tuple[np.ndarray, int]:
    """Confidence-guided refill.

    Each iteration regenerates the remaining region, composites in the
    pixels whose artifact score is at or below the threshold, and keeps the
    rest for the next round; the final iteration accepts everything left.
    Pixels outside the original mask are never touched.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be at least 1, got {max_iters}")
    image = np.asarray(image, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.bool_)
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {image.shape}")
    state = InpaintState(current=image.copy(), remaining=mask.copy(), b=None, iteration=0)
    while state.remaining.any() and state.iteration < max_iters:
        y, b = generate(model, corrupt(state.current, state.remaining))
        final = state.iteration + 1 == max_iters
        accept = state.remaining.copy() if final else state.remaining & (b <= threshold)
        state = InpaintState(
            current=np.where(accept[:, :, None], y, state.current),
            remaining=state.remaining & ~accept,
            b=b,
            iteration=state.iteration + 1,
        )
        if debug_dir is not None:
            d = Path(debug_dir)
            d.mkdir(parents=True, exist_ok=True)
            save_png(d / f"iter{state.iteration}_y.png", y)
            save_png(d / f"iter{state.iteration}_b.png", np.repeat(b[:, :, None], 3, axis=2))
            save_png(d / f"iter{state.iteration}_remaining.png",
                     np.repeat(state.remaining[:, :, None].astype(np.float32), 3, axis=2))
    return state.current, state.iteration


# ---------------------------------------------------------------------------
# training masks

def random_stroke_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Free-form stroke: 5..12 connected segments, 2..6 px wide."""
    n_segments = int(rng.integers(5, 13))
    width = float(rng.integers(2, 7))
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    mask = np.zeros((h, w), dtype=np.bool_)
    y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
    for _ in range(n_segments):
        angle = rng.uniform(0, 2 * math.pi)
        length = rng.uniform(min(h, w) / 8, min(h, w) / 2)
        y1 = float(np.clip(y0 + length * math.sin(angle), 0, h - 1))
        x1 = float(np.clip(x0 + length * math.cos(angle), 0, w - 1))
        dy, dx = y1 - y0, x1 - x0
        seg2 = dy * dy + dx * dx
        if seg2 < 1e-12:
            t = np.zeros_like(yy)
        else:
            t = np.clip(((yy - y0) * dy + (xx - x0) * dx) / seg2, 0.0, 1.0)
        dist2 = (yy - (y0 + t * dy)) ** 2 + (xx - (x0 + t * dx)) ** 2
        mask |= dist2 <= (width / 2.0) ** 2
        y0, x0 = y1, x1
    return mask


def random_shape_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Object-shaped hole for corpora without mask annotations."""
    ry = rng.uniform(h / 10, h / 4)
    rx = rng.uniform(w / 10, w / 4)
    cy = rng.uniform(ry, h - 1 - ry)
    cx = rng.uniform(rx, w - 1 - rx)
    yy, xx = np.mgrid[:h, :w]
    if rng.uniform() < 0.5:
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def sample_training_mask(rng: np.random.Generator, entry: DatasetEntry,
                         h: int, w: int) -> np.ndarray:
    """50/50 object masks and random strokes; strokes only when the sample
    carries no annotations."""
    if entry.masks and rng.uniform() < 0.5:
        return entry.masks[int(rng.integers(len(entry.masks)))].mask.copy()
    return random_stroke_mask(rng, h, w)


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class InpaintTrainConfig:
    # default batch sized for CPU runs; pass 64 to reproduce full-scale training
    learning_rate: float = 1e-4
    batch_size: int = 16
    steps: int = 2000
    lambda_b: float = LAMBDA_B
    clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.steps < 1:
            raise ValueError("learning_rate, batch_size, steps must be positive")


@dataclass
class InpaintHistory:
    rows: list[dict] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["step", "l_g_rec", "l_g_adv", "l_d", "l_b"])
            writer.writeheader()
            writer.writerows(self.rows)


def train_inpainter(dataset: Dataset | Sequence[DatasetEntry],
                    config: InpaintTrainConfig = InpaintTrainConfig()
                    ) -> tuple[InpainterModel, InpaintHistory]:
    """Alternating updates from a shared forward pass per step.

    The discriminator descends its own loss, the generator trunk descends
    reconstruction plus adversarial loss, and the artifact branch descends
    its confidence loss; each group has its own Adam state.
    """
    entries = list(dataset.entries if isinstance(dataset, Dataset) else dataset)
    if not entries:
        raise ValueError("empty dataset")
    h, w = entries[0].image.shape[:2]
    if h % TOTAL_STRIDE or w % TOTAL_STRIDE:
        raise ValueError(f"image side {(h, w)} not divisible by encoder stride {TOTAL_STRIDE}")
    for i, e in enumerate(entries):
        if e.image.shape != (h, w, 3):
            raise ValueError(f"sample {i}: shape {e.image.shape}, expected {(h, w, 3)}")

    rng = np.random.default_rng(config.seed)
    model = InpainterModel(seed=config.seed)
    graph = model.train_graph()
    groups = {prefix: model.param_group(prefix) for prefix in ("gen.", "disc.", "artifact.")}
    opts = {prefix: dc.init_optim({n: model.params[n] for n in names}, config.learning_rate,
                                  clip_norm=config.clip_norm)
            for prefix, names in groups.items()}

    history = InpaintHistory()
    one = np.float32(1.0)
    lam = np.float32(config.lambda_b)
    for step in range(1, config.steps + 1):
        idxs = rng.integers(0, len(entries), size=config.batch_size)
        p = np.stack([entries[i].image for i in idxs])
        masks = np.stack([sample_training_mask(rng, entries[i], h, w) for i in idxs])
        maskf = masks.astype(np.float32)[:, :, :, None]
        inputs = {
            "p": p,
            "p_c": p * (1.0 - maskf),
            "mask": maskf,
            "inv_mask": 1.0 - maskf,
            "one": one,
            "lambda_b": lam,
        }
        fwd = dc.forward(graph, inputs, model.params)
        losses = {name: float(fwd.output(name)) for name in ("l_rec", "l_adv", "l_g", "l_d", "l_b")}
        if not all(np.isfinite(v) for v in losses.values()):
            raise dc.OptimError(f"non-finite training loss at step {step}: {losses}")
        for prefix, loss_name in (("disc.", "l_d"), ("gen.", "l_g"), ("artifact.", "l_b")):
            names = groups[prefix]
            grads = dc.backward(graph, fwd, loss_name, wrt=names)
            subset = {n: model.params[n] for n in names}
            updated, _ = dc.adam_step(subset, grads, opts[prefix])
            model.params.update(updated)
        history.rows.append({"step": step, "l_g_rec": losses["l_rec"],
                             "l_g_adv": losses["l_adv"], "l_d": losses["l_d"],
                             "l_b": losses["l_b"]})
    return model, history


def masked_l1(model: InpainterModel, images: Sequence[np.ndarray],
              masks: Sequence[np.ndarray]) -> float:
    """Mean absolute reconstruction error inside the masks."""
    total, count = 0.0, 0
    for image, mask in zip(images, masks):
        y, _ = generate(model, corrupt(image, mask))
        sel = np.asarray(mask, dtype=np.bool_)
        total += float(np.abs(y - image)[sel].sum())
        count += int(sel.sum()) * image.shape[2]
    return total / max(count, 1)
