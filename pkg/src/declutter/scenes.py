"""Synthetic scene corpus with planted clutter, plus dataset ingestion.

A scene is a smooth two-color background, one large color-harmonious
subject, and up to four small saturated clutter shapes.  Ground-truth
scores follow fixed rules of the clutter count and covered area, so a
trained model's per-object attributions can be checked against the plant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .segmentation import ObjectMask, gaussian_blur, mask_to_rle, rle_to_mask


@dataclass(frozen=True)
class SceneConfig:
    side: int = 64
    max_clutter: int = 4
    max_decoys: int = 2
    noise_amplitude: float = 0.02
    subject_fraction: tuple[float, float] = (0.08, 0.20)  # of image area
    clutter_extent: tuple[int, int] = (2, 4)  # half-extent range in pixels
    placement_attempts: int = 100

    def __post_init__(self):
        if self.side < 16:
            raise ValueError(f"side must be at least 16, got {self.side}")
        if self.max_clutter < 0:
            raise ValueError("max_clutter must be nonnegative")


@dataclass
class SceneSample:
    image: np.ndarray  # float32 [side, side, 3] in [0, 1]
    objects: list[ObjectMask]
    is_clutter: list[bool]
    y_aes: float
    y_content: float
    seed: int


# ---------------------------------------------------------------------------
# color and shape helpers

def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    h = h % 1.0
    i = int(h * 6.0) % 6
    f = h * 6.0 - math.floor(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.array(rgb, dtype=np.float32)


def _shape_mask(side: int, kind: str, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.ogrid[:side, :side]
    if kind == "rect":
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _background(rng: np.random.Generator, side: int, hue: float, amplitude: float) -> np.ndarray:
    c0 = _hsv_to_rgb(hue + rng.uniform(-0.03, 0.03), rng.uniform(0.10, 0.30), rng.uniform(0.55, 0.90))
    c1 = _hsv_to_rgb(hue + rng.uniform(-0.03, 0.03), rng.uniform(0.10, 0.30), rng.uniform(0.55, 0.90))
    theta = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[:side, :side].astype(np.float32)
    t = xx * math.cos(theta) + yy * math.sin(theta)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-6)
    img = c0[None, None, :] * (1.0 - t[:, :, None]) + c1[None, None, :] * t[:, :, None]
    img += rng.uniform(-amplitude, amplitude, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# generation

def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> SceneSample:
    """Deterministic scene for a seed: background, subject, 0..max clutter.

    Clutter placement rejection-samples for disjoint masks; after 100 failed
    attempts for a shape the scene simply carries fewer clutter objects.
    """
    rng = np.random.default_rng(seed)
    side = config.side
    base_hue = rng.uniform(0.0, 1.0)
    image = _background(rng, side, base_hue, config.noise_amplitude)

    masks: list[np.ndarray] = []
    labels: list[str] = []
    clutter_flags: list[bool] = []

    # subject: large, hue-adjacent to the background
    frac = rng.uniform(*config.subject_fraction)
    area = frac * side * side
    aspect = rng.uniform(0.6, 1.6)
    ry = math.sqrt(area * aspect) / 2.0
    rx = math.sqrt(area / aspect) / 2.0
    kind = "rect" if rng.uniform() < 0.5 else "ellipse"
    cy = rng.uniform(ry + 1, side - ry - 1)
    cx = rng.uniform(rx + 1, side - rx - 1)
    subject_mask = _shape_mask(side, kind, cy, cx, ry, rx)
    subject_color = _hsv_to_rgb(base_hue + rng.uniform(-0.07, 0.07),
                                rng.uniform(0.30, 0.55), rng.uniform(0.35, 0.85))
    image = np.where(subject_mask[:, :, None], subject_color[None, None, :], image)
    masks.append(subject_mask)
    labels.append("subject")
    clutter_flags.append(False)

    # clutter: small checkerboard-textured blobs, saturated against dark.
    # the 1 px pattern is exactly what the removal blur destroys, so a
    # blurred-out blob looks nothing like a present one
    checker = (np.add.outer(np.arange(side), np.arange(side)) % 2).astype(bool)

    def sample_blob(avoid: list[np.ndarray]) -> np.ndarray | None:
        for _ in range(config.placement_attempts):
            ry = rng.uniform(config.clutter_extent[0], config.clutter_extent[1])
            rx = rng.uniform(config.clutter_extent[0], config.clutter_extent[1])
            kind = "rect" if rng.uniform() < 0.5 else "ellipse"
            cy = rng.uniform(ry + 1, side - ry - 1)
            cx = rng.uniform(rx + 1, side - rx - 1)
            m = _shape_mask(side, kind, cy, cx, ry, rx)
            if m.any() and not any((m & prev).any() for prev in avoid):
                return m
        return None

    def paint_blob(img: np.ndarray, m: np.ndarray) -> np.ndarray:
        hi = _hsv_to_rgb(base_hue + 0.5 + rng.uniform(-0.12, 0.12),
                         rng.uniform(0.85, 1.0), rng.uniform(0.80, 1.0))
        lo = np.full(3, rng.uniform(0.02, 0.15), dtype=np.float32)
        img = np.where((m & checker)[:, :, None], hi[None, None, :], img)
        return np.where((m & ~checker)[:, :, None], lo[None, None, :], img)

    n_wanted = int(rng.integers(0, config.max_clutter + 1))
    placed = 0
    for _ in range(n_wanted):
        m = sample_blob(masks)
        if m is None:
            continue
        image = paint_blob(image, m)
        masks.append(m)
        labels.append(f"clutter-{placed + 1}")
        clutter_flags.append(True)
        placed += 1

    # decoys: blobs blurred in place that do not count toward the labels,
    # anchoring "blurred blob" to "no penalty" for the scorer
    decoys: list[np.ndarray] = []
    for _ in range(int(rng.integers(0, config.max_decoys + 1))):
        m = sample_blob(masks + decoys)
        if m is None:
            continue
        image = paint_blob(image, m)
        decoys.append(m)
    if decoys:
        soft = gaussian_blur(image)
        union = np.logical_or.reduce(decoys)
        image = np.where(union[:, :, None], soft, image)

    clutter_area = sum(int(m.sum()) for m, c in zip(masks, clutter_flags) if c)
    caf = clutter_area / (side * side)
    y_aes = float(np.clip(0.9 - 0.15 * placed - 0.5 * caf, 0.0, 1.0))
    y_content = float(np.clip(0.5 + 0.3 - 0.2 * caf, 0.0, 1.0))  # subject always present

    objects = [ObjectMask(i, lab, m) for i, (lab, m) in enumerate(zip(labels, masks))]
    return SceneSample(image.astype(np.float32), objects, clutter_flags, y_aes, y_content, seed)


def generate_texture(seed: int, side: int = 32) -> np.ndarray:
    """Smooth bright field for inpainter corpora: gradient plus soft blobs.

    The palette stays well above mid-gray so reconstruction progress is
    visible against an untrained model, which outputs mid-gray.
    """
    rng = np.random.default_rng(seed)
    c0 = _hsv_to_rgb(rng.uniform(0, 1), rng.uniform(0.05, 0.35), rng.uniform(0.70, 0.95))
    c1 = _hsv_to_rgb(rng.uniform(0, 1), rng.uniform(0.05, 0.35), rng.uniform(0.70, 0.95))
    theta = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[:side, :side].astype(np.float32)
    t = xx * math.cos(theta) + yy * math.sin(theta)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-6)
    img = c0[None, None, :] * (1.0 - t[:, :, None]) + c1[None, None, :] * t[:, :, None]
    img += rng.uniform(-0.01, 0.01, size=img.shape).astype(np.float32)
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, side, size=2)
        radius = rng.uniform(side * 0.15, side * 0.45)
        weight = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius ** 2)))
        color = _hsv_to_rgb(rng.uniform(0, 1), rng.uniform(0.1, 0.5), rng.uniform(0.55, 0.95))
        img = img * (1.0 - 0.6 * weight[:, :, None]) + 0.6 * weight[:, :, None] * color[None, None, :]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# resizing and image I/O

def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize; exact identity at equal size."""
    if image.ndim != 3 or image.size == 0:
        raise ValueError(f"expected a nonempty HxWxC image, got shape {image.shape}")
    h, w = image.shape[:2]
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size {(out_h, out_w)}")
    img = np.asarray(image, dtype=np.float32)
    if (h, w) == (out_h, out_w):
        return img.copy()

    def grid(n_in: int, n_out: int) -> np.ndarray:
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=np.float64)
        return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))

    ys, xs = grid(h, out_h), grid(w, out_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def preprocess(image: np.ndarray, side: int) -> np.ndarray:
    """Resize to the model's square input side."""
    return resize_bilinear(image, side, side)


def save_png(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image, dtype=np.float32) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / np.float32(255.0)


def decode_png_bytes(data: bytes) -> np.ndarray:
    import io
    try:
        with Image.open(io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except UnidentifiedImageError as e:
        raise ValueError("not a decodable image") from e
    return arr / np.float32(255.0)


def encode_png_bytes(image: np.ndarray) -> bytes:
    import io
    arr = np.clip(np.rint(np.asarray(image, dtype=np.float32) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# datasets

class ManifestError(ValueError):
    pass


@dataclass
class DatasetEntry:
    image: np.ndarray
    y_aes: float
    y_content: float
    masks: list[ObjectMask] | None = None
    is_clutter: list[bool] | None = None
    path: str | None = None
    split: str = "train"


@dataclass
class Dataset:
    entries: list[DatasetEntry]
    missing: list[str] = field(default_factory=list)

    def split(self, tag: str) -> list[DatasetEntry]:
        return [e for e in self.entries if e.split == tag]

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path: str | Path) -> Dataset:
    """Tab-separated rows: image_path, y_aes, y_content.

    Score columns whose values stray outside [0, 1] are min-max normalized.
    Rows whose image file is missing are dropped and reported in
    ``Dataset.missing``.
    """
    path = Path(path)
    rows: list[tuple[str, float, float]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            rows.append((parts[0], float(parts[1]), float(parts[2])))
        except ValueError as e:
            raise ManifestError(f"line {lineno}: {e}") from e

    def normalize(values: list[float]) -> list[float]:
        lo, hi = min(values), max(values)
        if lo >= 0.0 and hi <= 1.0:
            return values
        if hi == lo:
            return [0.0 for _ in values]
        return [(v - lo) / (hi - lo) for v in values]

    if rows:
        aes = normalize([r[1] for r in rows])
        content = normalize([r[2] for r in rows])
    else:
        aes, content = [], []

    entries, missing = [], []
    for (rel, _, _), ya, yc in zip(rows, aes, content):
        img_path = (path.parent / rel) if not Path(rel).is_absolute() else Path(rel)
        if not img_path.exists():
            missing.append(str(img_path))
            continue
        entries.append(DatasetEntry(load_png(img_path), ya, yc, path=str(img_path)))
    return Dataset(entries, missing)


def scenes_to_dataset(samples: list[SceneSample]) -> Dataset:
    entries = [DatasetEntry(s.image, s.y_aes, s.y_content, masks=s.objects,
                            is_clutter=s.is_clutter) for s in samples]
    return Dataset(entries)


def save_corpus(directory: str | Path, samples: list[SceneSample]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"side": int(samples[0].image.shape[0]) if samples else 0, "samples": []}
    for i, s in enumerate(samples):
        name = f"scene_{i:05d}.png"
        save_png(directory / name, s.image)
        index["samples"].append({
            "image": name,
            "seed": int(s.seed),
            "y_aes": float(s.y_aes),
            "y_content": float(s.y_content),
            "objects": [{
                "label": o.label,
                "is_clutter": bool(c),
                "rle": mask_to_rle(o.mask),
            } for o, c in zip(s.objects, s.is_clutter)],
        })
    (directory / "index.json").write_text(json.dumps(index, indent=1), encoding="utf-8")


def load_corpus(directory: str | Path) -> Dataset:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    entries = []
    for rec in index["samples"]:
        image = load_png(directory / rec["image"])
        masks = [ObjectMask(i, o["label"], rle_to_mask(o["rle"]))
                 for i, o in enumerate(rec["objects"])]
        flags = [bool(o["is_clutter"]) for o in rec["objects"]]
        entries.append(DatasetEntry(image, float(rec["y_aes"]), float(rec["y_content"]),
                                    masks=masks, is_clutter=flags, path=rec["image"]))
    return Dataset(entries)
