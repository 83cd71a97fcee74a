"""Object masks, mask serialization, detection, and the blur operator.

Detection has two modes: "oracle" passes caller-supplied masks through
(synthetic corpora know their own objects), "heuristic" clusters colors and
extracts connected components, which stands in for a learned detector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

BLUR_KERNEL_SIZE = 13
BLUR_VARIANCE = 1.0
KMEANS_CLUSTERS = 4
MIN_COMPONENT_FRACTION = 0.005


@dataclass
class ObjectMask:
    """Binary mask for one detected object."""

    id: int
    label: str
    mask: np.ndarray  # bool [h, w]

    def validate(self, h: int, w: int) -> None:
        if self.mask.shape != (h, w):
            raise ValueError(f"object {self.id}: mask shape {self.mask.shape} != image {(h, w)}")
        if self.mask.dtype != np.bool_:
            raise ValueError(f"object {self.id}: mask dtype must be bool")
        if not self.mask.any():
            raise ValueError(f"object {self.id}: mask is empty")

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def bbox(self) -> tuple[int, int, int, int]:
        """(top, left, bottom, right), inclusive pixel coordinates."""
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


@dataclass
class SubImage:
    """Image copy with one object blurred out."""

    image: np.ndarray
    object_id: int


# ---------------------------------------------------------------------------
# run-length encoding: row-major, alternating runs, first run's value stated

def mask_to_rle(mask: np.ndarray) -> dict:
    flat = np.asarray(mask, dtype=np.uint8).ravel()
    if flat.size == 0:
        raise ValueError("cannot encode an empty array")
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds)
    return {
        "size": [int(mask.shape[0]), int(mask.shape[1])],
        "start": int(flat[0]),
        "runs": [int(r) for r in runs],
    }


def rle_to_mask(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    runs = rle["runs"]
    if sum(runs) != h * w:
        raise ValueError(f"run lengths sum to {sum(runs)}, expected {h * w}")
    flat = np.empty(h * w, dtype=np.bool_)
    value = bool(rle["start"])
    pos = 0
    for r in runs:
        flat[pos:pos + r] = value
        pos += r
        value = not value
    return flat.reshape(h, w)


# ---------------------------------------------------------------------------
# detection

def _kmeans(points: np.ndarray, k: int, seed: int = 0, iters: int = 25) -> np.ndarray:
    """Seeded k-means returning per-point cluster assignments."""
    rng = np.random.default_rng(seed)
    n = len(points)
    centers = points[rng.integers(n)][None, :].astype(np.float64)
    for _ in range(k - 1):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers = np.vstack([centers, points[idx]])
    for _ in range(iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for j in range(k):
            chosen = assign == j
            if chosen.any():
                centers[j] = points[chosen].mean(axis=0)
            else:
                # re-seed an empty cluster at the farthest point
                centers[j] = points[d2.min(axis=1).argmax()]
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def detect_objects(image: np.ndarray, mode: str = "heuristic",
                   oracle_masks: list[ObjectMask] | None = None) -> list[ObjectMask]:
    """Return object masks for an image.

    Oracle mode re-indexes and validates the provided masks.  Heuristic mode
    clusters RGB values (k-means, k=4), splits clusters into 4-connected
    components, drops the largest component as background, and keeps
    components covering at least 0.5% of the pixels.
    """
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ValueError(f"expected a nonempty HxWx3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    if mode == "oracle":
        if oracle_masks is None:
            raise ValueError("oracle mode requires oracle_masks")
        out = []
        for i, om in enumerate(oracle_masks):
            m = ObjectMask(i, om.label, np.asarray(om.mask, dtype=np.bool_))
            m.validate(h, w)
            out.append(m)
        return out
    if mode != "heuristic":
        raise ValueError(f"unknown detection mode {mode!r}")

    assign = _kmeans(image.reshape(-1, 3).astype(np.float64), KMEANS_CLUSTERS)
    label_map = assign.reshape(h, w)
    components: list[np.ndarray] = []
    for c in range(KMEANS_CLUSTERS):
        labeled, count = ndimage.label(label_map == c)  # default structure = 4-connectivity
        for i in range(1, count + 1):
            components.append(labeled == i)
    if not components:
        return []
    areas = [int(m.sum()) for m in components]
    background = int(np.argmax(areas))
    min_area = MIN_COMPONENT_FRACTION * h * w
    out = []
    for i, (m, a) in enumerate(zip(components, areas)):
        if i == background or a < min_area:
            continue
        out.append(ObjectMask(len(out), f"region-{len(out)}", m))
    return out


# ---------------------------------------------------------------------------
# blur

def gaussian_kernel1d(size: int = BLUR_KERNEL_SIZE, variance: float = BLUR_VARIANCE) -> np.ndarray:
    """Normalized 1-D Gaussian; the 2-D kernel is its separable product."""
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * variance))
    return (k / k.sum()).astype(np.float32)


def gaussian_blur(image: np.ndarray) -> np.ndarray:
    """Full-image separable Gaussian blur with reflected boundaries."""
    k = gaussian_kernel1d()
    out = np.asarray(image, dtype=np.float32)
    # "mirror" reflects without repeating the edge pixel
    out = ndimage.convolve1d(out, k, axis=0, mode="mirror")
    out = ndimage.convolve1d(out, k, axis=1, mode="mirror")
    return out


def blur_subimage(image: np.ndarray, obj: ObjectMask) -> SubImage:
    """Blur the whole image, then keep blurred pixels only inside the mask."""
    obj.validate(image.shape[0], image.shape[1])
    blurred = gaussian_blur(image)
    composed = np.where(obj.mask[:, :, None], blurred, np.asarray(image, dtype=np.float32))
    return SubImage(composed, obj.id)
