"""Session workflow: analyze a photo, suggest actions, flip labels, clean.

A Session owns one image plus the per-object analysis. Object classes can
be overridden by the user; the effective class is the override when set,
otherwise the sign test on the contribution. Cleaning inpaints the union
of effective-clutter masks and caches one preview per fidelity; any flip
invalidates the cache.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .decomposer import DecomposerModel, ObjectContribution, contribution
from .inpaint import (CAPTURE_MAX_ITERS, HIGH_MAX_ITERS, TOTAL_STRIDE,
                      InpainterModel, iterative_inpaint)
from .scenes import resize_bilinear, save_png
from .segmentation import ObjectMask, detect_objects, mask_to_rle

MARGIN_FRACTION = 0.05
BOUNDARY_SUGGESTIONS = ("zoom in",
                        "change orientation portrait→landscape",
                        "adjust camera angle")
INTERIOR_SUGGESTIONS = ("move the object out of the scene",
                        "remove via inpainting")
FIDELITY_ITERS = {"capture": CAPTURE_MAX_ITERS, "high": HIGH_MAX_ITERS}


@dataclass
class SessionObject:
    id: int
    mask: ObjectMask
    result: ObjectContribution
    override: bool | None = None

    @property
    def effective_clutter(self) -> bool:
        return self.result.is_clutter if self.override is None else self.override


@dataclass
class Session:
    id: str
    image: np.ndarray  # float32 [h, w, 3]
    objects: list[SessionObject]
    previews: dict[str, np.ndarray] = field(default_factory=dict)
    created_at: float = field(default_factory=time.time)

    def object(self, object_id: int) -> SessionObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(f"no object {object_id} in session {self.id}")


@dataclass
class Engine:
    """Models plus analysis options shared by the CLI and the service."""
    decomposer: DecomposerModel | None = None
    inpainter: InpainterModel | None = None
    segmentation: str = "heuristic"
    margin_fraction: float = MARGIN_FRACTION
    artifact_threshold: float = 0.5

    def __post_init__(self):
        if self.segmentation not in ("heuristic", "oracle"):
            raise ValueError(f"unknown segmentation mode {self.segmentation!r}")
        if not 0.0 <= self.margin_fraction < 0.5:
            raise ValueError(f"margin fraction {self.margin_fraction} out of range")


def _resized_mask(mask: np.ndarray, side: int) -> np.ndarray:
    h, w = mask.shape
    if (h, w) == (side, side):
        return mask.copy()
    soft = resize_bilinear(mask.astype(np.float32)[:, :, None], side, side)[:, :, 0]
    out = soft >= 0.5
    if not out.any():
        # tiny masks must survive the resize or the object scores as absent
        ys, xs = np.nonzero(mask)
        cy = int(round(ys.mean() * (side - 1) / max(h - 1, 1)))
        cx = int(round(xs.mean() * (side - 1) / max(w - 1, 1)))
        out[cy, cx] = True
    return out


def analyze(engine: Engine, image: np.ndarray,
            masks: Sequence[ObjectMask] | None = None,
            session_id: str | None = None) -> Session:
    """Build a session: detect objects, score them, classify clutter."""
    if engine.decomposer is None:
        raise ValueError("engine has no decomposer loaded")
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
    if masks is None:
        if engine.segmentation == "oracle":
            raise ValueError("oracle segmentation needs provided masks")
        masks = detect_objects(image, mode="heuristic")
    else:
        masks = detect_objects(image, mode="oracle", oracle_masks=list(masks))

    side = engine.decomposer.side
    scored = image if image.shape[:2] == (side, side) else resize_bilinear(image, side, side)
    scored_masks = [ObjectMask(m.id, m.label, _resized_mask(m.mask, side)) for m in masks]
    report = contribution(engine.decomposer, scored, scored_masks)

    objects = [SessionObject(id=m.id, mask=m, result=r)
               for m, r in zip(masks, report.objects)]
    return Session(id=session_id or uuid.uuid4().hex, image=image, objects=objects)


def suggestion_kind(session: Session, object_id: int,
                    margin_fraction: float = MARGIN_FRACTION) -> str:
    """"boundary" when the mask's box comes strictly within the margin of
    any image edge, else "interior"."""
    obj = session.object(object_id)
    h, w = session.image.shape[:2]
    y0, x0, y1, x1 = obj.mask.bbox()
    margin = margin_fraction * min(h, w)
    distance = min(y0, x0, h - 1 - y1, w - 1 - x1)
    return "boundary" if distance < margin else "interior"


def suggest(session: Session, object_id: int,
            margin_fraction: float = MARGIN_FRACTION) -> list[str]:
    kind = suggestion_kind(session, object_id, margin_fraction)
    return list(BOUNDARY_SUGGESTIONS if kind == "boundary" else INTERIOR_SUGGESTIONS)


def flip(session: Session, object_id: int) -> bool:
    """Negate the object's effective class; cached previews go stale."""
    obj = session.object(object_id)
    obj.override = not obj.effective_clutter
    session.previews.clear()
    return obj.effective_clutter


def clutter_mask(session: Session) -> np.ndarray:
    """Union of effective-clutter masks; all-False when nothing is clutter."""
    h, w = session.image.shape[:2]
    union = np.zeros((h, w), dtype=np.bool_)
    for obj in session.objects:
        if obj.effective_clutter:
            union |= obj.mask.mask
    return union


def _pad_to_stride(image: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, int, int]:
    h, w = image.shape[:2]
    ph = (-h) % TOTAL_STRIDE
    pw = (-w) % TOTAL_STRIDE
    if ph == 0 and pw == 0:
        return image, mask, 0, 0
    padded = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode="edge")
    pmask = np.pad(mask, ((0, ph), (0, pw)), mode="constant")
    return padded, pmask, ph, pw


def clean(engine: Engine, session: Session, fidelity: str = "capture") -> np.ndarray:
    """Inpaint the union clutter mask; cache the preview per fidelity."""
    if fidelity not in FIDELITY_ITERS:
        raise ValueError(f"unknown fidelity {fidelity!r}")
    if fidelity in session.previews:
        return session.previews[fidelity]
    mask = clutter_mask(session)
    if not mask.any():
        preview = session.image.copy()
    else:
        if engine.inpainter is None:
            raise ValueError("engine has no inpainter loaded")
        padded, pmask, ph, pw = _pad_to_stride(session.image, mask)
        filled, _ = iterative_inpaint(engine.inpainter, padded, pmask,
                                      max_iters=FIDELITY_ITERS[fidelity],
                                      threshold=engine.artifact_threshold)
        h, w = session.image.shape[:2]
        preview = filled[:h, :w]
    session.previews[fidelity] = preview
    return preview


def session_to_json(session: Session,
                    margin_fraction: float = MARGIN_FRACTION) -> dict:
    h, w = session.image.shape[:2]
    return {
        "id": session.id,
        "width": w,
        "height": h,
        "objects": [{
            "id": obj.id,
            "label": obj.result.label,
            "q": obj.result.q,
            "beta": obj.result.beta,
            "gamma": obj.result.gamma,
            "s_aes_sub": obj.result.s_aes_sub,
            "s_content_sub": obj.result.s_content_sub,
            "is_clutter": obj.effective_clutter,
            "overridden": obj.override is not None,
            "mask_rle": mask_to_rle(obj.mask.mask),
            "suggestions_kind": suggestion_kind(session, obj.id, margin_fraction),
        } for obj in session.objects],
        "previews": {fid: True for fid in session.previews},
    }


def save_session(session: Session, directory: str | Path) -> Path:
    """Persist session JSON plus image and preview PNGs."""
    directory = Path(directory) / session.id
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "session.json", "w", encoding="utf-8") as f:
        json.dump(session_to_json(session), f, indent=2)
    save_png(directory / "image.png", session.image)
    for fid, preview in session.previews.items():
        save_png(directory / f"preview_{fid}.png", preview)
    return directory
