"""Per-object score decomposition.

Every object's sub-image (the image with that object blurred) is scored by a
shared CNN; a mixing network conditioned on the full image and the object
masks produces one softmax weight vector per score head.  The weighted sum
of sub-scores is the overall prediction, and an object's contribution is
how much the overall score falls short of its own sub-score, scaled by its
weights: negative contribution marks clutter.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .scenes import Dataset, DatasetEntry
from .segmentation import ObjectMask, blur_subimage, gaussian_blur

FEAT_CHANNELS = (16, 32, 64, 64)
SCORE_HIDDEN = 64
MIX_HIDDEN = 128
MASK_FEATURE_SIDE = 8


@dataclass(frozen=True)
class ScorePair:
    s_aes: float
    s_content: float


@dataclass(frozen=True)
class WeightVectors:
    beta: np.ndarray  # [k], nonnegative, sums to 1
    gamma: np.ndarray


@dataclass
class ObjectContribution:
    object_id: int
    label: str
    q: float
    beta: float
    gamma: float
    s_aes_sub: float
    s_content_sub: float
    is_clutter: bool


@dataclass
class ContributionReport:
    objects: list[ObjectContribution]
    overall: ScorePair | None

    def to_json(self) -> dict:
        return {
            "objects": [{
                "id": o.object_id,
                "label": o.label,
                "q": o.q,
                "beta": o.beta,
                "gamma": o.gamma,
                "s_aes_sub": o.s_aes_sub,
                "s_content_sub": o.s_content_sub,
                "is_clutter": o.is_clutter,
            } for o in self.objects],
            "overall": None if self.overall is None else {
                "s_aes": self.overall.s_aes, "s_content": self.overall.s_content,
            },
        }


@dataclass(frozen=True)
class TrainConfig:
    lambda_aes: float = 1.0
    learning_rate: float = 4e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 15
    clip_norm: float = 5.0
    val_fraction: float = 0.1
    side: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size, max_epochs must be positive")
        if self.patience < 0:
            raise ValueError(f"patience must be nonnegative, got {self.patience}")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


def classify_clutter(q: float) -> bool:
    """Strictly negative contribution marks clutter; zero is normal."""
    return q < 0.0


def predict_overall(sub_scores: Sequence[ScorePair], weights: WeightVectors) -> ScorePair:
    """Plain weighted sum of sub-scores, the decomposed overall prediction."""
    if len(sub_scores) != len(weights.beta) or len(sub_scores) != len(weights.gamma):
        raise ValueError("sub-score and weight lengths differ")
    s_aes = sum(float(b) * s.s_aes for b, s in zip(weights.beta, sub_scores))
    s_content = sum(float(g) * s.s_content for g, s in zip(weights.gamma, sub_scores))
    return ScorePair(float(s_aes), float(s_content))


# ---------------------------------------------------------------------------
# graph construction

def _extractor(g: dc.GraphBuilder, x: str) -> str:
    h, c_in = x, 3
    for i, c_out in enumerate(FEAT_CHANNELS, 1):
        h = g.relu(g.conv_layer(h, f"feat.conv{i}", c_in, c_out, stride=2))
        c_in = c_out
    return h


def _score_pair(g: dc.GraphBuilder, feat_map: str, feat_dim: int) -> tuple[str, str]:
    h = g.relu(g.conv_layer(feat_map, "score.conv1", FEAT_CHANNELS[-1], FEAT_CHANNELS[-1]))
    h = g.relu(g.conv_layer(h, "score.conv2", FEAT_CHANNELS[-1], FEAT_CHANNELS[-1]))
    h = g.flatten(h)

    def head(prefix: str) -> str:
        a = g.relu(g.fc_layer(h, f"{prefix}.fc1", feat_dim, SCORE_HIDDEN))
        return g.sigmoid(g.fc_layer(a, f"{prefix}.fc2", SCORE_HIDDEN, 1))

    return head("score.aes"), head("score.content")


def _mix_logits(g: dc.GraphBuilder, image_feat: str, mask_feat: str, feat_dim: int) -> tuple[str, str]:
    x = g.concat([image_feat, mask_feat], axis=1)
    h = g.relu(g.fc_layer(x, "mix.fc1", feat_dim + MASK_FEATURE_SIDE ** 2, MIX_HIDDEN))
    return g.fc_layer(h, "mix.beta", MIX_HIDDEN, 1), g.fc_layer(h, "mix.gamma", MIX_HIDDEN, 1)


def build_graph(side: int, k: int, with_loss: bool) -> dc.Graph:
    """Decomposition graph for k objects; batch size is free at run time.

    Inputs: image, sub_0..sub_{k-1}, mask_feat_0..k-1, k_const; with loss
    also y_aes, y_content, lambda_aes.
    """
    if k < 1:
        raise ValueError(f"graph needs k >= 1, got {k}")
    feat_dim = (side // 16) ** 2 * FEAT_CHANNELS[-1]
    g = dc.GraphBuilder()
    image = g.input("image")
    subs = [g.input(f"sub_{j}") for j in range(k)]
    mask_feats = [g.input(f"mask_feat_{j}") for j in range(k)]
    k_const = g.input("k_const")

    image_feat = g.flatten(_extractor(g, image))
    s_aes_list, s_content_list, lb_list, lg_list = [], [], [], []
    for j in range(k):
        sa, sc = _score_pair(g, _extractor(g, subs[j]), feat_dim)
        lb, lg = _mix_logits(g, image_feat, mask_feats[j], feat_dim)
        s_aes_list.append(sa)
        s_content_list.append(sc)
        lb_list.append(lb)
        lg_list.append(lg)

    beta = g.softmax(g.concat(lb_list, axis=1), axis=1)
    gamma = g.softmax(g.concat(lg_list, axis=1), axis=1)
    s_aes_cat = g.concat(s_aes_list, axis=1)
    s_content_cat = g.concat(s_content_list, axis=1)
    # row sum expressed as mean * k, so the reduction stays permutation-exact
    s_aes = g.multiply(g.mean(g.multiply(beta, s_aes_cat), axis=1), k_const)
    s_content = g.multiply(g.mean(g.multiply(gamma, s_content_cat), axis=1), k_const)

    g.output("beta", beta)
    g.output("gamma", gamma)
    g.output("s_aes_sub", s_aes_cat)
    g.output("s_content_sub", s_content_cat)
    g.output("s_aes", s_aes)
    g.output("s_content", s_content)

    if with_loss:
        y_aes = g.input("y_aes")
        y_content = g.input("y_content")
        lam = g.input("lambda_aes")
        l_aes = g.mean(g.square(g.subtract(y_aes, s_aes)))
        l_content = g.mean(g.square(g.subtract(y_content, s_content)))
        g.output("loss_aes", l_aes)
        g.output("loss_content", l_content)
        g.output("loss_total", g.add(g.multiply(lam, l_aes), l_content))
    return g.build()


def build_score_graph(side: int) -> dc.Graph:
    """Single sub-image scoring path, no mixing."""
    feat_dim = (side // 16) ** 2 * FEAT_CHANNELS[-1]
    g = dc.GraphBuilder()
    sub = g.input("sub")
    sa, sc = _score_pair(g, _extractor(g, sub), feat_dim)
    g.output("s_aes", sa)
    g.output("s_content", sc)
    return g.build()


def _mask_feature(mask: np.ndarray, side: int) -> np.ndarray:
    """Block-mean downsample of a mask to the mixing-net grid, flattened."""
    f = MASK_FEATURE_SIDE
    m = mask.astype(np.float32).reshape(f, side // f, f, side // f)
    return m.mean(axis=(1, 3)).reshape(-1)


class DecomposerModel:
    """Parameters plus cached graphs for each object count."""

    def __init__(self, side: int = 64, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        if side % 16 != 0:
            raise ValueError(f"model side must be divisible by 16, got {side}")
        self.side = side
        self._graphs: dict[tuple, dc.Graph] = {}
        if params is None:
            params = dc.init_params(self.graph(1, with_loss=False), seed)
        self.params = params

    def graph(self, k: int, with_loss: bool) -> dc.Graph:
        key = (k, with_loss)
        if key not in self._graphs:
            self._graphs[key] = build_graph(self.side, k, with_loss)
        return self._graphs[key]

    def score_graph(self) -> dc.Graph:
        if "score" not in self._graphs:
            self._graphs["score"] = build_score_graph(self.side)
        return self._graphs["score"]

    def save(self, path: str | Path) -> None:
        tensors = dict(self.params)
        tensors["meta.side"] = np.float32(self.side)
        dc.save_checkpoint(path, tensors)

    @classmethod
    def load(cls, path: str | Path) -> "DecomposerModel":
        tensors = dc.load_checkpoint(path)
        side = int(tensors.pop("meta.side", np.float32(64)))
        return cls(side=side, params=tensors)


# ---------------------------------------------------------------------------
# inference

def score_subimage(model: DecomposerModel, sub: np.ndarray) -> ScorePair:
    """Score one preprocessed sub-image."""
    if sub.shape != (model.side, model.side, 3):
        raise ValueError(f"sub-image shape {sub.shape}, expected {(model.side, model.side, 3)}")
    fwd = dc.forward(model.score_graph(), {"sub": sub[None]}, model.params)
    return ScorePair(float(fwd.output("s_aes")[0, 0]), float(fwd.output("s_content")[0, 0]))


def _decomposition_inputs(model: DecomposerModel, image: np.ndarray,
                          masks: Sequence[ObjectMask]) -> dict[str, np.ndarray]:
    blurred = gaussian_blur(image)
    inputs = {"image": image[None], "k_const": np.float32(len(masks))}
    for j, m in enumerate(masks):
        m.validate(model.side, model.side)
        inputs[f"sub_{j}"] = np.where(m.mask[:, :, None], blurred, image)[None]
        inputs[f"mask_feat_{j}"] = _mask_feature(m.mask, model.side)[None]
    return inputs


def mix_weights(model: DecomposerModel, image: np.ndarray,
                masks: Sequence[ObjectMask]) -> WeightVectors:
    if len(masks) < 1:
        raise ValueError("mix_weights needs at least one object")
    fwd = dc.forward(model.graph(len(masks), with_loss=False),
                     _decomposition_inputs(model, image, masks), model.params)
    return WeightVectors(fwd.output("beta")[0].copy(), fwd.output("gamma")[0].copy())


def contribution(model: DecomposerModel, image: np.ndarray,
                 masks: Sequence[ObjectMask]) -> ContributionReport:
    """Decompose the image score over its objects.

    Contribution q_i pairs each object's weights with the gap between the
    overall decomposed prediction and that object's sub-scores; with a
    single object the decomposition collapses and q is exactly zero.
    """
    if image.shape != (model.side, model.side, 3):
        raise ValueError(f"image shape {image.shape}, expected {(model.side, model.side, 3)}")
    if len(masks) == 0:
        return ContributionReport([], None)
    fwd = dc.forward(model.graph(len(masks), with_loss=False),
                     _decomposition_inputs(model, image, masks), model.params)
    beta = fwd.output("beta")[0]
    gamma = fwd.output("gamma")[0]
    s_aes_sub = fwd.output("s_aes_sub")[0]
    s_content_sub = fwd.output("s_content_sub")[0]
    s_aes = float(fwd.output("s_aes")[0])
    s_content = float(fwd.output("s_content")[0])
    objects = []
    for j, m in enumerate(masks):
        q = float(beta[j]) * (s_aes - float(s_aes_sub[j])) \
            + float(gamma[j]) * (s_content - float(s_content_sub[j]))
        objects.append(ObjectContribution(m.id, m.label, q, float(beta[j]), float(gamma[j]),
                                          float(s_aes_sub[j]), float(s_content_sub[j]),
                                          classify_clutter(q)))
    return ContributionReport(objects, ScorePair(s_aes, s_content))


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    val_rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["step", "epoch", "l_aes", "l_content", "total"])
            writer.writeheader()
            writer.writerows(self.rows)


def _prepare_entries(dataset: Dataset | Sequence[DatasetEntry], side: int) -> list[DatasetEntry]:
    entries = list(dataset.entries if isinstance(dataset, Dataset) else dataset)
    if not entries:
        raise ValueError("empty dataset")
    for i, e in enumerate(entries):
        if e.masks is None or len(e.masks) == 0:
            raise ValueError(f"sample {i}: object masks required for decomposition training")
        if e.y_aes is None or e.y_content is None:
            raise ValueError(f"sample {i}: both score labels required")
        if e.image.shape != (side, side, 3):
            raise ValueError(f"sample {i}: image shape {e.image.shape}, expected {(side, side, 3)}")
    return entries


def train_decomposer(dataset: Dataset | Sequence[DatasetEntry],
                     config: TrainConfig = TrainConfig()) -> tuple[DecomposerModel, TrainHistory]:
    """Adam training with early stopping on held-out total loss.

    The validation split is carved from the data by seed.  Batches group
    samples with equal object counts so each batch runs one static graph.
    Returns the parameters from the best validation epoch.
    """
    entries = _prepare_entries(dataset, config.side)
    rng = np.random.default_rng(config.seed)

    n = len(entries)
    perm = rng.permutation(n)
    n_val = int(round(config.val_fraction * n))
    val_idx = list(perm[:n_val])
    train_idx = list(perm[n_val:])
    if not train_idx:
        raise ValueError("validation split leaves no training samples")

    blurred = [gaussian_blur(e.image) for e in entries]
    mask_feats = [[_mask_feature(m.mask, config.side) for m in e.masks] for e in entries]

    model = DecomposerModel(side=config.side, seed=config.seed)
    params = model.params
    opt = dc.init_optim(params, config.learning_rate, config.clip_norm)
    lam = np.float32(config.lambda_aes)

    def batch_inputs(idxs: list[int], k: int) -> dict[str, np.ndarray]:
        es = [entries[i] for i in idxs]
        inputs = {
            "image": np.stack([e.image for e in es]),
            "k_const": np.float32(k),
            "y_aes": np.array([e.y_aes for e in es], dtype=np.float32),
            "y_content": np.array([e.y_content for e in es], dtype=np.float32),
            "lambda_aes": lam,
        }
        for j in range(k):
            inputs[f"sub_{j}"] = np.stack([
                np.where(entries[i].masks[j].mask[:, :, None], blurred[i], entries[i].image)
                for i in idxs])
            inputs[f"mask_feat_{j}"] = np.stack([mask_feats[i][j] for i in idxs])
        return inputs

    def group_by_k(idxs: list[int]) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for i in idxs:
            groups.setdefault(len(entries[i].masks), []).append(i)
        return groups

    def eval_loss(idxs: list[int]) -> float:
        total, count = 0.0, 0
        for k, group in sorted(group_by_k(idxs).items()):
            for at in range(0, len(group), config.batch_size):
                chunk = group[at:at + config.batch_size]
                fwd = dc.forward(model.graph(k, True), batch_inputs(chunk, k), params)
                total += float(fwd.output("loss_total")) * len(chunk)
                count += len(chunk)
        return total / count

    history = TrainHistory()
    best_val = float("inf")
    best_params = {name: p.copy() for name, p in params.items()}
    bad_epochs = 0
    step = 0

    for epoch in range(1, config.max_epochs + 1):
        batches: list[tuple[int, list[int]]] = []
        for k, group in sorted(group_by_k(train_idx).items()):
            order = [group[i] for i in rng.permutation(len(group))]
            for at in range(0, len(order), config.batch_size):
                batches.append((k, order[at:at + config.batch_size]))
        batches = [batches[i] for i in rng.permutation(len(batches))]

        for k, idxs in batches:
            graph = model.graph(k, True)
            fwd = dc.forward(graph, batch_inputs(idxs, k), params)
            l_aes = float(fwd.output("loss_aes"))
            l_content = float(fwd.output("loss_content"))
            total = float(fwd.output("loss_total"))
            if not np.isfinite(total):
                raise dc.OptimError(f"non-finite training loss at step {step + 1}")
            grads = dc.backward(graph, fwd, "loss_total")
            params, opt = dc.adam_step(params, grads, opt)
            step += 1
            history.rows.append({"step": step, "epoch": epoch, "l_aes": l_aes,
                                 "l_content": l_content, "total": total})

        monitor_idx = val_idx if val_idx else train_idx
        val_total = eval_loss(monitor_idx)
        history.val_rows.append({"epoch": epoch, "total": val_total})
        if val_total < best_val:
            best_val = val_total
            best_params = {name: p.copy() for name, p in params.items()}
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if config.patience and bad_epochs >= config.patience:
                history.stopped_early = True
                break

    model.params = best_params
    return model, history
