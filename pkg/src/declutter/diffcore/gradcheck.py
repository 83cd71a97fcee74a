"""Finite-difference validation of analytic gradients.

Both the analytic pass and the central-difference probes run in float64 so
the comparison is limited by the gradient math, not accumulation noise.
Central differences only estimate the derivative where the loss is smooth
in the probed coordinate, so probes whose +-eps interval flips the state of
any relu or abs kink are rejected and replaced by other elements.  Large
parameters are probed at a seeded random subset of elements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, backward, forward


@dataclass
class GradCheckEntry:
    param: str
    max_rel_err: float
    checked: int
    skipped_at_kink: int
    flagged: bool


@dataclass
class GradCheckReport:
    eps: float
    tol: float
    entries: list[GradCheckEntry]

    @property
    def ok(self) -> bool:
        return not any(e.flagged for e in self.entries)

    @property
    def worst(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def format(self) -> str:
        lines = [f"gradient check: eps={self.eps:g} tol={self.tol:g}"]
        for e in self.entries:
            mark = "FAIL" if e.flagged else "ok"
            lines.append(f"  {mark:4s} {e.param:40s} max_rel_err={e.max_rel_err:.3e}"
                         f" ({e.checked} elements, {e.skipped_at_kink} at kinks)")
        return "\n".join(lines)


def grad_check(graph: Graph, inputs: dict[str, np.ndarray], params: dict[str, np.ndarray],
               loss: str = "loss", eps: float = 1e-4, tol: float = 1e-3,
               samples_per_param: int = 8, seed: int = 0) -> GradCheckReport:
    inputs64 = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    params64 = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    fwd = forward(graph, inputs64, params64, dtype=np.float64)
    analytic = backward(graph, fwd, loss)

    kink_nodes = [n for n in graph.nodes if n.kind in ("relu", "abs")]

    def probe() -> tuple[float, np.ndarray]:
        f = forward(graph, inputs64, params64, dtype=np.float64)
        if kink_nodes:
            signs = np.concatenate([(f.values[n.inputs[0]] > 0).ravel() for n in kink_nodes])
        else:
            signs = np.empty(0, dtype=bool)
        return float(f.output(loss)), signs

    rng = np.random.default_rng(seed)
    entries = []
    for name in graph.params:
        flat = params64[name].ravel()
        n = flat.size
        if n <= 2 * samples_per_param:
            candidates = np.arange(n)
        else:
            candidates = np.sort(rng.choice(n, size=2 * samples_per_param, replace=False))
        a_flat = analytic[name].ravel()
        worst = 0.0
        checked = 0
        skipped = 0
        for i in candidates:
            if checked >= samples_per_param:
                break
            orig = flat[i]
            flat[i] = orig + eps
            lp, sp = probe()
            flat[i] = orig - eps
            lm, sm = probe()
            flat[i] = orig
            if (sp != sm).any():
                skipped += 1
                continue
            fd = (lp - lm) / (2.0 * eps)
            a = float(a_flat[i])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, err)
            checked += 1
        entries.append(GradCheckEntry(name, worst, checked, skipped, worst >= tol))
    return GradCheckReport(eps, tol, entries)
