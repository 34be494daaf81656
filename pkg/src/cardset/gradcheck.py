"""Central finite-difference checks for every loss gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import (
    KINK_TOL, CompSumKind, ConstrainedKind, all_kinds, cost_sensitive_grad, cost_sensitive_loss,
    kink_distance, surrogate_grad, surrogate_loss,
)

FD_STEP = 1e-5
FD_RTOL = 1e-5


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


@dataclass
class GradCheckResult:
    name: str
    checked: int
    skipped: int  # kink-adjacent draws
    max_rel_error: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= FD_RTOL


def _near_kink(s, kind) -> bool:
    return isinstance(kind, ConstrainedKind) and kink_distance(s, kind) <= KINK_TOL


def check_kind(kind, n_instances: int = 1000, seed: int = 0, cost_sensitive: bool = False,
               scale: float = 2.0) -> GradCheckResult:
    """Max relative error over ``n_instances`` random inputs away from kinks."""
    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    while checked < n_instances:
        n = int(rng.integers(2, 9))
        s = rng.normal(scale=scale, size=n)
        if _near_kink(s, kind):
            skipped += 1
            continue
        if cost_sensitive:
            c = rng.uniform(size=n)
            g = cost_sensitive_grad(s, c, kind)
            fd = central_difference(lambda v: cost_sensitive_loss(v, c, kind), s)
        else:
            y = int(rng.integers(n))
            g = surrogate_grad(s, y, kind)
            fd = central_difference(lambda v: surrogate_loss(v, y, kind), s)
        worst = max(worst, relative_error(g, fd))
        checked += 1
    label = f"cost_sensitive:{kind}" if cost_sensitive else str(kind)
    return GradCheckResult(label, checked, skipped, worst)


def grad_check_all(n_instances: int = 1000, seed: int = 0) -> list[GradCheckResult]:
    """All top-k kinds, then every kind in its cost-sensitive form."""
    out = [check_kind(k, n_instances, seed + i) for i, k in enumerate(all_kinds())]
    out += [check_kind(k, n_instances, seed + 100 + i, cost_sensitive=True)
            for i, k in enumerate(all_kinds())]
    return out
