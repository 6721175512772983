"""Barrier functions and their linearized constraint rows.

Barriers act on a position slice of the physical state.  Circles (and the
pairwise variant) use the squared-distance form h = ||pos - c||^2 - d^2,
halfspaces the signed distance h = a . pos - b with a unit normal, so safe
means h >= 0 in every case.  Rows are linearized about the current SQP
iterate; the margin delta_k enters through a local Lipschitz constant valid
on a delta-ball around the nominal next position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Barrier:
    """One scalar safety constraint h(x) >= 0 on a position slice of x."""

    kind: str
    position_idx: tuple[int, ...]
    center: np.ndarray | None = None
    d_safe: float = 0.0
    normal: np.ndarray | None = None
    offset: float = 0.0
    other: np.ndarray | None = None
    d_min: float = 0.0

    def __post_init__(self):
        if self.kind not in ("circle", "halfspace", "pairwise"):
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        dim = len(self.position_idx)
        if self.kind == "circle":
            c = np.asarray(self.center, dtype=float).reshape(-1)
            if c.shape[0] != dim:
                raise ValueError("circle center dimension mismatch")
            if self.d_safe <= 0:
                raise ValueError("d_safe must be positive")
            object.__setattr__(self, "center", c)
        elif self.kind == "halfspace":
            a = np.asarray(self.normal, dtype=float).reshape(-1)
            if a.shape[0] != dim:
                raise ValueError("halfspace normal dimension mismatch")
            if abs(np.linalg.norm(a) - 1.0) > 1e-9:
                raise ValueError("halfspace normal must be a unit vector")
            object.__setattr__(self, "normal", a)
        else:
            o = np.asarray(self.other, dtype=float).reshape(-1)
            if o.shape[0] != dim:
                raise ValueError("pairwise anchor dimension mismatch")
            if self.d_min <= 0:
                raise ValueError("d_min must be positive")
            object.__setattr__(self, "other", o)

    def _pos(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return x[list(self.position_idx)]


@dataclass(frozen=True)
class CbfParams:
    """Decay rate and Lipschitz-constant policy for the barrier rows."""

    alpha: float = 0.1
    use_local_lipschitz: bool = True
    global_lh: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.global_lh <= 0.0:
            raise ValueError("global_lh must be positive")


def h_value(barrier: Barrier, x) -> float:
    pos = barrier._pos(x)
    if barrier.kind == "circle":
        return float(np.sum((pos - barrier.center) ** 2) - barrier.d_safe ** 2)
    if barrier.kind == "halfspace":
        return float(barrier.normal @ pos - barrier.offset)
    return float(np.sum((pos - barrier.other) ** 2) - barrier.d_min ** 2)


def h_gradient(barrier: Barrier, x) -> np.ndarray:
    """Gradient of h with respect to the full state (zeros off-position)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    pos = barrier._pos(x)
    grad = np.zeros_like(x)
    if barrier.kind == "circle":
        g_pos = 2.0 * (pos - barrier.center)
    elif barrier.kind == "halfspace":
        g_pos = barrier.normal.copy()
    else:
        g_pos = 2.0 * (pos - barrier.other)
    grad[list(barrier.position_idx)] = g_pos
    return grad


def local_lipschitz(barrier: Barrier, x_nom_next, delta: float) -> float:
    """Lipschitz constant of h on a delta-ball around the nominal next state."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    pos = barrier._pos(x_nom_next)
    if barrier.kind == "circle":
        return 2.0 * (float(np.linalg.norm(pos - barrier.center)) + delta)
    if barrier.kind == "halfspace":
        return 1.0
    return 2.0 * (float(np.linalg.norm(pos - barrier.other)) + delta)


def cbf_row(barrier: Barrier, params: CbfParams, x_current, x_nom_next,
            delta_k: float, fallback_direction=None) -> tuple[np.ndarray, float]:
    """Linearized decay row g . x_next >= rhs about the iterate x_nom_next.

    Encodes h(x_next) >= (1 - alpha) h(x_current) + L_h delta_k with h
    replaced by its first-order expansion at the current SQP iterate.
    """
    g = h_gradient(barrier, x_nom_next)
    if barrier.kind != "halfspace" and np.linalg.norm(g) < 1e-6:
        # iterate sits at the barrier center; pick an escape direction
        direction = np.zeros(len(barrier.position_idx))
        if fallback_direction is not None:
            d = np.asarray(fallback_direction, dtype=float).reshape(-1)
            direction = d[list(barrier.position_idx)]
        if np.linalg.norm(direction) < 1e-12:
            direction[0] = 1.0
        direction = direction / np.linalg.norm(direction)
        g = np.zeros(len(np.asarray(x_nom_next).reshape(-1)))
        g[list(barrier.position_idx)] = 2.0 * barrier.d_safe * direction
    h_bar = h_value(barrier, x_nom_next)
    if params.use_local_lipschitz:
        L_h = local_lipschitz(barrier, x_nom_next, delta_k)
    else:
        L_h = params.global_lh
    target = (1.0 - params.alpha) * h_value(barrier, x_current) + L_h * delta_k
    x_bar = np.asarray(x_nom_next, dtype=float).reshape(-1)
    rhs = target - h_bar + float(g @ x_bar)
    return g, rhs


@dataclass
class SafetyReport:
    """Realized barrier values and flags for one control step."""

    h_values: np.ndarray
    hard_violations: int
    decay_misses: int

    @property
    def min_h(self) -> float:
        return float(np.min(self.h_values)) if self.h_values.size else np.inf


def monitor_step(barriers, x_true_next, x_current, params: CbfParams) -> SafetyReport:
    """Flags h(x_next) < 0 (hard) and h(x_next) < (1-alpha) h(x_cur) (decay)."""
    h_vals = []
    hard = 0
    misses = 0
    for barrier in barriers:
        h_cur = h_value(barrier, x_current)
        h_next = h_value(barrier, x_true_next)
        h_vals.append(h_next)
        if h_next < 0.0:
            hard += 1
        if h_next < (1.0 - params.alpha) * h_cur:
            misses += 1
    return SafetyReport(h_values=np.asarray(h_vals, dtype=float),
                        hard_violations=hard, decay_misses=misses)
