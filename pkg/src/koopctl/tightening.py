"""Residual-driven constraint tightening.

Each control step produces a physical-space innovation s_k (observed minus
predicted next state under the pre-update model).  An exponential moving
average separates the systematic component; the distance to the average is
a nonconformity score.  The implemented margin is an empirical quantile of
the trailing scores (plus a configured pad), with a warmup phase that falls
back to quantiles of the raw innovation norms until enough scores exist.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .adaptation import ContractionEnvelope


def conformal_quantile(scores, chi: float) -> float:
    """Smallest element of the score set with empirical CDF >= 1 - chi."""
    s = np.sort(np.asarray(list(scores), dtype=float))
    if s.size == 0:
        raise ValueError("cannot take a quantile of an empty score set")
    if not 0.0 < chi < 1.0:
        raise ValueError("chi must lie in (0, 1)")
    # small slack keeps e.g. ceil(0.9 * 10) from landing on 10 in floating point
    k = max(1, math.ceil((1.0 - chi) * s.size - 1e-9))
    return float(s[k - 1])


def coverage_estimate(violations: int, total: int) -> float:
    """Empirical miss rate of the conformal margin."""
    if total <= 0:
        raise ValueError("total must be positive")
    if violations < 0 or violations > total:
        raise ValueError("violations must lie in [0, total]")
    return violations / total


@dataclass
class TighteningState:
    """EMA of innovations plus sliding score / raw-norm windows."""

    dim: int
    alpha_ema: float = 0.1
    chi: float = 0.01
    eps_ema: float = 0.0
    n_conf: int = 50
    k_warm: int = 100
    ema: np.ndarray = field(init=False)
    scores: deque = field(init=False)
    raw_norms: deque = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.alpha_ema < 1.0:
            raise ValueError("alpha_ema must lie in [0, 1)")
        if not 0.0 < self.chi < 1.0:
            raise ValueError("chi must lie in (0, 1)")
        if self.eps_ema < 0.0:
            raise ValueError("eps_ema must be nonnegative")
        if self.n_conf < 1:
            raise ValueError("n_conf must be >= 1")
        self.ema = np.zeros(self.dim)
        self.scores = deque(maxlen=self.n_conf)
        self.raw_norms = deque(maxlen=self.n_conf)

    def observe_disturbance(self, s_k) -> float:
        """Fold one innovation into the EMA; returns the score r_k."""
        s_k = np.asarray(s_k, dtype=float).reshape(-1)
        if s_k.shape[0] != self.dim:
            raise ValueError(f"innovation has dim {s_k.shape[0]}, expected {self.dim}")
        if not np.all(np.isfinite(s_k)):
            raise ValueError("innovation contains non-finite entries")
        self.ema = self.alpha_ema * self.ema + (1.0 - self.alpha_ema) * s_k
        r_k = float(np.linalg.norm(s_k - self.ema))
        self.scores.append(r_k)
        self.raw_norms.append(float(np.linalg.norm(s_k)))
        return r_k

    def delta_warmup(self) -> float:
        """Quantile of raw innovation norms (the pre-k_warm fallback)."""
        if not self.raw_norms:
            return 0.0
        return conformal_quantile(self.raw_norms, self.chi)

    def delta_conformal(self) -> float:
        """Quantile of the centered scores plus the configured pad."""
        if not self.scores:
            return 0.0
        return conformal_quantile(self.scores, self.chi) + self.eps_ema

    def delta_implemented(self, k: int) -> float:
        """Margin in force at step k (warmup quantile before k_warm)."""
        return self.delta_warmup() if k < self.k_warm else self.delta_conformal()


def delta_analytical(envelope: ContractionEnvelope, k: int) -> float:
    """Model-error margin v_max * E-bar_k from the contraction envelope."""
    return envelope.v_max * envelope.error_bound(k)


def delta_combined(state: TighteningState, envelope: ContractionEnvelope,
                   k: int) -> float:
    """max of the conformal and analytical margins (opt-in path)."""
    return max(state.delta_implemented(k), delta_analytical(envelope, k))
