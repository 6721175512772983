"""Windowed contractive adaptation of the lifted operator.

The estimator keeps a sliding window of regressor/successor pairs
(v = [z; u], z_next), forms the geometrically weighted Gramian
G = V diag(gamma^age) V^T (newest sample has weight 1), and moves the
stacked operator W = [A B] along the weighted prediction error:

    W  <-  W + eta * (Z - W V) diag(gamma^age) V^T

For step sizes below 2 / lambda_max(G) the parameter error is
non-expansive, and strictly contracts whenever G is positive definite.
The ContractionEnvelope tracks the quantities needed to turn that fact
into online error and perturbation bounds.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


def _finite_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


class AdaptationWindow:
    """Ring buffer of (regressor, successor) pairs with geometric weights."""

    def __init__(self, size: int, regressor_dim: int, lifted_dim: int,
                 gamma: float = 1.0):
        if size < 1:
            raise ValueError("window size must be >= 1")
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        self.size = size
        self.d = regressor_dim
        self.p = lifted_dim
        self.gamma = gamma
        self._pairs: deque[tuple[np.ndarray, np.ndarray]] = deque(maxlen=size)

    @property
    def fill(self) -> int:
        return len(self._pairs)

    def push(self, v, z_next) -> None:
        """Append a pair, evicting the oldest once the buffer is full."""
        v = _finite_vector(v, "regressor")
        z_next = _finite_vector(z_next, "successor")
        if v.shape[0] != self.d:
            raise ValueError(f"regressor has dim {v.shape[0]}, expected {self.d}")
        if z_next.shape[0] != self.p:
            raise ValueError(f"successor has dim {z_next.shape[0]}, expected {self.p}")
        self._pairs.append((v, z_next))

    def regressors(self) -> np.ndarray:
        """V, d x fill, oldest column first."""
        if not self._pairs:
            return np.zeros((self.d, 0))
        return np.column_stack([v for v, _ in self._pairs])

    def successors(self) -> np.ndarray:
        """Z, p x fill, aligned with regressors()."""
        if not self._pairs:
            return np.zeros((self.p, 0))
        return np.column_stack([z for _, z in self._pairs])

    def weights(self) -> np.ndarray:
        """gamma^age per stored column (newest weight exactly 1)."""
        f = self.fill
        return self.gamma ** np.arange(f - 1, -1, -1, dtype=float)

    def gramian(self) -> np.ndarray:
        """G = V diag(weights) V^T, symmetrized for numerical hygiene."""
        V = self.regressors()
        if V.shape[1] == 0:
            return np.zeros((self.d, self.d))
        G = (V * self.weights()) @ V.T
        return 0.5 * (G + G.T)

    def prediction_errors(self, W: np.ndarray) -> np.ndarray:
        """E_pred = Z - W V for a stacked operator W (p x d)."""
        W = np.asarray(W, dtype=float)
        if W.shape != (self.p, self.d):
            raise ValueError(f"operator has shape {W.shape}, expected {(self.p, self.d)}")
        return self.successors() - W @ self.regressors()


def step_size_bound(G: np.ndarray) -> float:
    """Largest admissible step size 2 / lambda_max(G)."""
    G = np.asarray(G, dtype=float)
    lam_max = float(np.linalg.eigvalsh(0.5 * (G + G.T))[-1])
    if lam_max <= 0.0:
        raise ValueError("Gramian has no positive eigenvalue; step size unbounded")
    return 2.0 / lam_max


def auto_step_size(G: np.ndarray, lo: float = 1e-6, hi: float = 1e3) -> float:
    """Default step-size policy: 1 / lambda_max(G), clipped to [lo, hi]."""
    try:
        eta = 0.5 * step_size_bound(G)
    except ValueError:
        eta = hi
    return float(np.clip(eta, lo, hi))


def contraction_factor(G: np.ndarray, eta: float) -> float:
    """Spectral norm ||I - eta G||_2 for symmetric PSD G."""
    G = np.asarray(G, dtype=float)
    eigs = np.linalg.eigvalsh(0.5 * (G + G.T))
    return float(np.max(np.abs(1.0 - eta * eigs)))


@dataclass
class LiftedModelEstimate:
    """Mutable stacked operator W = [A B] with its adaptation step size.

    W acts on the scaled regressor [z; u / input_scale]; the B property
    returns the physical input matrix, with the scaling divided back out.
    """

    W: np.ndarray
    p: int
    m: int
    eta: float = 0.1
    version: int = 0
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        self.W = np.array(self.W, dtype=float)
        if self.W.shape != (self.p, self.p + self.m):
            raise ValueError(
                f"operator has shape {self.W.shape}, expected {(self.p, self.p + self.m)}")
        if self.input_scale is None:
            self.input_scale = np.ones(self.m)
        else:
            self.input_scale = np.asarray(self.input_scale, dtype=float).reshape(-1)
        if self.input_scale.shape[0] != self.m or np.any(self.input_scale <= 0):
            raise ValueError("input_scale must hold one positive entry per channel")

    @property
    def A(self) -> np.ndarray:
        return self.W[:, :self.p]

    @property
    def B(self) -> np.ndarray:
        return self.W[:, self.p:] / self.input_scale[None, :]

    def predict(self, v) -> np.ndarray:
        return self.W @ np.asarray(v, dtype=float)

    def adapt(self, window: AdaptationWindow) -> float:
        """One weighted gradient step on the window; returns ||E_pred||_F."""
        if window.fill == 0:
            return 0.0
        if self.eta < 0:
            raise ValueError("step size must be nonnegative")
        V = window.regressors()
        E_pred = window.prediction_errors(self.W)
        self.W = self.W + self.eta * (E_pred * window.weights()) @ V.T
        self.version += 1
        return float(np.linalg.norm(E_pred))


_RHO_CAP = 1.0 - 1e-6


@dataclass
class ContractionEnvelope:
    """Online bookkeeping for the error envelope and derived bounds.

    rho is the worst contraction factor observed so far (capped just below
    one so the geometric series stays summable), nu the assumed per-step
    drift of the true operator, e0_norm the initial parameter error bound,
    v_max a running regressor-norm bound with a configured floor.
    """

    e0_norm: float
    nu: float = 0.0
    window_size: int = 1
    eta: float = 0.0
    v_max_floor: float = 1.0
    rho_raw: float = 0.0
    v_max: float = field(init=False)

    def __post_init__(self):
        if self.e0_norm < 0 or self.nu < 0 or self.v_max_floor < 0:
            raise ValueError("envelope parameters must be nonnegative")
        self.v_max = self.v_max_floor

    @property
    def rho(self) -> float:
        return min(self.rho_raw, _RHO_CAP)

    def observe_contraction(self, rho_k: float, eta: float) -> None:
        self.rho_raw = max(self.rho_raw, float(rho_k))
        self.eta = float(eta)

    def observe_regressor(self, v) -> None:
        self.v_max = max(self.v_max, float(np.linalg.norm(v)))

    def error_bound(self, k: int) -> float:
        """Envelope E-bar_k = rho^k e0 + (1 - rho^k) nu / (1 - rho)."""
        if k < 0:
            raise ValueError("step index must be nonnegative")
        rho = self.rho
        decay = rho ** k
        return decay * self.e0_norm + (1.0 - decay) * self.nu / (1.0 - rho)

    def update_perturbation_bound(self, k: int) -> float:
        """Bound on ||W_{k+1} - W_k||_2 induced by one adaptation step."""
        return self.eta * self.error_bound(k) * self.v_max * np.sqrt(self.window_size)

    def composite_bound(self, k: int) -> float:
        """One-step-ahead disturbance bound v_max E-bar_k (1 + eta v_max sqrt(w))."""
        lift = 1.0 + self.eta * self.v_max * np.sqrt(self.window_size)
        return self.v_max * self.error_bound(k) * lift
