"""Dense convex QP solver for the SQP subproblems.

minimize    0.5 u^T H u + g^T u  (+ linear penalty on soft-row violations)
subject to  lb <= u <= ub
            A_hard u <= b_hard          (hard rows)
            A_soft u <= b_soft  soft    (violations cost w_j per unit)

The solver is an over-relaxed operator-splitting (ADMM) iteration on the
stacked rows [A_hard; A_soft; I], preceded by Ruiz equilibration (without
which badly row-scaled subproblems stall).  Hard and box rows enter the
splitting step as interval projections; soft rows enter through the
closed-form prox of the hinge penalty w * max(0, r - b), which keeps their
duals bounded by w and preserves the exact-penalty property (feasible
problems drive the reported slacks to exactly zero).  At convergence an
active-set polish (an equality-constrained KKT solve on the detected
active rows) sharpens the solution and its duals to near machine
precision.  Convergence is always judged on residuals of the original,
unscaled problem.  Everything is deterministic: fixed iteration order,
no randomness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

_INFEAS_DUAL_NORM = 1e8
_INFEAS_PATIENCE = 100


@dataclass
class QpInstance:
    H: np.ndarray
    g: np.ndarray
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    A_hard: np.ndarray | None = None
    b_hard: np.ndarray | None = None
    A_soft: np.ndarray | None = None
    b_soft: np.ndarray | None = None
    soft_weights: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        d = self.g.shape[0]
        if self.H.shape != (d, d):
            raise ValueError("H and g dimensions disagree")
        if np.max(np.abs(self.H - self.H.T)) > 1e-10 * max(1.0, np.max(np.abs(self.H))):
            raise ValueError("H must be symmetric")
        self.lb = (np.full(d, -np.inf) if self.lb is None
                   else np.asarray(self.lb, dtype=float).reshape(-1))
        self.ub = (np.full(d, np.inf) if self.ub is None
                   else np.asarray(self.ub, dtype=float).reshape(-1))
        if self.lb.shape[0] != d or self.ub.shape[0] != d:
            raise ValueError("box bounds have wrong length")
        if np.any(self.lb > self.ub):
            raise ValueError("box lower bound exceeds upper bound")
        for name in ("A_hard", "A_soft"):
            A = getattr(self, name)
            if A is not None:
                A = np.atleast_2d(np.asarray(A, dtype=float))
                if A.shape[1] != d:
                    raise ValueError(f"{name} column count does not match dimension")
                setattr(self, name, A)
        self.b_hard = (np.zeros(0) if self.b_hard is None
                       else np.asarray(self.b_hard, dtype=float).reshape(-1))
        self.b_soft = (np.zeros(0) if self.b_soft is None
                       else np.asarray(self.b_soft, dtype=float).reshape(-1))
        if self.A_hard is None:
            self.A_hard = np.zeros((0, d))
        if self.A_soft is None:
            self.A_soft = np.zeros((0, d))
        if self.soft_weights is None:
            self.soft_weights = np.zeros(0)
        else:
            self.soft_weights = np.asarray(self.soft_weights, dtype=float).reshape(-1)
            if np.any(self.soft_weights <= 0):
                raise ValueError("soft weights must be positive")
        if self.A_hard.shape[0] != self.b_hard.shape[0]:
            raise ValueError("hard rows and rhs disagree")
        if not (self.A_soft.shape[0] == self.b_soft.shape[0] == self.soft_weights.shape[0]):
            raise ValueError("soft rows, rhs, and weights disagree")

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def dump(self, path: str) -> None:
        """Persist the instance for offline reproduction."""
        np.savez(path, H=self.H, g=self.g, lb=self.lb, ub=self.ub,
                 A_hard=self.A_hard, b_hard=self.b_hard,
                 A_soft=self.A_soft, b_soft=self.b_soft,
                 soft_weights=self.soft_weights)


def load_instance(path: str) -> QpInstance:
    data = np.load(path)
    return QpInstance(H=data["H"], g=data["g"], lb=data["lb"], ub=data["ub"],
                      A_hard=data["A_hard"], b_hard=data["b_hard"],
                      A_soft=data["A_soft"], b_soft=data["b_soft"],
                      soft_weights=data["soft_weights"])


@dataclass
class QpResult:
    u: np.ndarray
    duals_hard: np.ndarray
    slacks: np.ndarray
    status: str
    iterations: int
    r_prim: float
    r_dual: float
    objective: float = 0.0
    penalty: float = 0.0
    polished: bool = False
    duals_all: np.ndarray | None = None  # stacked [hard; soft; box] duals

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def psd_repair(H: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Clip eigenvalues of a symmetric matrix up to floor (H returned as-is
    when already satisfied, so no eigenvalue is ever decreased)."""
    H = np.asarray(H, dtype=float)
    Hs = 0.5 * (H + H.T)
    vals, vecs = np.linalg.eigh(Hs)
    if vals[0] >= floor:
        return H
    clipped = np.maximum(vals, floor)
    return (vecs * clipped) @ vecs.T


def _stack(inst: QpInstance):
    """Row stack [hard; soft; box] plus range bounds and hinge data."""
    d = inst.dim
    nh = inst.A_hard.shape[0]
    ns = inst.A_soft.shape[0]
    m = nh + ns + d
    C = np.zeros((m, d))
    lo = np.full(m, -np.inf)
    hi = np.full(m, np.inf)
    hinge = np.zeros(m, dtype=bool)
    hinge_b = np.zeros(m)
    hinge_w = np.zeros(m)
    if nh:
        C[:nh] = inst.A_hard
        hi[:nh] = inst.b_hard
    if ns:
        C[nh:nh + ns] = inst.A_soft
        hinge[nh:nh + ns] = True
        hinge_b[nh:nh + ns] = inst.b_soft
        hinge_w[nh:nh + ns] = inst.soft_weights
    C[nh + ns:] = np.eye(d)
    lo[nh + ns:] = inst.lb
    hi[nh + ns:] = inst.ub
    return C, lo, hi, hinge, hinge_b, hinge_w, nh, ns


def _equilibrate(P, q, C, iters: int = 10):
    """Modified Ruiz scaling of the stacked problem.

    Returns (P_s, q_s, C_s, D, E, c) with P_s = c D P D, q_s = c D q,
    C_s = E C D, so that rows and columns of the KKT matrix have roughly
    unit infinity-norm and the cost is normalized by c.
    """
    n = P.shape[0]
    m = C.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    Pb = P.copy()
    qb = q.copy()
    Cb = C.copy()
    for _ in range(iters):
        colP = np.max(np.abs(Pb), axis=0)
        colC = np.max(np.abs(Cb), axis=0) if m else np.zeros(n)
        col = np.maximum(colP, colC)
        row = np.max(np.abs(Cb), axis=1) if m else np.zeros(0)
        dvec = np.where(col > 0, 1.0 / np.sqrt(np.clip(col, 1e-12, None)), 1.0)
        evec = np.where(row > 0, 1.0 / np.sqrt(np.clip(row, 1e-12, None)), 1.0)
        Pb = Pb * np.outer(dvec, dvec)
        qb = qb * dvec
        if m:
            Cb = Cb * dvec[None, :] * evec[:, None]
        D *= dvec
        E *= evec
        colPb = np.max(np.abs(Pb), axis=0)
        denom = max(float(np.mean(colPb)), float(np.max(np.abs(qb))) if n else 0.0)
        if denom > 0:
            gamma = 1.0 / denom
            Pb *= gamma
            qb *= gamma
            c *= gamma
    return Pb, qb, Cb, D, E, c


def _polish(P, q, C, lo, hi, hinge, hinge_b, hinge_w, x, y, tol):
    """Equality KKT solve on the detected active set; returns refined
    (x, y) or None when the candidate violates feasibility, dual signs,
    or the assumed hinge-row regimes."""
    m = C.shape[0]
    n = P.shape[0]
    y_scale = max(1.0, float(np.max(np.abs(y))) if m else 1.0)
    act_tol = 1e-9 * y_scale
    w_margin = 1e-9 * np.maximum(1.0, hinge_w)
    low_active = ~hinge & (y < -act_tol)
    up_active = ~hinge & (y > act_tol)
    kink = hinge & (y > act_tol) & (y < hinge_w - w_margin)
    saturated = hinge & (y >= hinge_w - w_margin)
    rows = np.where(low_active | up_active | kink)[0]
    b_act = np.where(low_active, lo, np.where(kink, hinge_b, hi))[rows]
    A_act = C[rows]
    # saturated hinge rows exert the constant force w_j a_j
    q_eff = q + C[saturated].T @ hinge_w[saturated] if np.any(saturated) else q
    k = rows.size
    delta = 1e-11 * max(1.0, np.max(np.abs(P)))
    K = np.block([[P + delta * np.eye(n), A_act.T],
                  [A_act, -delta * np.eye(k) if k else np.zeros((0, 0))]])
    rhs = np.concatenate([-q_eff, b_act])
    try:
        sol = np.linalg.solve(K, rhs)
        # one round of iterative refinement against the unregularized system
        K0 = np.block([[P, A_act.T], [A_act, np.zeros((k, k))]])
        resid = rhs - K0 @ sol
        sol = sol + np.linalg.solve(K, resid)
    except np.linalg.LinAlgError:
        return None
    x_p = sol[:n]
    y_p = np.zeros(m)
    y_p[rows] = sol[n:]
    y_p[saturated] = hinge_w[saturated]
    feas_tol = max(1e-9, 10.0 * tol)
    Cx = C @ x_p
    rng = ~hinge
    if np.any(Cx[rng] > hi[rng] + feas_tol) or np.any(Cx[rng] < lo[rng] - feas_tol):
        return None
    if np.any(Cx[saturated] < hinge_b[saturated] - feas_tol):
        return None
    inactive_hinge = hinge & ~kink & ~saturated
    if np.any(Cx[inactive_hinge] > hinge_b[inactive_hinge] + feas_tol):
        return None
    sign_tol = 1e-7 * y_scale
    if np.any(y_p[rows][low_active[rows]] > sign_tol):
        return None
    if np.any(y_p[rows][up_active[rows]] < -sign_tol):
        return None
    y_kink = y_p[kink]
    if np.any(y_kink < -sign_tol) or np.any(y_kink > hinge_w[kink] + sign_tol):
        return None
    return x_p, y_p


def qp_solve(inst: QpInstance, tol: float = 1e-8, max_iters: int = 20000,
             warm: tuple[np.ndarray, np.ndarray] | None = None) -> QpResult:
    """Solve the instance; see module docstring for the algorithm."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = inst.dim
    P = 0.5 * (inst.H + inst.H.T)
    q = inst.g
    C, lo, hi, hinge, hinge_b, hinge_w, nh, ns = _stack(inst)
    n = d
    m = C.shape[0]
    scale = max(1.0, float(np.max(np.abs(P))), float(np.max(np.abs(q))))

    Ps, qs, Cs, D, E, cost_c = _equilibrate(P, q, C)
    lo_s = E * lo
    hi_s = E * hi
    hinge_b_s = E * hinge_b
    hinge_w_s = cost_c * hinge_w / np.where(E > 0, E, 1.0)
    eq_row = np.isfinite(lo_s) & np.isfinite(hi_s) & (hi_s - lo_s < 1e-14)

    sigma = 1e-6
    rho = 0.1
    alpha = 1.6

    def rho_rows(rho_val):
        return np.where(eq_row, 1e3 * rho_val, rho_val)

    def factor(rho_vec):
        K = np.block([[Ps + sigma * np.eye(n), Cs.T],
                      [Cs, -np.diag(1.0 / rho_vec)]])
        return lu_factor(K)

    rho_vec = rho_rows(rho)
    kkt = factor(rho_vec)
    x = np.zeros(n)
    y = np.zeros(m)
    if warm is not None:
        x = np.clip(warm[0], inst.lb, inst.ub) / D
        y[:warm[1].shape[0]] = warm[1]
        y = cost_c * (y / np.where(E > 0, E, 1.0))
    z = np.clip(Cs @ x, lo_s, hi_s)

    status = "max_iters"
    iters = 0
    diverge_run = 0
    r_prim = np.inf
    r_dual = np.inf
    check_every = 25
    for it in range(1, max_iters + 1):
        iters = it
        rhs = np.concatenate([sigma * x - qs, z - y / rho_vec])
        sol = lu_solve(kkt, rhs)
        x_t = sol[:n]
        nu = sol[n:]
        z_t = z + (nu - y) / rho_vec
        x = alpha * x_t + (1.0 - alpha) * x
        w = alpha * z_t + (1.0 - alpha) * z
        v = w + y / rho_vec
        z_new = np.where(
            hinge,
            v - np.clip(v - hinge_b_s, 0.0, hinge_w_s / rho_vec),
            np.clip(v, lo_s, hi_s))
        y = y + rho_vec * (w - z_new)
        z = z_new
        if it % check_every == 0 or it == max_iters:
            # residuals of the original problem, obtained by unscaling
            x_un = D * x
            z_un = z / E
            y_un = E * y / cost_c
            Cx = C @ x_un
            r_prim = float(np.max(np.abs(Cx - z_un)))
            Px = P @ x_un
            Cty = C.T @ y_un
            r_dual = float(np.max(np.abs(Px + q + Cty)))
            prim_ref = max(1.0, float(np.max(np.abs(Cx))),
                           float(np.max(np.abs(z_un))))
            dual_ref = max(1.0, float(np.max(np.abs(Px))),
                           float(np.max(np.abs(q))),
                           float(np.max(np.abs(Cty))))
            if r_prim <= tol * prim_ref and r_dual <= tol * dual_ref:
                status = "converged"
                break
            if float(np.linalg.norm(y_un)) > _INFEAS_DUAL_NORM:
                diverge_run += check_every
                if diverge_run >= _INFEAS_PATIENCE:
                    status = "infeasible"
                    break
            else:
                diverge_run = 0
            if it % 100 == 0:
                # residual-balancing step-size adaptation
                ratio = np.sqrt((r_prim / prim_ref) /
                                max(r_dual / dual_ref, 1e-12))
                new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                if new_rho > 5.0 * rho or new_rho < 0.2 * rho:
                    rho = new_rho
                    rho_vec = rho_rows(rho)
                    kkt = factor(rho_vec)
    x = D * x
    y = E * y / cost_c

    polished = False
    if status in ("converged", "max_iters"):
        # on a max-iters exit the active-set guess is usually already right,
        # and the acceptance test below keeps a bad polish from making
        # things worse
        refined = _polish(P, q, C, lo, hi, hinge, hinge_b, hinge_w, x, y, tol)
        if refined is not None:
            x_p, y_p = refined
            old_kkt = max(r_prim, r_dual)
            new_dual = float(np.max(np.abs(P @ x_p + q + C.T @ y_p)))
            if new_dual <= max(old_kkt, 1e-9 * scale):
                x, y = x_p, y_p
                polished = True
                Cx = C @ x
                viol_hi = np.clip(Cx - np.where(hinge, np.inf, hi), 0.0, None)
                viol_lo = np.clip(lo - Cx, 0.0, None)
                r_prim = float(np.max(viol_hi + viol_lo))
                r_dual = new_dual

    u = np.clip(x, inst.lb, inst.ub)
    duals_hard = y[:nh] if nh else np.zeros(0)
    obj = float(0.5 * u @ inst.H @ u + inst.g @ u)
    if ns:
        viol = np.clip(inst.A_soft @ u - inst.b_soft, 0.0, None)
        slack_vals = viol
        penalty = float(inst.soft_weights @ viol)
    else:
        slack_vals = np.zeros(0)
        penalty = 0.0
    return QpResult(u=u, duals_hard=duals_hard, slacks=slack_vals, status=status,
                    iterations=iters, r_prim=r_prim, r_dual=r_dual,
                    objective=obj, penalty=penalty, polished=polished,
                    duals_all=y)
