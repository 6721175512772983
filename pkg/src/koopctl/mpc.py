"""Active-learning MPC over a lifted linear model, solved by SQP.

The controller minimizes a tracking-plus-input quadratic cost minus a
weighted log-det excitation bonus over the predicted regressor matrix,
subject to input/state boxes and barrier decay rows.  Since the prediction
model is linear, the task cost is exactly quadratic in the stacked input
vector; the log-det term is handled to first order, the barrier rows by
linearization about the current rollout, and convergence is globalized by
an l1 merit function with a per-component trust region.

Physical states occupy the first n lifted coordinates (the dictionary puts
the state itself first), so the output map is the selector [I 0] throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .adaptation import LiftedModelEstimate
from .qp import QpInstance, psd_repair, qp_solve
from .safety import Barrier, CbfParams, h_gradient, h_value, local_lipschitz

_HARD_RELAX_FACTOR = 100.0
_DEGENERATE_GRAD = 1e-6


@dataclass
class MpcProblem:
    """Weights, boxes, barriers and reference for one receding-horizon task.

    ``reference`` maps an absolute step index to the desired physical state.
    ``terminal_weight`` (lifted-space PSD matrix) is optional; when present
    the predicted endpoint cost z_N' P z_N is added to the objective but not
    reported inside ``task_cost``.
    """

    horizon: int
    Q: np.ndarray
    R: np.ndarray
    reference: Callable[[int], np.ndarray]
    u_lower: np.ndarray
    u_upper: np.ndarray
    beta: float = 0.0
    beta_schedule: str = "constant"
    beta_floor: float = 0.0
    beta_tau: float = 1.0
    eps_reg: float = 1e-6
    x_lower: np.ndarray | None = None
    x_upper: np.ndarray | None = None
    barriers: tuple[Barrier, ...] = ()
    cbf: CbfParams = field(default_factory=CbfParams)
    terminal_weight: np.ndarray | None = None
    u_ref: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if np.max(np.abs(self.Q - self.Q.T)) > 1e-10:
            raise ValueError("Q must be symmetric")
        if np.max(np.abs(self.R - self.R.T)) > 1e-10:
            raise ValueError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(self.Q)) < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.R)) <= 0.0:
            raise ValueError("R must be positive definite")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        if self.beta_schedule not in ("constant", "exponential"):
            raise ValueError(f"unknown beta schedule {self.beta_schedule!r}")
        if self.eps_reg <= 0.0:
            raise ValueError("eps_reg must be positive")
        self.u_lower = np.asarray(self.u_lower, dtype=float).reshape(-1)
        self.u_upper = np.asarray(self.u_upper, dtype=float).reshape(-1)
        if self.u_lower.shape != self.u_upper.shape:
            raise ValueError("input box bounds must have equal length")
        if np.any(self.u_lower > self.u_upper):
            raise ValueError("input box must satisfy lower <= upper")
        for name in ("x_lower", "x_upper"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float).reshape(-1))
        if (self.x_lower is None) != (self.x_upper is None):
            raise ValueError("state box needs both bounds or neither")
        if self.x_lower is not None and np.any(self.x_lower > self.x_upper):
            raise ValueError("state box must satisfy lower <= upper")
        if self.terminal_weight is not None:
            P = np.asarray(self.terminal_weight, dtype=float)
            if np.max(np.abs(P - P.T)) > 1e-8:
                raise ValueError("terminal weight must be symmetric")
            self.terminal_weight = 0.5 * (P + P.T)
        if self.u_ref is None:
            self.u_ref = np.zeros(self.R.shape[0])
        else:
            self.u_ref = np.asarray(self.u_ref, dtype=float).reshape(-1)
            if self.u_ref.shape[0] != self.R.shape[0]:
                raise ValueError("u_ref length must match the input count")
        self.barriers = tuple(self.barriers)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def beta_at(self, step: int) -> float:
        if self.beta_schedule == "constant":
            return self.beta
        return max(self.beta_floor, self.beta * math.exp(-step / self.beta_tau))


@dataclass
class SqpSettings:
    """Iteration limits, tolerances and globalization knobs for the solver."""

    max_iters: int = 30
    qp_tolerance: float = 1e-8
    trust_region_radius: float = 10.0
    convergence_tol: float = 1e-7
    soft_cbf_weight: float = 1e4
    qp_max_iters: int = 20000

    def __post_init__(self):
        for name in ("max_iters", "qp_tolerance", "trust_region_radius",
                     "convergence_tol", "soft_cbf_weight", "qp_max_iters"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class MpcSolution:
    """Optimized input sequence plus the rollout and solve diagnostics."""

    U: np.ndarray            # m x Np
    Z: np.ndarray            # p x (Np + 1) predicted lifted trajectory
    J_task: float
    J_info: float
    status: str              # converged | max-iters | infeasible-relaxed
    sqp_iterations: int = 0
    qp_iterations: int = 0
    max_slack: float = 0.0
    gramian_min_eig: float = 0.0
    beta_effective: float = 0.0

    @property
    def first_input(self) -> np.ndarray:
        return self.U[:, 0].copy()


def rollout(model: LiftedModelEstimate, z0, U) -> tuple[np.ndarray, np.ndarray]:
    """Propagate z+ = A z + B u from z0 and stack the regressors.

    Returns (Z, V) with Z of shape p x (N+1) and V of shape (p+m) x N whose
    columns are [z_i; u_i] for the N applied inputs.
    """
    z0 = np.asarray(z0, dtype=float).reshape(-1)
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 1)
    m, N = U.shape
    p = z0.shape[0]
    if model.p != p or model.m != m:
        raise ValueError("model dimensions do not match z0/U")
    A, B = model.A, model.B
    Z = np.empty((p, N + 1))
    Z[:, 0] = z0
    for i in range(N):
        Z[:, i + 1] = A @ Z[:, i] + B @ U[:, i]
    if not np.all(np.isfinite(Z)):
        raise FloatingPointError("rollout produced non-finite states "
                                 "(model blowup)")
    # regressors are stacked in the model's scaled input convention so the
    # excitation Gramian matches the one the adaptation law sees
    V = np.vstack([Z[:, :N], U / model.input_scale[:, None]])
    return Z, V


def task_cost(Z, U, problem: MpcProblem, step: int = 0) -> float:
    """Tracking + input effort summed over the horizon's N steps.

    Uses the physical projection x_i = z_i[:n] and the reference at absolute
    steps step..step+N-1.  Input effort is measured relative to u_ref (e.g. a
    hover trim) so a steady holding input carries no cost.  The terminal
    endpoint weight, when configured, is accounted separately by the solver.
    """
    Z = np.asarray(Z, dtype=float)
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 1)
    n = problem.n
    total = 0.0
    for i in range(U.shape[1]):
        err = Z[:n, i] - np.asarray(problem.reference(step + i),
                                    dtype=float).reshape(-1)
        du = U[:, i] - problem.u_ref
        total += float(err @ problem.Q @ err) + float(du @ problem.R @ du)
    return total


def info_value(V, eps_reg: float) -> float:
    """log det(V V' + eps I), finite for any V thanks to the regularizer."""
    V = np.asarray(V, dtype=float)
    if eps_reg <= 0.0:
        raise ValueError("eps_reg must be positive")
    G = V @ V.T + eps_reg * np.eye(V.shape[0])
    sign, logdet = np.linalg.slogdet(G)
    if sign <= 0:
        raise FloatingPointError("regularized Gramian lost positivity")
    return float(logdet)


def info_gradient(V, eps_reg: float) -> np.ndarray:
    """Closed-form matrix gradient 2 (V V' + eps I)^-1 V of info_value."""
    V = np.asarray(V, dtype=float)
    if eps_reg <= 0.0:
        raise ValueError("eps_reg must be positive")
    G = V @ V.T + eps_reg * np.eye(V.shape[0])
    return 2.0 * np.linalg.solve(G, V)


def riccati_terminal_weight(A, B, Q_lift, R, max_iters: int = 2000,
                            tol: float = 1e-10) -> np.ndarray:
    """Fixed point of the discrete Riccati recursion for (A, B, Q_lift, R).

    Raises ValueError when the recursion fails to settle, which signals an
    unstabilizable model snapshot.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q_lift = np.asarray(Q_lift, dtype=float)
    R = np.asarray(R, dtype=float)
    P = Q_lift.copy()
    for _ in range(max_iters):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_new = Q_lift + A.T @ P @ (A - B @ K)
        P_new = 0.5 * (P_new + P_new.T)
        if np.max(np.abs(P_new - P)) <= tol * max(1.0, np.max(np.abs(P_new))):
            return P_new
        if not np.all(np.isfinite(P_new)):
            break
        P = P_new
    raise ValueError("Riccati recursion did not converge; "
                     "model snapshot may not be stabilizable")


def shift_warm_start(U) -> np.ndarray:
    """Shift the previous solution one step, repeating the final input."""
    U = np.asarray(U, dtype=float)
    return np.hstack([U[:, 1:], U[:, -1:]])


def _prediction_operators(model: LiftedModelEstimate, horizon: int):
    """Dense block operators s = Phi z0 + S u for the stacked trajectory.

    Block row j (0-based) of s is z_{j+1}; S has blocks A^(j-i) B below the
    diagonal (i <= j), and Phi stacks A, A^2, ..., A^N.
    """
    A, B = model.A, model.B
    p, m = model.p, model.m
    N = horizon
    Phi = np.empty((N * p, p))
    S = np.zeros((N * p, N * m))
    Ak = np.eye(p)
    powers = [Ak]
    for j in range(N):
        Ak = A @ Ak
        powers.append(Ak)
        Phi[j * p:(j + 1) * p] = Ak
    for j in range(N):
        for i in range(j + 1):
            S[j * p:(j + 1) * p, i * m:(i + 1) * m] = powers[j - i] @ B
    return Phi, S


class _QuadraticTaskModel:
    """Exact quadratic form of the task (+ terminal) cost in the input stack."""

    def __init__(self, problem: MpcProblem, model: LiftedModelEstimate,
                 z0: np.ndarray, step: int):
        N = problem.horizon
        p, m, n = model.p, model.m, problem.n
        self.N, self.p, self.m, self.n = N, p, m, n
        self.z0 = z0
        Phi, S = _prediction_operators(model, N)
        self.Phi, self.S = Phi, S
        Qz = np.zeros((p, p))
        Qz[:n, :n] = problem.Q
        refs = [np.asarray(problem.reference(step + i), dtype=float).reshape(-1)
                for i in range(N + 1)]
        self.refs = refs
        # stage weights on z_1..z_{N-1}; the endpoint carries the terminal
        # weight only (the tracking sum stops at the last *applied* input).
        # The lifted Riccati weight acts on the terminal tracking error
        # through its physical restriction, so the reference never needs a
        # lifted embedding.
        omega = np.zeros((N * p, N * p))
        b = np.zeros(N * p)
        for j in range(N - 1):
            omega[j * p:(j + 1) * p, j * p:(j + 1) * p] = Qz
            b[j * p:(j + 1) * p][:n] = problem.Q @ refs[j + 1]
        if problem.terminal_weight is not None:
            Pn = problem.terminal_weight[:n, :n]
            omega[(N - 1) * p:(N - 1) * p + n,
                  (N - 1) * p:(N - 1) * p + n] += Pn
            b[(N - 1) * p:(N - 1) * p + n] += Pn @ refs[N]
            self.terminal_phys = Pn
        else:
            self.terminal_phys = None
        Rbar = np.kron(np.eye(N), problem.R)
        self.H = 2.0 * (S.T @ omega @ S + Rbar)
        self.c = 2.0 * S.T @ (omega @ (Phi @ z0) - b) \
            - 2.0 * np.tile(problem.R @ problem.u_ref, N)
        self.terminal = problem.terminal_weight
        self.problem = problem
        self.step = step

    def gradient(self, u_vec: np.ndarray) -> np.ndarray:
        return self.H @ u_vec + self.c

    def value(self, Z: np.ndarray, U: np.ndarray) -> float:
        total = task_cost(Z, U, self.problem, self.step)
        if self.terminal_phys is not None:
            e = Z[:self.n, -1] - self.refs[self.N]
            total += float(e @ self.terminal_phys @ e)
        return total

    def state_jacobian(self, j: int) -> np.ndarray:
        """d x_j / d u_stack for predicted step j >= 1 (zeros for j = 0)."""
        if j == 0:
            return np.zeros((self.n, self.N * self.m))
        return self.S[(j - 1) * self.p:(j - 1) * self.p + self.n]


def _barrier_gradient(barrier: Barrier, x, fallback) -> np.ndarray:
    g = h_gradient(barrier, x)
    if barrier.kind != "halfspace" and np.linalg.norm(g) < _DEGENERATE_GRAD:
        direction = np.zeros(len(barrier.position_idx))
        if fallback is not None:
            d = np.asarray(fallback, dtype=float).reshape(-1)
            direction = d[list(barrier.position_idx)]
        if np.linalg.norm(direction) < 1e-12:
            direction[0] = 1.0
        direction /= np.linalg.norm(direction)
        scale = barrier.d_safe if barrier.kind == "circle" else barrier.d_min
        g = np.zeros(len(np.asarray(x).reshape(-1)))
        g[list(barrier.position_idx)] = 2.0 * scale * direction
    return g


def _constraint_rows(problem: MpcProblem, task: _QuadraticTaskModel,
                     Z: np.ndarray, delta: float):
    """Linearized hard (pointwise h >= 0, state box) and soft (decay) rows.

    Rows are expressed over the step d = u - u_current in a . d <= b form.
    """
    n, N = task.n, task.N
    X = [Z[:n, j] for j in range(N + 1)]
    hard_a, hard_b = [], []
    soft_a, soft_b = [], []
    for barrier in problem.barriers:
        for j in range(1, N + 1):
            prev = X[j - 1]
            g = _barrier_gradient(barrier, X[j], fallback=prev)
            row = g[:n] @ task.state_jacobian(j)
            # pointwise safety h(x_j) >= 0, linearized (conservative for
            # the convex distance barriers, exact for halfspaces)
            hard_a.append(-row)
            hard_b.append(h_value(barrier, X[j]))
            # decay row h(x_j) >= (1 - alpha) h(x_{j-1}) + L_h delta
            if problem.cbf.use_local_lipschitz:
                L_h = local_lipschitz(barrier, X[j], delta)
            else:
                L_h = problem.cbf.global_lh
            phi = (h_value(barrier, X[j])
                   - (1.0 - problem.cbf.alpha) * h_value(barrier, prev)
                   - L_h * delta)
            g_prev = _barrier_gradient(barrier, prev, fallback=None)
            row_decay = row - (1.0 - problem.cbf.alpha) * (
                g_prev[:n] @ task.state_jacobian(j - 1))
            soft_a.append(-row_decay)
            soft_b.append(phi)
    if problem.x_lower is not None:
        lo = problem.x_lower + delta
        hi = problem.x_upper - delta
        for j in range(1, N):
            J = task.state_jacobian(j)
            hard_a.extend(J)
            hard_b.extend(hi - X[j])
            hard_a.extend(-J)
            hard_b.extend(X[j] - lo)
    pack = lambda rows, rhs: (np.asarray(rows, dtype=float),
                              np.asarray(rhs, dtype=float))
    return pack(hard_a, hard_b), pack(soft_a, soft_b)


def _violations(problem: MpcProblem, Z: np.ndarray, delta: float,
                n: int) -> tuple[float, float]:
    """(hard, soft) constraint violation magnitudes of a rollout."""
    N = Z.shape[1] - 1
    X = [Z[:n, j] for j in range(N + 1)]
    hard = 0.0
    soft = 0.0
    for barrier in problem.barriers:
        for j in range(1, N + 1):
            h_j = h_value(barrier, X[j])
            hard += max(0.0, -h_j)
            if problem.cbf.use_local_lipschitz:
                L_h = local_lipschitz(barrier, X[j], delta)
            else:
                L_h = problem.cbf.global_lh
            phi = (h_j - (1.0 - problem.cbf.alpha) * h_value(barrier, X[j - 1])
                   - L_h * delta)
            soft += max(0.0, -phi)
    if problem.x_lower is not None:
        lo = problem.x_lower + delta
        hi = problem.x_upper - delta
        for j in range(1, N):
            hard += float(np.sum(np.maximum(0.0, X[j] - hi)))
            hard += float(np.sum(np.maximum(0.0, lo - X[j])))
    return hard, soft


def _info_chain_gradient(task: _QuadraticTaskModel, V: np.ndarray,
                         eps_reg: float, input_scale: np.ndarray) -> np.ndarray:
    """Gradient of info_value(rollout regressors) in the stacked raw input."""
    M = info_gradient(V, eps_reg)
    p, m, N = task.p, task.m, task.N
    grad = (M[p:] / input_scale[:, None]).ravel(order="F")
    for j in range(1, N):
        grad += task.S[(j - 1) * p:j * p].T @ M[:p, j]
    return grad


def solve(problem: MpcProblem, model: LiftedModelEstimate, z0,
          settings: SqpSettings, warm_start=None, *, step: int = 0,
          delta: float = 0.0) -> MpcSolution:
    """SQP solve of the active-learning MPC from the observed lifted state.

    The model snapshot stays frozen for the whole solve.  With beta = 0 the
    excitation term and its gradient are skipped in every iteration, so the
    result is the plain tracking MPC.
    """
    z0 = np.asarray(z0, dtype=float).reshape(-1)
    N, m = problem.horizon, problem.m
    beta = problem.beta_at(step)
    if warm_start is not None:
        U = np.asarray(warm_start, dtype=float).reshape(m, N).copy()
    else:
        U = np.zeros((m, N))
    U = np.clip(U, problem.u_lower[:, None], problem.u_upper[:, None])

    task = _QuadraticTaskModel(problem, model, z0, step)
    H_qp = psd_repair(0.5 * (task.H + task.H.T), 1e-10)
    w_soft = settings.soft_cbf_weight
    w_hard = _HARD_RELAX_FACTOR * w_soft

    def merit_of(Z, Umat):
        J = task.value(Z, Umat)
        if beta > 0.0:
            V_loc = np.vstack([Z[:, :N], Umat / model.input_scale[:, None]])
            J -= beta * info_value(V_loc, problem.eps_reg)
        hard, soft = _violations(problem, Z, delta, problem.n)
        return J, hard, soft, J + w_soft * soft + w_hard * hard

    Z, V = rollout(model, z0, U)
    J_cur, hard_cur, soft_cur, merit_cur = merit_of(Z, U)

    radius = settings.trust_region_radius
    relaxed_ever = False
    final_hard_slack = 0.0
    qp_iters = 0
    status = "max-iters"
    sqp_it = 0
    lo_u = np.tile(problem.u_lower, N)
    hi_u = np.tile(problem.u_upper, N)

    rebuild = True
    warm_duals = None
    g = None
    A_hard = b_hard = A_soft = b_soft = None
    radius_floor = max(1e-11, 0.01 * settings.convergence_tol)
    for sqp_it in range(1, settings.max_iters + 1):
        u_vec = U.ravel(order="F")
        if rebuild:
            g = task.gradient(u_vec)
            if beta > 0.0:
                g = g - beta * _info_chain_gradient(task, V, problem.eps_reg,
                                                    model.input_scale)
            (A_hard, b_hard), (A_soft, b_soft) = _constraint_rows(
                problem, task, Z, delta)
            rebuild = False
        lb = np.maximum(lo_u - u_vec, -radius)
        ub = np.minimum(hi_u - u_vec, radius)
        inst = QpInstance(
            H=H_qp, g=g, lb=lb, ub=ub,
            A_hard=A_hard if A_hard.size else None,
            b_hard=b_hard if b_hard.size else None,
            A_soft=A_soft if A_soft.size else None,
            b_soft=b_soft if b_soft.size else None,
            soft_weights=np.full(b_soft.shape[0], w_soft)
            if b_soft.size else None,
        )
        warm = None
        if warm_duals is not None and warm_duals.shape[0] == \
                A_hard.shape[0] + A_soft.shape[0] + u_vec.shape[0]:
            warm = (np.zeros(u_vec.shape[0]), warm_duals)
        res = qp_solve(inst, tol=settings.qp_tolerance,
                       max_iters=settings.qp_max_iters, warm=warm)
        qp_iters += res.iterations
        relaxed_here = False
        if res.status == "infeasible" and A_hard.size:
            # shift the hard rows into the penalty and keep going; the
            # solution is only reported safe if their slack returns to zero
            relaxed_here = True
            relaxed_ever = True
            A_all = np.vstack([A_soft, A_hard]) if A_soft.size else A_hard
            b_all = (np.concatenate([b_soft, b_hard])
                     if b_soft.size else b_hard)
            weights = np.concatenate([
                np.full(b_soft.shape[0], w_soft) if b_soft.size else [],
                np.full(b_hard.shape[0], w_hard),
            ])
            inst = QpInstance(H=H_qp, g=g, lb=lb, ub=ub,
                              A_soft=A_all, b_soft=b_all,
                              soft_weights=weights)
            res = qp_solve(inst, tol=settings.qp_tolerance,
                           max_iters=settings.qp_max_iters)
            qp_iters += res.iterations
        else:
            warm_duals = res.duals_all
        d = res.u
        step_norm = float(np.max(np.abs(d))) if d.size else 0.0
        if relaxed_here:
            soft_slack = float(np.sum(res.slacks[:b_soft.shape[0]]))
            hard_slack = float(np.sum(res.slacks[b_soft.shape[0]:]))
        else:
            soft_slack = float(np.sum(res.slacks)) if res.slacks.size else 0.0
            hard_slack = 0.0

        if step_norm <= settings.convergence_tol and res.converged:
            status = "converged"
            final_hard_slack = hard_slack
            break

        pred_dec = -(float(g @ d) + 0.5 * float(d @ H_qp @ d))
        pred_dec += w_soft * (soft_cur - soft_slack)
        pred_dec += w_hard * (hard_cur - hard_slack)

        U_cand = (u_vec + d).reshape(m, N, order="F")
        U_cand = np.clip(U_cand, problem.u_lower[:, None],
                         problem.u_upper[:, None])
        Z_cand, V_cand = rollout(model, z0, U_cand)
        J_c, hard_c, soft_c, merit_c = merit_of(Z_cand, U_cand)
        act_dec = merit_cur - merit_c

        if act_dec > 0.0 or (act_dec >= -1e-12 and step_norm <= 10 * settings.convergence_tol):
            U, Z, V = U_cand, Z_cand, V_cand
            J_cur, hard_cur, soft_cur, merit_cur = J_c, hard_c, soft_c, merit_c
            final_hard_slack = hard_slack
            rebuild = True
            good = pred_dec > 0.0 and 0.1 <= act_dec / pred_dec <= 10.0
            if good:
                radius = min(2.0 * radius, settings.trust_region_radius)
            else:
                radius = max(0.5 * radius, radius_floor)
        else:
            # the model and the rollout disagree; shrink and retry from
            # the same linearization
            radius = 0.25 * radius
            if radius <= radius_floor:
                if res.converged:
                    status = "converged"
                    final_hard_slack = hard_slack
                break

    Z, V = rollout(model, z0, U)
    J_task = task_cost(Z, U, problem, step)
    try:
        J_info = info_value(V, problem.eps_reg)
    except FloatingPointError:
        # reporting only; overflow on a wildly scaled rollout is not fatal
        J_info = float("nan")
    G_hat = V @ V.T
    lam_min = float(np.min(np.linalg.eigvalsh(0.5 * (G_hat + G_hat.T))))
    if relaxed_ever and final_hard_slack > settings.qp_tolerance:
        status = "infeasible-relaxed"
    return MpcSolution(
        U=U, Z=Z, J_task=J_task, J_info=J_info, status=status,
        sqp_iterations=sqp_it, qp_iterations=qp_iters,
        max_slack=final_hard_slack, gramian_min_eig=lam_min,
        beta_effective=beta,
    )


@dataclass
class SensitivityReport:
    """Outcome of the first-order beta-expansion check."""

    betas: tuple[float, ...]
    residuals: tuple[float, ...]
    coefficient: float
    r_squared: float
    skipped: bool = False
    reason: str = ""


def _fd_gradient(f, u0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(u0)
    for i in range(u0.size):
        e = np.zeros_like(u0)
        e[i] = h
        g[i] = (f(u0 + e) - f(u0 - e)) / (2.0 * h)
    return g


def _fd_hessian(f, u0: np.ndarray, h: float = 1e-4) -> np.ndarray:
    d = u0.size
    H = np.zeros((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        for j in range(i, d):
            ej = np.zeros(d)
            ej[j] = h
            val = (f(u0 + ei + ej) - f(u0 + ei - ej)
                   - f(u0 - ei + ej) + f(u0 - ei - ej)) / (4.0 * h * h)
            H[i, j] = H[j, i] = val
    return H


def first_order_sensitivity_check(
        problem: MpcProblem, model: LiftedModelEstimate, z0,
        settings: SqpSettings,
        betas: Sequence[float] = (1e-4, 2e-4, 4e-4, 7e-4, 1e-3),
) -> SensitivityReport:
    """Check U(beta) = U(0) + beta H^-1 grad + O(beta^2) at an interior optimum.

    H and the excitation gradient are estimated by central finite differences
    at the beta = 0 solution, making the comparison independent of the
    solver's own derivative code.  Active constraints at the nominal optimum
    make the expansion invalid, so the check reports itself as skipped.
    """
    z0 = np.asarray(z0, dtype=float).reshape(-1)
    base = MpcProblem(
        horizon=problem.horizon, Q=problem.Q, R=problem.R,
        reference=problem.reference, u_lower=problem.u_lower,
        u_upper=problem.u_upper, beta=0.0, eps_reg=problem.eps_reg,
        x_lower=problem.x_lower, x_upper=problem.x_upper,
        barriers=problem.barriers, cbf=problem.cbf,
        terminal_weight=problem.terminal_weight)
    nom = solve(base, model, z0, settings)
    u_nom = nom.U.ravel(order="F")

    margin = 1e-6 * np.maximum(1.0, np.abs(problem.u_upper - problem.u_lower))
    lo_gap = u_nom - np.tile(problem.u_lower, problem.horizon)
    hi_gap = np.tile(problem.u_upper, problem.horizon) - u_nom
    if np.any(lo_gap < np.tile(margin, problem.horizon)) or \
       np.any(hi_gap < np.tile(margin, problem.horizon)):
        return SensitivityReport(tuple(betas), (), 0.0, 0.0, skipped=True,
                                 reason="input bound active at the nominal "
                                        "optimum")
    hard, soft = _violations(problem, nom.Z, 0.0, problem.n)
    if hard > 1e-9 or soft > 1e-9 or nom.max_slack > 1e-9:
        return SensitivityReport(tuple(betas), (), 0.0, 0.0, skipped=True,
                                 reason="barrier or state constraint active "
                                        "at the nominal optimum")

    task = _QuadraticTaskModel(problem, model, z0, 0)

    def task_of(u_vec):
        Umat = u_vec.reshape(problem.m, problem.horizon, order="F")
        Z, _ = rollout(model, z0, Umat)
        return task.value(Z, Umat)

    def info_of(u_vec):
        Umat = u_vec.reshape(problem.m, problem.horizon, order="F")
        _, V = rollout(model, z0, Umat)
        return info_value(V, problem.eps_reg)

    H = _fd_hessian(task_of, u_nom)
    grad = _fd_gradient(info_of, u_nom)
    predicted_dir = np.linalg.solve(H, grad)

    residuals = []
    for b in betas:
        pb = MpcProblem(
            horizon=problem.horizon, Q=problem.Q, R=problem.R,
            reference=problem.reference, u_lower=problem.u_lower,
            u_upper=problem.u_upper, beta=float(b), eps_reg=problem.eps_reg,
            x_lower=problem.x_lower, x_upper=problem.x_upper,
            barriers=problem.barriers, cbf=problem.cbf,
            terminal_weight=problem.terminal_weight)
        sol = solve(pb, model, z0, settings, warm_start=nom.U)
        u_al = sol.U.ravel(order="F")
        residuals.append(float(np.linalg.norm(
            u_al - u_nom - b * predicted_dir)))

    b2 = np.asarray(betas, dtype=float) ** 2
    r = np.asarray(residuals)
    coeff = float(b2 @ r / (b2 @ b2)) if np.any(b2 > 0) else 0.0
    fitted = coeff * b2
    ss_res = float(np.sum((r - fitted) ** 2))
    ss_tot = float(np.sum((r - np.mean(r)) ** 2))
    r_sq = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return SensitivityReport(tuple(float(b) for b in betas),
                             tuple(residuals), coeff, r_sq)


def gramian_floor_check(solutions: Sequence[MpcSolution]) -> float:
    """Smallest predicted-Gramian eigenvalue reached across a scenario."""
    if not solutions:
        raise ValueError("no solutions supplied")
    floors = []
    for sol in solutions:
        N = sol.U.shape[1]
        V = np.vstack([sol.Z[:, :N], sol.U])
        G = V @ V.T
        floors.append(float(np.min(np.linalg.eigvalsh(0.5 * (G + G.T)))))
    return min(floors)
