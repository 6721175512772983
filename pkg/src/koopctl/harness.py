"""Closed-loop scenario runner: wiring, metrics, CSV artifacts, sweeps.

The per-step order is fixed and version-checked:

    observe -> encode -> solve MPC (frozen model) -> apply input ->
    integrate plant over dt_ctrl -> observe next -> push window ->
    disturbance score + tightening update -> adapt model

so the disturbance score always uses the pre-update model and the solve at
step k+1 sees the post-update one.  Wall-clock timings are quarantined in
their own CSV so every other artifact is byte-reproducible for a fixed
config and seed.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mpc
from .adaptation import (AdaptationWindow, ContractionEnvelope,
                         LiftedModelEstimate, auto_step_size,
                         contraction_factor)
from .config import (MpcConfig, ScenarioConfig, build_barriers,
                     build_dictionary, build_plant, build_reference,
                     build_shift)
from .lifting import TrainingBatch, encode, identify_nominal, selector_matrix
from .plants import ManipulatorPlant, QuadrotorPlant, observe, rk4_step
from .references import velocity as ref_velocity
from .safety import CbfParams, h_value, monitor_step
from .tightening import TighteningState, delta_analytical

N_PRED = 15           # open-loop prediction horizon of the e_dyn metric
SCHEMA_VERSION = "v1"


class RunError(RuntimeError):
    """A scenario aborted; the message carries the failing step."""


@dataclass
class RunMetrics:
    """Aggregate results of one closed-loop run."""

    steps: int
    seed: int
    rmse_m: float
    rmse_steady_m: float
    terminal_e_dyn: float
    settling_time_s: float
    collisions: int
    decay_misses: int
    coverage_miss_rate: float
    gramian_floor: float
    mean_solve_time_s: float
    n_converged: int
    n_max_iters: int
    n_infeasible_relaxed: int
    e_dyn: np.ndarray = field(repr=False, default_factory=lambda: np.array([]))


@dataclass
class RunResult:
    metrics: RunMetrics
    step_rows: list[dict]
    timing_rows: list[dict]
    summary_row: dict


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def generate_training_batch(plant, id_cfg, run_cfg, anchor_state,
                            baseline_input, u_lower, u_upper) -> TrainingBatch:
    """Filtered-white-noise excitation about one or more operating points.

    Each trajectory starts at an anchor state plus a small jitter and
    applies baseline(state) + amplitude * low-pass(noise), sampled at the
    control rate while integrating at the simulation rate.  anchor_state is
    a single state vector or a (state_dim, count) column stack; trajectories
    cycle through the columns, which lets a configuration-dependent plant be
    excited along its whole operating envelope.
    """
    rng = np.random.default_rng(id_cfg.seed)
    sub = round(run_cfg.dt_ctrl_s / run_cfg.dt_sim_s)
    m = plant.input_dim
    anchors = np.asarray(anchor_state, dtype=float)
    if anchors.ndim == 1:
        anchors = anchors[:, None]
    X, Y, U = [], [], []
    for traj in range(id_cfg.trajectories):
        anchor = anchors[:, traj % anchors.shape[1]]
        x = anchor + rng.normal(0.0, 0.2, size=anchor.shape)
        filt = np.zeros(m)
        for _ in range(id_cfg.length_steps):
            filt = id_cfg.smoothing * filt \
                + (1.0 - id_cfg.smoothing) * rng.normal(size=m)
            u = baseline_input(x) + id_cfg.excitation_amplitude * filt
            u = np.clip(u, u_lower, u_upper)
            x_next = x
            for i in range(sub):
                t_now = (len(X) * sub + i) * run_cfg.dt_sim_s
                x_next = rk4_step(
                    lambda s, uu: plant.derivative(s, uu, t_now),
                    x_next, u, run_cfg.dt_sim_s)
            if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next)) > 1e6:
                raise RunError("identification trajectory diverged; "
                               "reduce excitation_amplitude")
            X.append(x)
            Y.append(x_next)
            U.append(u)
            x = x_next
    return TrainingBatch(X=np.column_stack(X), Y=np.column_stack(Y),
                         U=np.column_stack(U))


def _baseline_input(plant):
    if isinstance(plant, QuadrotorPlant):
        hover = plant.hover_thrusts()
        return lambda x: hover.copy()
    if isinstance(plant, ManipulatorPlant):
        nl = plant.n_links
        return lambda x: plant.gravity_vector(x[:nl])
    return lambda x: np.zeros(plant.input_dim)


def _input_bounds(cfg: MpcConfig, plant) -> tuple[np.ndarray, np.ndarray]:
    if cfg.u_lower is not None and cfg.u_upper is not None:
        return (np.asarray(cfg.u_lower, dtype=float),
                np.asarray(cfg.u_upper, dtype=float))
    if isinstance(plant, QuadrotorPlant):
        return plant.input_bounds()
    raise RunError("mpc block must set u_lower/u_upper for this plant")


def make_state_reference(cfg: ScenarioConfig, plant):
    """Absolute step index -> full physical reference state."""
    gen = build_reference(cfg.mpc)
    dt = cfg.run.dt_ctrl_s
    cache: dict[int, np.ndarray] = {}

    if isinstance(plant, ManipulatorPlant):
        def joint_ref(t: float) -> np.ndarray:
            return plant.inverse_kinematics(gen.position(t),
                                            cfg.mpc.tool_angle_rad,
                                            elbow_up=cfg.mpc.elbow_up)

        def reference(k: int) -> np.ndarray:
            if k not in cache:
                t = k * dt
                th = joint_ref(t)
                h = max(dt, 1e-4)
                th_dot = (joint_ref(t + h) - joint_ref(t - h)) / (2.0 * h)
                cache[k] = np.concatenate([th, th_dot])
            return cache[k]
        return reference

    if isinstance(plant, QuadrotorPlant):
        def reference(k: int) -> np.ndarray:
            if k not in cache:
                t = k * dt
                pos = gen.position(t)
                vel = ref_velocity(gen, t)
                cache[k] = np.array([pos[0], pos[1], 0.0,
                                     vel[0], vel[1], 0.0])
            return cache[k]
        return reference

    def reference(k: int) -> np.ndarray:
        if k not in cache:
            t = k * dt
            pos = gen.position(t)
            vel = ref_velocity(gen, t)
            cache[k] = np.concatenate([pos, vel])
        return cache[k]
    return reference


def initial_state(cfg: ScenarioConfig, plant, reference) -> np.ndarray:
    """Start on the reference with zero velocity components."""
    ref0 = reference(0)
    x0 = np.array(ref0, dtype=float)
    half = x0.shape[0] // 2
    x0[half:] = 0.0
    if isinstance(plant, QuadrotorPlant):
        x0[2] = 0.0
    return x0


def compute_e_dyn(W: np.ndarray, dictionary, X_true: np.ndarray,
                  U: np.ndarray, n_pred: int = N_PRED,
                  input_scale=None) -> float:
    """RMS physical prediction error of an n_pred-step open-loop rollout.

    X_true has n_pred+1 state columns (start plus truth to compare against),
    U the n_pred applied inputs.  input_scale is the model's input-channel
    normalisation (ones when omitted).
    """
    if X_true.shape[1] < n_pred + 1 or U.shape[1] < n_pred:
        raise ValueError("trajectory slice shorter than the prediction horizon")
    n = X_true.shape[0]
    p = W.shape[0]
    scale = np.ones(U.shape[0]) if input_scale is None else \
        np.asarray(input_scale, dtype=float).reshape(-1)
    z = encode(X_true[:, 0], dictionary)
    total = 0.0
    for j in range(n_pred):
        z = W @ np.concatenate([z, U[:, j] / scale])
        err = z[:n] - X_true[:, j + 1]
        total += float(err @ err)
    return math.sqrt(total / n_pred)


def _cartesian_error(plant, x_true: np.ndarray, ref_state: np.ndarray) -> float:
    if isinstance(plant, ManipulatorPlant):
        nl = plant.n_links
        ee = plant.end_effector(x_true[:nl])
        ee_ref = plant.end_effector(ref_state[:nl])
        return float(np.linalg.norm(ee - ee_ref))
    return float(np.linalg.norm(x_true[:2] - ref_state[:2]))


def settling_time(e_dyn: np.ndarray, dt: float,
                  steady_window_s: float = 0.5) -> float:
    """First time e_dyn enters and stays within 10% of its steady value.

    The steady value is the median over the trailing window; returns nan
    when the series never settles or is empty.
    """
    valid = e_dyn[np.isfinite(e_dyn)]
    if valid.size == 0:
        return float("nan")
    tail = max(1, int(round(steady_window_s / dt)))
    steady = float(np.median(valid[-tail:]))
    band = 0.1 * abs(steady)
    inside = np.abs(valid - steady) <= band + 1e-15
    idx = valid.size
    for i in range(valid.size - 1, -1, -1):
        if not inside[i]:
            break
        idx = i
    if idx >= valid.size:
        return float("nan")
    return idx * dt


def step_columns(n: int, m: int) -> list[str]:
    cols = ["k", "t_s"]
    cols += [f"x_true_{i}" for i in range(n)]
    cols += [f"x_obs_{i}" for i in range(n)]
    cols += [f"x_ref_{i}" for i in range(n)]
    cols += [f"u_{i}" for i in range(m)]
    cols += ["delta", "s_norm", "r_k", "delta_warmup", "delta_conf",
             "delta_ana", "e_dyn", "J_task", "J_info", "beta",
             "sqp_iters", "qp_iters", "status", "lambda_min_gramian",
             "max_slack", "min_h", "hard_violations", "decay_misses",
             "coverage_miss", "rho_k", "e_pred_norm",
             "model_version_used", "model_version_after"]
    return cols


SUMMARY_COLUMNS = [
    "schema", "steps", "seed", "rmse_m", "rmse_steady_m", "terminal_e_dyn",
    "settling_time_s", "collisions", "decay_misses", "coverage_miss_rate",
    "gramian_floor", "n_converged", "n_max_iters", "n_infeasible_relaxed",
]

TIMING_COLUMNS = ["k", "solve_time_s", "step_time_s"]


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None
                 ) -> RunResult:
    """Execute one closed-loop scenario and optionally write its CSVs."""
    run = cfg.run
    rng = np.random.default_rng(run.seed)
    sub = round(run.dt_ctrl_s / run.dt_sim_s)

    base_plant = build_plant(cfg.plant)
    shift = build_shift(run)
    shifted_plant = base_plant.shifted(shift)
    n, m = base_plant.state_dim, base_plant.input_dim

    dictionary = build_dictionary(cfg.dictionary, n)
    reference = make_state_reference(cfg, base_plant)
    u_lo, u_hi = _input_bounds(cfg.mpc, base_plant)
    x0 = initial_state(cfg, base_plant, reference)

    if isinstance(base_plant, ManipulatorPlant):
        # configuration-dependent dynamics: excite about reference samples
        # spread over one full reference cycle (falling back to the run
        # length for aperiodic references) rather than the single starting
        # configuration, so the identified model covers the whole workspace
        # the tracking task will visit
        period_s = getattr(build_reference(cfg.mpc), "period", None)
        span = run.steps if not period_s else \
            int(round(period_s / run.dt_ctrl_s))
        idx = np.linspace(0.0, span, cfg.identification.trajectories,
                          endpoint=False)
        anchor = np.column_stack([reference(int(j)) for j in idx])
    else:
        anchor = x0
    batch = generate_training_batch(base_plant, cfg.identification, run,
                                    anchor, _baseline_input(base_plant),
                                    u_lo, u_hi)
    nominal = identify_nominal(batch, dictionary,
                               ridge=cfg.identification.ridge,
                               input_scale="auto")
    p = nominal.p
    u_scale = nominal.input_scale

    estimate = LiftedModelEstimate(W=nominal.stacked(), p=p, m=m,
                                   eta=cfg.adaptation.eta,
                                   input_scale=u_scale)
    window = AdaptationWindow(cfg.adaptation.window_size, p + m, p,
                              gamma=cfg.adaptation.gamma)
    envelope = ContractionEnvelope(
        e0_norm=cfg.adaptation.initial_error_bound,
        nu=cfg.adaptation.drift_bound,
        window_size=cfg.adaptation.window_size,
        v_max_floor=cfg.adaptation.v_max_floor)
    ts = TighteningState(dim=n, alpha_ema=cfg.tightening.alpha_ema,
                         chi=cfg.tightening.chi, eps_ema=cfg.tightening.eps_ema,
                         n_conf=cfg.tightening.n_conf,
                         k_warm=cfg.tightening.k_warm)

    barriers = build_barriers(cfg.mpc.barriers)
    cbf = CbfParams(alpha=cfg.mpc.cbf_alpha,
                    use_local_lipschitz=cfg.mpc.use_local_lipschitz,
                    global_lh=cfg.mpc.global_lipschitz)
    q = np.asarray(cfg.mpc.q_diag if cfg.mpc.q_diag else (1.0,) * n)
    r = np.asarray(cfg.mpc.r_diag if cfg.mpc.r_diag else (0.01,) * m)
    if q.shape[0] != n or r.shape[0] != m:
        raise RunError("q_diag/r_diag lengths do not match the plant")
    Q, R = np.diag(q), np.diag(r)
    C = selector_matrix(n, p)
    Q_lift = C.T @ Q @ C

    terminal = None
    W_term_ref = None
    if cfg.mpc.terminal == "riccati":
        # lifted models often carry weakly controllable spurious modes just
        # outside the unit circle, in which case no stabilizing solution
        # exists and the loop runs on the horizon cost alone
        try:
            terminal = mpc.riccati_terminal_weight(estimate.A, estimate.B,
                                                   Q_lift, R)
            W_term_ref = estimate.W.copy()
        except ValueError:
            terminal = None

    problem = mpc.MpcProblem(
        horizon=cfg.mpc.horizon, Q=Q, R=R, reference=reference,
        u_lower=u_lo, u_upper=u_hi, beta=cfg.mpc.beta,
        beta_schedule=cfg.mpc.beta_schedule, beta_floor=cfg.mpc.beta_floor,
        beta_tau=cfg.mpc.beta_tau_steps, eps_reg=cfg.mpc.eps_reg,
        x_lower=cfg.mpc.x_lower, x_upper=cfg.mpc.x_upper, barriers=barriers,
        cbf=cbf, terminal_weight=terminal, u_ref=cfg.mpc.u_ref)
    settings = mpc.SqpSettings(
        max_iters=cfg.mpc.sqp_max_iters, qp_tolerance=cfg.mpc.qp_tolerance,
        trust_region_radius=cfg.mpc.trust_region,
        convergence_tol=cfg.mpc.convergence_tol,
        soft_cbf_weight=cfg.mpc.soft_cbf_weight,
        qp_max_iters=cfg.mpc.qp_max_iters)

    x_true = x0.copy()
    x_obs = observe(x_true, run.noise_std, rng)
    # a cold start around the hold input keeps the first rollout near the
    # operating point instead of predicting a free fall through the barriers
    u_hold = np.clip(_baseline_input(base_plant)(x0), u_lo, u_hi)
    warm = np.tile(u_hold.reshape(-1, 1), (1, cfg.mpc.horizon))
    adapt_count = 0
    last_version_after = estimate.version

    states = [x_true.copy()]
    inputs: list[np.ndarray] = []
    snapshots: deque[np.ndarray] = deque(maxlen=N_PRED)
    e_dyn = np.full(run.steps, float("nan"))
    step_rows: list[dict] = []
    timing_rows: list[dict] = []
    cart_errors: list[float] = []
    collisions = 0
    decay_misses = 0
    coverage_misses = 0
    coverage_total = 0
    gramian_floor = float("inf")
    solve_times: list[float] = []
    status_counts = {"converged": 0, "max-iters": 0, "infeasible-relaxed": 0}

    for k in range(run.steps):
        step_t0 = time.perf_counter()
        try:
            version_used = estimate.version
            if version_used != last_version_after:
                raise RunError("model version bookkeeping out of order")
            z_obs = encode(x_obs, dictionary)
            snapshots.append(estimate.W.copy())

            delta_conf_k = float("nan")
            if cfg.tightening.mode == "none":
                delta_k = 0.0
            elif cfg.tightening.mode == "conformal":
                delta_k = ts.delta_implemented(k)
                delta_conf_k = delta_k
            elif cfg.tightening.mode == "analytical":
                delta_k = delta_analytical(envelope, adapt_count)
            else:
                delta_conf_k = ts.delta_implemented(k)
                delta_k = max(delta_conf_k, delta_analytical(envelope,
                                                             adapt_count))

            t_solve0 = time.perf_counter()
            sol = mpc.solve(problem, estimate, z_obs, settings,
                            warm_start=warm, step=k, delta=delta_k)
            solve_time = time.perf_counter() - t_solve0
            solve_times.append(solve_time)
            status_counts[sol.status] = status_counts.get(sol.status, 0) + 1
            gramian_floor = min(gramian_floor, sol.gramian_min_eig)
            warm = mpc.shift_warm_start(sol.U)
            u = np.clip(sol.first_input, u_lo, u_hi)

            plant_k = shifted_plant if k >= shift.activation_step else base_plant
            x_prev_true = x_true.copy()
            hard_this_step = 0
            min_h_step = float("inf")
            for i in range(sub):
                t_now = (k * sub + i) * run.dt_sim_s
                x_true = rk4_step(
                    lambda s, uu: plant_k.derivative(s, uu, t_now),
                    x_true, u, run.dt_sim_s)
                for b in barriers:
                    hv = h_value(b, x_true)
                    min_h_step = min(min_h_step, hv)
                    if hv < 0.0:
                        hard_this_step += 1
            collisions += hard_this_step

            report = monitor_step(barriers, x_true, x_prev_true, cbf)
            decay_misses += report.decay_misses

            x_obs_next = observe(x_true, run.noise_std, rng)
            z_next = encode(x_obs_next, dictionary)
            v = np.concatenate([z_obs, u / u_scale])
            # the tightening works on the physical-space disturbance: the
            # lifted innovation projected through the state selector
            s_vec = (z_next - estimate.predict(v))[:n]
            s_norm = float(np.linalg.norm(s_vec))

            window.push(v, z_next)
            r_k = ts.observe_disturbance(s_vec)
            envelope.observe_regressor(v)

            # closed-loop conformal coverage: did the centered score exceed
            # the quantile margin that was in force when the step ran?
            # Reported only, never asserted -- the loop breaks exchangeability.
            miss = float("nan")
            if math.isfinite(delta_conf_k) and k >= ts.k_warm:
                coverage_total += 1
                miss = 1 if r_k > delta_conf_k else 0
                coverage_misses += int(miss)

            rho_k = float("nan")
            e_pred = float("nan")
            # hold off until the window carries a few regressors: a rank-1
            # Gramian makes the first correction a full Kaczmarz step that can
            # rewrite the input columns from a single bad sample
            warmed = window.fill >= min(5, cfg.adaptation.window_size)
            if cfg.adaptation.enabled and warmed:
                G = window.gramian()
                if cfg.adaptation.eta_policy == "auto":
                    estimate.eta = auto_step_size(G)
                rho_k = contraction_factor(G, estimate.eta)
                e_pred = estimate.adapt(window)
                envelope.observe_contraction(rho_k, estimate.eta)
                adapt_count += 1
                if W_term_ref is not None:
                    drift = np.linalg.norm(estimate.W - W_term_ref)
                    if drift > 0.01 * np.linalg.norm(W_term_ref):
                        try:
                            problem.terminal_weight = \
                                mpc.riccati_terminal_weight(
                                    estimate.A, estimate.B, Q_lift, R)
                            W_term_ref = estimate.W.copy()
                        except ValueError:
                            pass  # keep the previous terminal weight
            last_version_after = estimate.version

            states.append(x_true.copy())
            inputs.append(u.copy())
            ref_k = reference(k)
            cart_errors.append(_cartesian_error(base_plant, x_prev_true, ref_k))

            j = k + 1 - N_PRED
            if j >= 0:
                X_slice = np.column_stack(states[j:j + N_PRED + 1])
                U_slice = np.column_stack(inputs[j:j + N_PRED])
                e_dyn[j] = compute_e_dyn(snapshots[0], dictionary,
                                         X_slice, U_slice,
                                         input_scale=u_scale)

            row = {"k": k, "t_s": k * run.dt_ctrl_s,
                   "delta": delta_k, "s_norm": s_norm, "r_k": r_k,
                   "delta_warmup": ts.delta_warmup(),
                   "delta_conf": ts.delta_conformal(),
                   "delta_ana": delta_analytical(envelope, adapt_count),
                   "e_dyn": float("nan"),
                   "J_task": sol.J_task, "J_info": sol.J_info,
                   "beta": sol.beta_effective,
                   "sqp_iters": sol.sqp_iterations,
                   "qp_iters": sol.qp_iterations, "status": sol.status,
                   "lambda_min_gramian": sol.gramian_min_eig,
                   "max_slack": sol.max_slack,
                   "min_h": min_h_step if barriers else float("nan"),
                   "hard_violations": hard_this_step,
                   "decay_misses": report.decay_misses,
                   "coverage_miss": miss,
                   "rho_k": rho_k, "e_pred_norm": e_pred,
                   "model_version_used": version_used,
                   "model_version_after": estimate.version}
            for i in range(n):
                row[f"x_true_{i}"] = x_prev_true[i]
                row[f"x_obs_{i}"] = x_obs[i]
                row[f"x_ref_{i}"] = ref_k[i]
            for i in range(m):
                row[f"u_{i}"] = u[i]
            step_rows.append(row)
            timing_rows.append({"k": k, "solve_time_s": solve_time,
                                "step_time_s": time.perf_counter() - step_t0})
            x_obs = x_obs_next
        except RunError:
            raise
        except Exception as exc:
            raise RunError(f"step {k}: {type(exc).__name__}: {exc}") from exc

    for j in range(run.steps):
        step_rows[j]["e_dyn"] = float(e_dyn[j])

    cart = np.asarray(cart_errors)
    rmse = float(np.sqrt(np.mean(cart ** 2))) if cart.size else float("nan")
    half = cart.size // 2
    rmse_steady = float(np.sqrt(np.mean(cart[half:] ** 2))) \
        if cart.size - half > 0 else float("nan")
    valid = e_dyn[np.isfinite(e_dyn)]
    if valid.size:
        tail = max(1, valid.size // 10)
        terminal_e = float(np.mean(valid[-tail:]))
    else:
        terminal_e = float("nan")
    t_s = settling_time(e_dyn, run.dt_ctrl_s)
    cov_rate = coverage_misses / coverage_total if coverage_total else float("nan")
    mean_solve = float(np.mean(solve_times)) if solve_times else float("nan")

    metrics = RunMetrics(
        steps=run.steps, seed=run.seed, rmse_m=rmse,
        rmse_steady_m=rmse_steady, terminal_e_dyn=terminal_e,
        settling_time_s=t_s, collisions=collisions,
        decay_misses=decay_misses, coverage_miss_rate=cov_rate,
        gramian_floor=gramian_floor if solve_times else float("nan"),
        mean_solve_time_s=mean_solve,
        n_converged=status_counts.get("converged", 0),
        n_max_iters=status_counts.get("max-iters", 0),
        n_infeasible_relaxed=status_counts.get("infeasible-relaxed", 0),
        e_dyn=e_dyn)

    summary_row = {"schema": SCHEMA_VERSION, "steps": metrics.steps,
                   "seed": metrics.seed, "rmse_m": metrics.rmse_m,
                   "rmse_steady_m": metrics.rmse_steady_m,
                   "terminal_e_dyn": metrics.terminal_e_dyn,
                   "settling_time_s": metrics.settling_time_s,
                   "collisions": metrics.collisions,
                   "decay_misses": metrics.decay_misses,
                   "coverage_miss_rate": metrics.coverage_miss_rate,
                   "gramian_floor": metrics.gramian_floor,
                   "n_converged": metrics.n_converged,
                   "n_max_iters": metrics.n_max_iters,
                   "n_infeasible_relaxed": metrics.n_infeasible_relaxed}

    result = RunResult(metrics=metrics, step_rows=step_rows,
                       timing_rows=timing_rows, summary_row=summary_row)
    if out_dir is not None:
        write_run(result, Path(out_dir), n, m)
    return result


def write_run(result: RunResult, out_dir: Path, n: int, m: int) -> None:
    """Emit steps.csv + summary.csv (deterministic) and timing.csv (not)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "steps.csv", step_columns(n, m), result.step_rows)
    write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, [result.summary_row])
    timing = list(result.timing_rows)
    mean_solve = result.metrics.mean_solve_time_s
    timing.append({"k": "mean", "solve_time_s": mean_solve,
                   "step_time_s": float("nan")})
    write_csv(out_dir / "timing.csv", TIMING_COLUMNS, timing)


def replay(run_dir: str | Path) -> list[dict]:
    """Re-read a finished run's CSVs into plot-ready dict rows."""
    run_dir = Path(run_dir)
    path = run_dir / "steps.csv"
    if not path.exists():
        raise RunError(f"no steps.csv under {run_dir}")
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def sweep(cfg: ScenarioConfig, grid: dict[str, list],
          out_dir: str | Path | None = None, jobs: int = 1) -> list[dict]:
    """Run the config at every point of a dotted-key parameter grid."""
    if not grid:
        raise ValueError("sweep grid must be nonempty")
    from .config import apply_overrides
    keys = sorted(grid)
    points = [dict(zip(keys, combo))
              for combo in itertools.product(*(grid[k] for k in keys))]
    configs = [apply_overrides(cfg, point) for point in points]
    out_dir = Path(out_dir) if out_dir is not None else None

    def dir_for(i: int) -> Path | None:
        return out_dir / f"point_{i:03d}" if out_dir is not None else None

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_scenario, configs,
                                    [dir_for(i) for i in range(len(points))]))
    else:
        results = [run_scenario(c, dir_for(i))
                   for i, c in enumerate(configs)]

    rows = []
    for i, (point, res) in enumerate(zip(points, results)):
        row = {"point": i}
        row.update({k: point[k] for k in keys})
        row.update(res.summary_row)
        rows.append(row)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        cols = ["point"] + keys + SUMMARY_COLUMNS
        write_csv(out_dir / "sweep.csv", cols, rows)
    return rows


def verify(suite: str) -> dict:
    """Run a registered acceptance suite; report one line per criterion."""
    from . import acceptance
    return acceptance.run_suite(suite)
