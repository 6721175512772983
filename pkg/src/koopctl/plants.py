"""Ground-truth continuous-time plants with injectable parameter shift.

Three simulated systems share the integrate/observe interface: a planar
quadrotor in wind, a planar 3R torque-controlled manipulator, and a plain
LTI plant used for end-to-end sanity runs.  All integrate with classical
fixed-step RK4 and expose derivatives separately so tests can poke at the
physics directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

_SINGULAR_COND = 1e12


@dataclass(frozen=True)
class WindProfile:
    """Wind speed/direction over time: constant, ramp, or sinusoidal gust."""

    kind: str = "constant"
    speed: float = 0.0          # m/s at t = 0
    angle: float = 0.0          # rad, direction the wind blows toward
    rate: float = 0.0           # m/s per s (ramp)
    amplitude: float = 0.0      # m/s (sinusoidal)
    period: float = 1.0         # s (sinusoidal)

    def __post_init__(self):
        if self.kind not in ("constant", "ramp", "sinusoidal"):
            raise ValueError(f"unknown wind profile kind {self.kind!r}")
        if self.kind == "sinusoidal" and self.period <= 0:
            raise ValueError("sinusoidal wind needs a positive period")

    def value(self, t: float) -> tuple[float, float]:
        """(v_w, alpha_w) at time t; speed never goes negative."""
        if self.kind == "constant":
            v = self.speed
        elif self.kind == "ramp":
            v = self.speed + self.rate * t
        else:
            v = self.speed + self.amplitude * math.sin(
                2.0 * math.pi * t / self.period)
        return max(v, 0.0), self.angle


@dataclass(frozen=True)
class ShiftSpec:
    """Deployment-time parameter change, activated at a single control step."""

    mass_scale: float = 1.0
    wind: WindProfile | None = None
    resistive_fraction: float = 0.0
    activation_step: int = 0

    def __post_init__(self):
        if self.mass_scale <= 0:
            raise ValueError("mass_scale must be positive")
        if not 0.0 <= self.resistive_fraction < 1.0:
            raise ValueError("resistive_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class QuadrotorPlant:
    """Planar quadrotor: state (y, z, theta, ydot, zdot, thetadot),
    inputs are the two rotor thrusts."""

    mass: float = 2.0
    inertia: float = 1.0
    l_arm: float = 0.2
    gravity: float = 9.81
    drag_k: float = 0.1
    wind: WindProfile | None = None
    thrust_min: float = 0.0
    thrust_max: float | None = None  # defaults to 2 m g per rotor

    def __post_init__(self):
        if min(self.mass, self.inertia, self.l_arm) <= 0:
            raise ValueError("mass, inertia, and l_arm must be positive")
        if self.thrust_min < 0:
            raise ValueError("thrust bounds must be nonnegative")
        if self.thrust_max is None:
            object.__setattr__(self, "thrust_max",
                               2.0 * self.mass * self.gravity)

    @property
    def state_dim(self) -> int:
        return 6

    @property
    def input_dim(self) -> int:
        return 2

    def hover_thrusts(self) -> np.ndarray:
        return np.full(2, 0.5 * self.mass * self.gravity)

    def input_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.full(2, self.thrust_min), np.full(2, self.thrust_max))

    def wind_force(self, t: float) -> np.ndarray:
        """In-plane force [F_y, F_z] of the quadratic wind model."""
        if self.wind is None:
            return np.zeros(2)
        v, alpha = self.wind.value(t)
        f = self.drag_k * v * v
        return np.array([f * math.cos(alpha), f * math.sin(alpha)])

    def derivative(self, state, thrusts, t: float = 0.0) -> np.ndarray:
        state = np.asarray(state, dtype=float).reshape(-1)
        T = np.clip(np.asarray(thrusts, dtype=float).reshape(-1),
                    self.thrust_min, self.thrust_max)
        if not (np.all(np.isfinite(state)) and np.all(np.isfinite(T))):
            raise FloatingPointError("non-finite quadrotor state or input")
        theta = state[2]
        total = T[0] + T[1]
        fw = self.wind_force(t)
        ydd = -total * math.sin(theta) / self.mass + fw[0] / self.mass
        zdd = total * math.cos(theta) / self.mass - self.gravity \
            + fw[1] / self.mass
        tdd = self.l_arm * (T[1] - T[0]) / self.inertia
        return np.array([state[3], state[4], state[5], ydd, zdd, tdd])

    def shifted(self, spec: ShiftSpec) -> "QuadrotorPlant":
        return replace(self, mass=self.mass * spec.mass_scale,
                       wind=spec.wind if spec.wind is not None else self.wind)


def quad_derivative(plant: QuadrotorPlant, state, thrusts,
                    t: float = 0.0) -> np.ndarray:
    return plant.derivative(state, thrusts, t)


@dataclass(frozen=True)
class ManipulatorPlant:
    """Planar 3R serial chain, torque controlled, uniform rod links."""

    masses: tuple[float, ...] = (0.6, 0.6, 0.6)
    lengths: tuple[float, ...] = (1.0, 1.0, 1.0)
    inertias: tuple[float, ...] | None = None   # about each centroid
    gravity: float = 9.81
    resistive_fraction: float = 0.0

    def __post_init__(self):
        if len(self.masses) != len(self.lengths):
            raise ValueError("masses and lengths must have equal length")
        if min(self.masses) <= 0 or min(self.lengths) <= 0:
            raise ValueError("masses and lengths must be positive")
        if self.inertias is None:
            object.__setattr__(
                self, "inertias",
                tuple(m * l * l / 12.0
                      for m, l in zip(self.masses, self.lengths)))
        if not 0.0 <= self.resistive_fraction < 1.0:
            raise ValueError("resistive_fraction must lie in [0, 1)")

    @property
    def n_links(self) -> int:
        return len(self.masses)

    @property
    def state_dim(self) -> int:
        return 2 * self.n_links

    @property
    def input_dim(self) -> int:
        return self.n_links

    def _centroid_arms(self) -> np.ndarray:
        """d[k, r]: lever of joint angle phi_r in centroid k's position."""
        nl = self.n_links
        dkr = np.zeros((nl, nl))
        for k in range(nl):
            for r in range(k + 1):
                dkr[k, r] = self.lengths[r] if r < k else 0.5 * self.lengths[k]
        return dkr

    def mass_matrix(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        nl = self.n_links
        phi = np.cumsum(theta)
        dkr = self._centroid_arms()
        M = np.zeros((nl, nl))
        for k in range(nl):
            for i in range(k + 1):
                for j in range(k + 1):
                    acc = 0.0
                    for r in range(i, k + 1):
                        for s in range(j, k + 1):
                            acc += dkr[k, r] * dkr[k, s] * math.cos(
                                phi[r] - phi[s])
                    M[i, j] += self.masses[k] * acc + self.inertias[k]
        M = 0.5 * (M + M.T)
        if np.min(np.linalg.eigvalsh(M)) <= 1e-9:
            raise FloatingPointError("mass matrix lost positive definiteness")
        return M

    def _mass_matrix_partials(self, theta) -> np.ndarray:
        """D[q, i, j] = d M_ij / d theta_q, from the closed-form M."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        nl = self.n_links
        phi = np.cumsum(theta)
        dkr = self._centroid_arms()
        D = np.zeros((nl, nl, nl))
        for k in range(nl):
            for i in range(k + 1):
                for j in range(k + 1):
                    for r in range(i, k + 1):
                        for s in range(j, k + 1):
                            if r == s:
                                continue
                            base = -self.masses[k] * dkr[k, r] * dkr[k, s] \
                                * math.sin(phi[r] - phi[s])
                            for q in range(nl):
                                sel = (1 if r >= q else 0) - (1 if s >= q else 0)
                                if sel:
                                    D[q, i, j] += base * sel
        return D

    def coriolis_matrix(self, theta, theta_dot) -> np.ndarray:
        """C(theta, theta_dot) built from Christoffel symbols of M."""
        qd = np.asarray(theta_dot, dtype=float).reshape(-1)
        D = self._mass_matrix_partials(theta)
        C = 0.5 * (np.einsum("kij,k->ij", D, qd)
                   + np.einsum("jik,k->ij", D, qd)
                   - np.einsum("ijk,k->ij", D, qd))
        return C

    def gravity_vector(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        nl = self.n_links
        phi = np.cumsum(theta)
        dkr = self._centroid_arms()
        G = np.zeros(nl)
        for k in range(nl):
            for q in range(k + 1):
                acc = 0.0
                for r in range(q, k + 1):
                    acc += dkr[k, r] * math.cos(phi[r])
                G[q] += self.masses[k] * self.gravity * acc
        return G

    def derivative(self, state, torques, t: float = 0.0) -> np.ndarray:
        state = np.asarray(state, dtype=float).reshape(-1)
        tau = np.asarray(torques, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(state)) and np.all(np.isfinite(tau))):
            raise FloatingPointError("non-finite manipulator state or input")
        nl = self.n_links
        theta, qd = state[:nl], state[nl:]
        M = self.mass_matrix(theta)
        if np.linalg.cond(M) > _SINGULAR_COND:
            raise FloatingPointError("mass matrix is numerically singular")
        C = self.coriolis_matrix(theta, qd)
        G = self.gravity_vector(theta)
        tau_eff = (1.0 - self.resistive_fraction) * tau
        qdd = np.linalg.solve(M, tau_eff - C @ qd - G)
        return np.concatenate([qd, qdd])

    def kinetic_energy(self, state) -> float:
        state = np.asarray(state, dtype=float).reshape(-1)
        nl = self.n_links
        qd = state[nl:]
        return float(0.5 * qd @ self.mass_matrix(state[:nl]) @ qd)

    def joint_positions(self, theta) -> np.ndarray:
        """(n_links + 1) x 2 array of joint/end-effector positions."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        phi = np.cumsum(theta)
        pts = np.zeros((self.n_links + 1, 2))
        for i in range(self.n_links):
            pts[i + 1] = pts[i] + self.lengths[i] * np.array(
                [math.cos(phi[i]), math.sin(phi[i])])
        return pts

    def end_effector(self, theta) -> np.ndarray:
        return self.joint_positions(theta)[-1]

    def inverse_kinematics(self, target_xy, tool_angle: float,
                           elbow_up: bool = True) -> np.ndarray:
        """Joint angles reaching target_xy with the given tool orientation.

        Standard planar 3R closed form: the wrist point is target minus the
        last link, then two-link geometry for the first two joints.
        """
        if self.n_links != 3:
            raise ValueError("closed-form IK implemented for 3 links")
        x, y = float(target_xy[0]), float(target_xy[1])
        l1, l2, l3 = self.lengths
        wx = x - l3 * math.cos(tool_angle)
        wy = y - l3 * math.sin(tool_angle)
        r2 = wx * wx + wy * wy
        c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        if abs(c2) > 1.0 + 1e-9:
            raise ValueError("inverse kinematics target out of reach")
        c2 = min(1.0, max(-1.0, c2))
        s2 = math.sqrt(1.0 - c2 * c2)
        if elbow_up:
            s2 = -s2
        th2 = math.atan2(s2, c2)
        th1 = math.atan2(wy, wx) - math.atan2(l2 * s2, l1 + l2 * c2)
        th3 = tool_angle - th1 - th2
        return np.array([th1, th2, th3])

    def shifted(self, spec: ShiftSpec) -> "ManipulatorPlant":
        new_masses = tuple(m * spec.mass_scale for m in self.masses)
        new_inertias = tuple(ii * spec.mass_scale for ii in self.inertias)
        return replace(self, masses=new_masses, inertias=new_inertias,
                       resistive_fraction=spec.resistive_fraction)


def manip_derivative(plant: ManipulatorPlant, state, torques) -> np.ndarray:
    return plant.derivative(state, torques)


@dataclass(frozen=True)
class LinearPlant:
    """Continuous LTI plant xdot = A x + B u, for harness sanity scenarios."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if B.shape[0] != A.shape[0]:
            raise ValueError("B row count must match A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    def derivative(self, state, u, t: float = 0.0) -> np.ndarray:
        state = np.asarray(state, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        return self.A @ state + self.B @ u

    def shifted(self, spec: ShiftSpec) -> "LinearPlant":
        # mass scale divides the input effectiveness, mimicking a heavier
        # physical system under the same actuation
        return replace(self, B=self.B / spec.mass_scale)


def double_integrator_plant() -> LinearPlant:
    """2-D double integrator (positions then velocities)."""
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = 1.0
    return LinearPlant(A=A, B=B)


def rk4_step(derivative, state, u, dt: float) -> np.ndarray:
    """One classical Runge-Kutta 4 step of x' = derivative(x, u)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=float).reshape(-1)
    k1 = np.asarray(derivative(state, u))
    k2 = np.asarray(derivative(state + 0.5 * dt * k1, u))
    k3 = np.asarray(derivative(state + 0.5 * dt * k2, u))
    k4 = np.asarray(derivative(state + dt * k3, u))
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def observe(state, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    """State measurement with seeded Gaussian noise; std 0 is exact."""
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    state = np.asarray(state, dtype=float).reshape(-1)
    if noise_std == 0.0:
        return state.copy()
    return state + rng.normal(0.0, noise_std, size=state.shape)
