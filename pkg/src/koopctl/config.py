"""Scenario configuration: a sectioned key/value text file with units in the
key names, parsed into typed blocks plus builders for the domain objects.

Example:

    [plant]
    kind = quadrotor
    mass_kg = 2.0

    [run]
    steps = 300
    seed = 7
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .plants import (LinearPlant, ManipulatorPlant, QuadrotorPlant, ShiftSpec,
                     WindProfile, double_integrator_plant)
from .lifting import ObservableDictionary, make_rbf_dictionary
from .references import make_reference
from .safety import Barrier

_REQUIRED_SECTIONS = ("plant", "dictionary", "identification", "adaptation",
                      "tightening", "mpc", "run")


class ConfigError(ValueError):
    """Malformed or incomplete scenario configuration."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


@dataclass(frozen=True)
class PlantConfig:
    kind: str = "quadrotor"
    mass_kg: float = 2.0
    inertia_kgm2: float = 1.0
    arm_length_m: float = 0.2
    gravity_mps2: float = 9.81
    drag_coeff_kgpm: float = 0.1
    thrust_min_n: float = 0.0
    thrust_max_n: float | None = None
    wind_kind: str = "constant"
    wind_speed_mps: float = 0.0
    wind_angle_rad: float = 0.0
    wind_rate_mps2: float = 0.0
    wind_amplitude_mps: float = 0.0
    wind_period_s: float = 1.0
    link_mass_kg: float = 0.6
    link_length_m: float = 1.0
    resistive_fraction: float = 0.0


@dataclass(frozen=True)
class DictionaryConfig:
    kind: str = "rbf"
    degree: int = 2
    rbf_centers: int = 20
    rbf_box_lo: tuple[float, ...] = ()
    rbf_box_hi: tuple[float, ...] = ()
    rbf_seed: int = 3
    rbf_kind: str = "gaussian"


@dataclass(frozen=True)
class IdentificationConfig:
    trajectories: int = 20
    length_steps: int = 60
    excitation_amplitude: float = 1.0
    smoothing: float = 0.8
    seed: int = 1
    ridge: float = 1e-8


@dataclass(frozen=True)
class AdaptationConfig:
    enabled: bool = True
    window_size: int = 10
    gamma: float = 1.0
    eta_policy: str = "auto"
    eta: float = 0.1
    initial_error_bound: float = 1.0
    drift_bound: float = 0.0
    v_max_floor: float = 1.0


@dataclass(frozen=True)
class TighteningConfig:
    mode: str = "conformal"
    alpha_ema: float = 0.1
    chi: float = 0.01
    n_conf: int = 50
    k_warm: int = 100
    eps_ema: float = 0.0


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 10
    q_diag: tuple[float, ...] = ()
    r_diag: tuple[float, ...] = ()
    beta: float = 0.0
    beta_schedule: str = "constant"
    beta_floor: float = 0.0
    beta_tau_steps: float = 50.0
    u_lower: tuple[float, ...] | None = None
    u_upper: tuple[float, ...] | None = None
    u_ref: tuple[float, ...] | None = None
    x_lower: tuple[float, ...] | None = None
    x_upper: tuple[float, ...] | None = None
    barriers: str = ""
    cbf_alpha: float = 0.2
    use_local_lipschitz: bool = True
    global_lipschitz: float = 1.0
    soft_cbf_weight: float = 1e4
    sqp_max_iters: int = 30
    trust_region: float = 10.0
    qp_tolerance: float = 1e-5
    qp_max_iters: int = 20000
    convergence_tol: float = 1e-6
    eps_reg: float = 1e-6
    terminal: str = "riccati"
    reference: str = "circle"
    ref_center: tuple[float, float] = (0.0, 0.0)
    ref_radius_m: float = 1.0
    ref_period_s: float = 10.0
    ref_extent_m: float = 1.0
    ref_big_radius: float = 5.0
    ref_small_radius: float = 3.0
    ref_pen_distance: float = 5.0
    ref_half_width_m: float = 1.0
    ref_amplitude_m: float = 1.0
    ref_petals: int = 3
    ref_climb_rate_mps: float = 0.1
    ref_waypoints: str = ""
    ref_speed_mps: float = 0.25
    tool_angle_rad: float = 0.0
    elbow_up: bool = True


@dataclass(frozen=True)
class RunConfig:
    steps: int = 300
    dt_sim_s: float = 0.001
    dt_ctrl_s: float = 0.01
    noise_std: float = 0.0
    seed: int = -1
    shift_mass_scale: float = 1.0
    shift_activation_step: int = 0
    shift_resistive_fraction: float = 0.0
    shift_wind_kind: str = ""
    shift_wind_speed_mps: float = 0.0
    shift_wind_angle_rad: float = 0.0
    shift_wind_rate_mps2: float = 0.0
    shift_wind_amplitude_mps: float = 0.0
    shift_wind_period_s: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)
    identification: IdentificationConfig = field(
        default_factory=IdentificationConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    tightening: TighteningConfig = field(default_factory=TighteningConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        if self.run.seed < 0:
            raise ConfigError("run block must set a nonnegative seed")
        ratio = self.run.dt_ctrl_s / self.run.dt_sim_s
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("dt_ctrl_s must be an integer multiple of dt_sim_s")
        if self.plant.kind not in ("quadrotor", "manipulator",
                                   "double-integrator"):
            raise ConfigError(f"unknown plant kind {self.plant.kind!r}")
        if self.tightening.mode not in ("none", "conformal", "analytical",
                                        "combined"):
            raise ConfigError(f"unknown tightening mode {self.tightening.mode!r}")
        if self.adaptation.eta_policy not in ("auto", "fixed"):
            raise ConfigError(f"unknown eta policy {self.adaptation.eta_policy!r}")
        if self.mpc.terminal not in ("riccati", "none"):
            raise ConfigError(f"unknown terminal mode {self.mpc.terminal!r}")


_BOOL_FIELDS = {"enabled", "use_local_lipschitz", "elbow_up"}
_STR_FIELDS = {"kind", "wind_kind", "eta_policy", "mode", "beta_schedule",
               "barriers", "terminal", "reference", "ref_waypoints",
               "rbf_kind", "shift_wind_kind"}
_TUPLE_FIELDS = {"q_diag", "r_diag", "u_lower", "u_upper", "u_ref", "x_lower",
                 "x_upper", "ref_center", "rbf_box_lo", "rbf_box_hi"}
_INT_FIELDS = {"degree", "rbf_centers", "rbf_seed", "trajectories",
               "length_steps", "seed", "window_size", "n_conf", "k_warm",
               "horizon", "sqp_max_iters", "qp_max_iters", "ref_petals",
               "steps", "shift_activation_step"}


def _coerce(name: str, text: str):
    text = text.strip()
    if name in _STR_FIELDS:
        return text
    if name in _BOOL_FIELDS:
        lowered = text.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{name} must be a boolean, got {text!r}")
    if name in _TUPLE_FIELDS:
        return _floats(text) if text else None
    if name in _INT_FIELDS:
        return int(text)
    if text == "":
        return None
    return float(text)


_BLOCKS = {
    "plant": PlantConfig,
    "dictionary": DictionaryConfig,
    "identification": IdentificationConfig,
    "adaptation": AdaptationConfig,
    "tightening": TighteningConfig,
    "mpc": MpcConfig,
    "run": RunConfig,
}


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse a scenario file; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in _REQUIRED_SECTIONS:
        if section not in parser:
            raise ConfigError(f"missing required section [{section}]")
    for section in parser.sections():
        if section not in _BLOCKS:
            raise ConfigError(f"unknown section [{section}]")
    blocks = {}
    for section, cls in _BLOCKS.items():
        known = set(cls.__dataclass_fields__)
        values = {}
        for key, raw in parser[section].items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            coerced = _coerce(key, raw)
            if coerced is not None or key in ("thrust_max_n", "u_lower",
                                              "u_upper", "x_lower", "x_upper"):
                values[key] = coerced
        blocks[section] = cls(**values)
    return ScenarioConfig(**blocks)


def apply_overrides(cfg: ScenarioConfig,
                    overrides: dict[str, object]) -> ScenarioConfig:
    """New config with dotted 'section.key' entries replaced."""
    from dataclasses import replace
    staged: dict[str, dict[str, object]] = {}
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in _BLOCKS or not key:
            raise ConfigError(f"override {dotted!r} is not section.key")
        if key not in _BLOCKS[section].__dataclass_fields__:
            raise ConfigError(f"override {dotted!r} names an unknown key")
        staged.setdefault(section, {})[key] = value
    new_blocks = {}
    for section in _BLOCKS:
        block = getattr(cfg, section)
        if section in staged:
            block = replace(block, **staged[section])
        new_blocks[section] = block
    return ScenarioConfig(**new_blocks)


def build_wind(kind: str, speed: float, angle: float, rate: float,
               amplitude: float, period: float) -> WindProfile | None:
    if not kind:
        return None
    return WindProfile(kind=kind, speed=speed, angle=angle, rate=rate,
                       amplitude=amplitude, period=period)


def build_plant(cfg: PlantConfig):
    if cfg.kind == "quadrotor":
        return QuadrotorPlant(
            mass=cfg.mass_kg, inertia=cfg.inertia_kgm2,
            l_arm=cfg.arm_length_m, gravity=cfg.gravity_mps2,
            drag_k=cfg.drag_coeff_kgpm,
            wind=build_wind(cfg.wind_kind, cfg.wind_speed_mps,
                            cfg.wind_angle_rad, cfg.wind_rate_mps2,
                            cfg.wind_amplitude_mps, cfg.wind_period_s)
            if cfg.wind_speed_mps or cfg.wind_amplitude_mps or cfg.wind_rate_mps2
            else None,
            thrust_min=cfg.thrust_min_n, thrust_max=cfg.thrust_max_n)
    if cfg.kind == "manipulator":
        return ManipulatorPlant(
            masses=(cfg.link_mass_kg,) * 3,
            lengths=(cfg.link_length_m,) * 3,
            gravity=cfg.gravity_mps2,
            resistive_fraction=cfg.resistive_fraction)
    return double_integrator_plant()


def build_shift(cfg: RunConfig) -> ShiftSpec:
    wind = build_wind(cfg.shift_wind_kind, cfg.shift_wind_speed_mps,
                      cfg.shift_wind_angle_rad, cfg.shift_wind_rate_mps2,
                      cfg.shift_wind_amplitude_mps, cfg.shift_wind_period_s)
    return ShiftSpec(mass_scale=cfg.shift_mass_scale, wind=wind,
                     resistive_fraction=cfg.shift_resistive_fraction,
                     activation_step=cfg.shift_activation_step)


def build_dictionary(cfg: DictionaryConfig, n: int) -> ObservableDictionary:
    if cfg.kind == "poly":
        return ObservableDictionary(kind="poly", n=n, degree=cfg.degree)
    if cfg.kind == "rbf":
        lo = cfg.rbf_box_lo if cfg.rbf_box_lo else (-2.0,) * n
        hi = cfg.rbf_box_hi if cfg.rbf_box_hi else (2.0,) * n
        if len(lo) != n or len(hi) != n:
            raise ConfigError("rbf box bounds must match the state dimension")
        return make_rbf_dictionary(n, lo, hi, cfg.rbf_centers, cfg.rbf_seed,
                                   rbf_kind=cfg.rbf_kind)
    raise ConfigError(f"unknown dictionary kind {cfg.kind!r}")


def build_reference(cfg: MpcConfig):
    kind = cfg.reference
    if kind == "circle":
        return make_reference("circle", center=cfg.ref_center,
                              radius=cfg.ref_radius_m, period=cfg.ref_period_s)
    if kind == "hypotrochoid":
        return make_reference("hypotrochoid", center=cfg.ref_center,
                              big_radius=cfg.ref_big_radius,
                              small_radius=cfg.ref_small_radius,
                              pen_distance=cfg.ref_pen_distance,
                              period=cfg.ref_period_s, extent=cfg.ref_extent_m)
    if kind == "lemniscate":
        return make_reference("lemniscate", center=cfg.ref_center,
                              half_width=cfg.ref_half_width_m,
                              period=cfg.ref_period_s)
    if kind == "petal":
        return make_reference("petal", center=cfg.ref_center,
                              amplitude=cfg.ref_amplitude_m,
                              petals=cfg.ref_petals, period=cfg.ref_period_s)
    if kind == "helix-projection":
        return make_reference("helix-projection", center=cfg.ref_center,
                              radius=cfg.ref_radius_m, period=cfg.ref_period_s,
                              climb_rate=cfg.ref_climb_rate_mps)
    if kind == "corridor":
        pts = []
        for chunk in cfg.ref_waypoints.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            xy = tuple(float(v) for v in chunk.split(","))
            if len(xy) != 2:
                raise ConfigError("corridor waypoints must be x,y pairs")
            pts.append(xy)
        return make_reference("corridor", waypoints=tuple(pts),
                              speed=cfg.ref_speed_mps)
    raise ConfigError(f"unknown reference kind {kind!r}")


def build_barriers(text: str, position_idx: tuple[int, int] = (0, 1)
                   ) -> tuple[Barrier, ...]:
    """Parse 'circle:cx,cy,r ; halfspace:a1,a2,b' barrier lists."""
    barriers = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        kind, _, params = chunk.partition(":")
        vals = tuple(float(v) for v in params.split(","))
        kind = kind.strip()
        if kind == "circle":
            if len(vals) != 3:
                raise ConfigError("circle barrier needs cx,cy,radius")
            barriers.append(Barrier(kind="circle", center=np.array(vals[:2]),
                                    d_safe=vals[2], position_idx=position_idx))
        elif kind == "halfspace":
            if len(vals) != 3:
                raise ConfigError("halfspace barrier needs a1,a2,offset")
            a = np.array(vals[:2])
            norm = float(np.linalg.norm(a))
            if norm <= 0:
                raise ConfigError("halfspace normal must be nonzero")
            barriers.append(Barrier(kind="halfspace", normal=a / norm,
                                    offset=vals[2] / norm,
                                    position_idx=position_idx))
        else:
            raise ConfigError(f"unknown barrier kind {kind!r}")
    return tuple(barriers)
