"""Reference trajectory generators for the closed-loop scenarios.

Every generator produces a planar position as a function of time; the
harness turns that into a full physical-state reference (adding velocities
by central differences, and joint-space conversion for the manipulator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PositionFn = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class CircleReference:
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    period: float = 10.0

    def __post_init__(self):
        if self.radius <= 0 or self.period <= 0:
            raise ValueError("radius and period must be positive")

    def position(self, t: float) -> np.ndarray:
        w = 2.0 * math.pi / self.period
        return np.array([self.center[0] + self.radius * math.cos(w * t),
                         self.center[1] + self.radius * math.sin(w * t)])


@dataclass(frozen=True)
class HypotrochoidReference:
    """Curve traced by a point at distance d from a circle of radius r
    rolling inside a circle of radius R, scaled to fit `extent`."""

    big_radius: float = 5.0
    small_radius: float = 3.0
    pen_distance: float = 5.0
    period: float = 20.0
    extent: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if min(self.big_radius, self.small_radius, self.period,
               self.extent) <= 0:
            raise ValueError("radii, period, and extent must be positive")

    def position(self, t: float) -> np.ndarray:
        # the rolling circle closes after small_radius full parameter turns
        s = 2.0 * math.pi * self.small_radius * t / self.period
        dr = self.big_radius - self.small_radius
        k = dr / self.small_radius
        x = dr * math.cos(s) + self.pen_distance * math.cos(k * s)
        y = dr * math.sin(s) - self.pen_distance * math.sin(k * s)
        scale = self.extent / (dr + self.pen_distance)
        return np.array([self.center[0] + scale * x,
                         self.center[1] + scale * y])


@dataclass(frozen=True)
class LemniscateReference:
    """Figure-eight (lemniscate of Gerono)."""

    half_width: float = 1.0
    period: float = 10.0
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.half_width <= 0 or self.period <= 0:
            raise ValueError("half_width and period must be positive")

    def position(self, t: float) -> np.ndarray:
        w = 2.0 * math.pi / self.period
        return np.array([
            self.center[0] + self.half_width * math.cos(w * t),
            self.center[1] + self.half_width * math.sin(w * t) * math.cos(w * t),
        ])


@dataclass(frozen=True)
class PetalReference:
    """Rose curve r = a cos(n phi); odd n gives an n-petal flower."""

    amplitude: float = 1.0
    petals: int = 3
    period: float = 15.0
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.amplitude <= 0 or self.period <= 0 or self.petals < 1:
            raise ValueError("amplitude, period positive; petals >= 1")

    def position(self, t: float) -> np.ndarray:
        w = 2.0 * math.pi / self.period
        r = self.amplitude * math.cos(self.petals * w * t)
        return np.array([self.center[0] + r * math.cos(w * t),
                         self.center[1] + r * math.sin(w * t)])


@dataclass(frozen=True)
class HelixProjectionReference:
    """Side view of a helix: sinusoid in one axis, steady climb in the other."""

    radius: float = 0.5
    period: float = 8.0
    climb_rate: float = 0.1
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.radius <= 0 or self.period <= 0:
            raise ValueError("radius and period must be positive")

    def position(self, t: float) -> np.ndarray:
        w = 2.0 * math.pi / self.period
        return np.array([self.center[0] + self.radius * math.cos(w * t),
                         self.center[1] + self.climb_rate * t])


@dataclass(frozen=True)
class WaypointReference:
    """Piecewise-linear corridor path followed at constant speed, holding
    the final waypoint afterwards."""

    waypoints: tuple[tuple[float, float], ...]
    speed: float = 0.25

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("need at least two waypoints")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        pts = np.asarray(self.waypoints, dtype=float)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError("consecutive waypoints must be distinct")
        object.__setattr__(self, "_points", pts)
        object.__setattr__(self, "_cumlen",
                           np.concatenate([[0.0], np.cumsum(seg)]))

    def position(self, t: float) -> np.ndarray:
        s = max(0.0, t) * self.speed
        cum = self._cumlen
        if s >= cum[-1]:
            return self._points[-1].copy()
        i = int(np.searchsorted(cum, s, side="right") - 1)
        frac = (s - cum[i]) / (cum[i + 1] - cum[i])
        return (1.0 - frac) * self._points[i] + frac * self._points[i + 1]


_KINDS = {
    "circle": CircleReference,
    "hypotrochoid": HypotrochoidReference,
    "lemniscate": LemniscateReference,
    "petal": PetalReference,
    "helix-projection": HelixProjectionReference,
    "corridor": WaypointReference,
}


def make_reference(kind: str, **params):
    """Instantiate a generator by config name."""
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(
            f"unknown reference kind {kind!r}; "
            f"choose from {sorted(_KINDS)}") from None
    return cls(**params)


def velocity(gen, t: float, h: float = 1e-4) -> np.ndarray:
    """Central-difference velocity of a generator's position."""
    return (gen.position(t + h) - gen.position(t - h)) / (2.0 * h)


def sampled_positions(gen, steps: int, dt: float) -> np.ndarray:
    """(steps, 2) array of positions at t = k * dt."""
    return np.array([gen.position(k * dt) for k in range(steps)])
