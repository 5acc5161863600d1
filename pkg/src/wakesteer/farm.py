"""Farm geometry, inflow and turbine performance primitives.

Conventions used throughout the package:

* ground frame: x east, y north, metres;
* wind direction is meteorological (the direction the wind comes FROM), so
  270 deg is a westerly flowing along +x;
* yaw offsets are degrees relative to the local inflow, positive
  counter-clockwise seen from above.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

AIR_DENSITY = 1.225  # kg/m^3
BETZ_LIMIT = 16.0 / 27.0
YAW_ENVELOPE = 45.0  # hard actuator limit, deg


@dataclass(frozen=True)
class TurbineSpec:
    rotor_diameter: float = 178.3
    hub_height: float = 119.0
    rated_power: float = 10.0e6
    rated_wind_speed: float = 11.4
    cp: float = 0.47
    ct: float = 0.80
    cos_exponent: float = 1.88

    def __post_init__(self):
        if not self.rotor_diameter > 0:
            raise ValueError("rotor_diameter must be positive")
        if not 0 < self.cp < BETZ_LIMIT:
            raise ValueError(f"cp={self.cp} outside (0, 16/27)")
        if not 0 < self.ct < 1:
            raise ValueError(f"ct={self.ct} outside (0, 1)")
        if not self.rated_power > 0:
            raise ValueError("rated_power must be positive")
        if self.rated_wind_speed <= 0:
            raise ValueError("rated_wind_speed must be positive")
        if self.aero_power(self.rated_wind_speed) < self.rated_power:
            raise ValueError(
                "rated_wind_speed is below the speed at which the power curve "
                "reaches rated_power"
            )

    @property
    def rotor_area(self) -> float:
        return math.pi * self.rotor_diameter**2 / 4.0

    def aero_power(self, speed):
        """Unclipped kinetic power extracted at zero yaw."""
        return 0.5 * AIR_DENSITY * self.rotor_area * self.cp * np.asarray(speed, float) ** 3


DTU10MW_LIKE = TurbineSpec()


@dataclass(frozen=True)
class FarmLayout:
    positions: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pos = tuple((float(x), float(y)) for x, y in self.positions)
        object.__setattr__(self, "positions", pos)
        if len(pos) < 1:
            raise ValueError("layout needs at least one turbine")
        if len(set(pos)) != len(pos):
            raise ValueError("turbine positions must be pairwise distinct")
        if not all(math.isfinite(c) for p in pos for c in p):
            raise ValueError("turbine positions must be finite")

    @property
    def n_turbines(self) -> int:
        return len(self.positions)

    @property
    def xy(self) -> np.ndarray:
        return np.array(self.positions, dtype=float)

    @classmethod
    def row(cls, n: int, spacing: float, direction: float = 270.0) -> "FarmLayout":
        """`n` turbines in a line aligned with wind direction `direction`."""
        theta = flow_angle(direction)
        return cls(tuple((i * spacing * math.cos(theta), i * spacing * math.sin(theta))
                         for i in range(n)))

    def rotated(self, angle_deg: float) -> "FarmLayout":
        """Layout rotated counter-clockwise about the origin."""
        a = math.radians(angle_deg)
        c, s = math.cos(a), math.sin(a)
        return FarmLayout(tuple((c * x - s * y, s * x + c * y) for x, y in self.positions))

    def permuted(self, order: Sequence[int]) -> "FarmLayout":
        return FarmLayout(tuple(self.positions[i] for i in order))


@dataclass(frozen=True)
class InflowState:
    wind_speed: float
    wind_direction: float
    turbulence_intensity: float

    def __post_init__(self):
        vals = (self.wind_speed, self.wind_direction, self.turbulence_intensity)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite inflow {vals}")
        if not self.wind_speed > 0:
            raise ValueError(f"wind_speed must be positive, got {self.wind_speed}")
        if not 0 < self.turbulence_intensity < 1:
            raise ValueError(f"turbulence_intensity must be in (0, 1), got {self.turbulence_intensity}")
        object.__setattr__(self, "wind_direction", float(self.wind_direction) % 360.0)


@dataclass(frozen=True)
class YawState:
    offsets: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        offs = tuple(float(g) for g in self.offsets)
        if any(abs(g) > YAW_ENVELOPE for g in offs):
            raise ValueError(f"yaw offsets {offs} exceed the +/-{YAW_ENVELOPE} deg envelope")
        object.__setattr__(self, "offsets", offs)

    def as_array(self) -> np.ndarray:
        return np.array(self.offsets, dtype=float)


def flow_angle(wd):
    """Propagation angle (rad, ground frame) of wind coming from `wd` degrees."""
    return np.radians(270.0 - np.asarray(wd, dtype=float)) if np.ndim(wd) else math.radians(270.0 - wd)


def turbine_power(spec: TurbineSpec, effective_speed, yaw=0.0):
    """Electrical power (W) at rotor-effective speed and yaw misalignment (deg).

    Works elementwise on arrays.
    """
    u = np.maximum(np.asarray(effective_speed, dtype=float), 0.0)
    cos_g = np.abs(np.cos(np.radians(np.asarray(yaw, dtype=float))))
    p = 0.5 * AIR_DENSITY * spec.rotor_area * spec.cp * u**3 * cos_g**spec.cos_exponent
    p = np.minimum(p, spec.rated_power)
    return float(p) if p.ndim == 0 else p


def rated_power_at(spec: TurbineSpec, mean_speed: float) -> float:
    """Power-curve value at the mean ambient speed (reward normaliser)."""
    return turbine_power(spec, mean_speed, 0.0)
