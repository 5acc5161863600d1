"""Advection delays and the delay-aware (pseudo-dynamic) farm power model.

A downstream turbine at prediction step ``k`` sees each upstream wake as it
was generated ``d[j, i]`` steps earlier, so its power is evaluated with the
upstream yaw values from those past steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .farm import FarmLayout, InflowState, flow_angle
from .wake import TurbineArrays, WakeGeometry, WakeParams

MIN_WIND_SPEED = 0.1  # m/s; below this advection delays are meaningless
_TIME_TOL = 1e-9


class InvalidInflowError(ValueError):
    """Inflow estimate that the delay model cannot work with."""


@dataclass(frozen=True)
class DelayMatrix:
    """Pairwise advection delays indexed ``[source j, target i]``."""

    delays: np.ndarray
    steps: np.ndarray
    dt: float

    @property
    def max_steps(self) -> int:
        return int(self.steps.max()) if self.steps.size else 0


def compute_delay_matrix(layout: FarmLayout, inflow: InflowState, dt: float = 5.0) -> DelayMatrix:
    if not inflow.wind_speed > MIN_WIND_SPEED:
        raise InvalidInflowError(
            f"wind speed estimate {inflow.wind_speed} m/s is below {MIN_WIND_SPEED} m/s"
        )
    if not dt > 0:
        raise ValueError("dt must be positive")
    theta = flow_angle(inflow.wind_direction)
    xy = layout.xy
    dx = xy[None, :, 0] - xy[:, None, 0]
    dy = xy[None, :, 1] - xy[:, None, 1]
    projected = dx * math.cos(theta) + dy * math.sin(theta)
    delays = np.maximum(projected, 0.0) / inflow.wind_speed
    np.fill_diagonal(delays, 0.0)
    steps = np.rint(delays / dt).astype(int)
    return DelayMatrix(delays=delays, steps=steps, dt=float(dt))


class YawHistory:
    """Ring buffer of executed yaw vectors with zero-order-hold lookup.

    Lookups before the oldest record return the oldest record, i.e. the farm
    is assumed to have held its initial yaws indefinitely.
    """

    def __init__(self, n_turbines: int, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.n_turbines = n_turbines
        self.capacity = capacity
        self._times = np.empty(capacity)
        self._yaws = np.empty((capacity, n_turbines))
        self._count = 0
        self._head = 0  # next write slot
        self._ordered = None

    def __len__(self):
        return self._count

    def append(self, time: float, yaws) -> None:
        yaws = np.asarray(yaws, dtype=float)
        if yaws.shape != (self.n_turbines,):
            raise ValueError(f"expected {self.n_turbines} yaws, got shape {yaws.shape}")
        if self._count and time <= self.latest_time:
            raise ValueError(f"timestamps must increase ({time} after {self.latest_time})")
        self._times[self._head] = time
        self._yaws[self._head] = yaws
        self._head = (self._head + 1) % self.capacity
        self._count = min(self._count + 1, self.capacity)
        self._ordered = None

    def _view(self):
        if self._ordered is None:
            if self._count < self.capacity:
                sl = slice(0, self._count)
                self._ordered = (self._times[sl].copy(), self._yaws[sl].copy())
            else:
                order = np.roll(np.arange(self.capacity), -self._head)
                self._ordered = (self._times[order], self._yaws[order])
        return self._ordered

    @property
    def latest_time(self) -> float:
        return float(self._times[(self._head - 1) % self.capacity])

    @property
    def latest(self) -> np.ndarray:
        return self._yaws[(self._head - 1) % self.capacity].copy()

    @property
    def times(self) -> np.ndarray:
        return self._view()[0].copy()

    def at(self, times) -> np.ndarray:
        """Yaw vectors in force at ``times`` (shape ``times.shape + (N,)``)."""
        if not self._count:
            raise LookupError("empty yaw history")
        ts, ys = self._view()
        idx = np.searchsorted(ts, np.asarray(times, dtype=float) + _TIME_TOL, side="right") - 1
        return ys[np.clip(idx, 0, None)]

    def copy(self) -> "YawHistory":
        other = YawHistory(self.n_turbines, self.capacity)
        other._times = self._times.copy()
        other._yaws = self._yaws.copy()
        other._count, other._head = self._count, self._head
        return other

    @classmethod
    def constant(cls, yaws, capacity: int, time: float = 0.0) -> "YawHistory":
        yaws = np.asarray(yaws, dtype=float)
        hist = cls(len(yaws), capacity)
        hist.append(time, yaws)
        return hist


def effective_yaw_matrix(history: YawHistory, dm: DelayMatrix, time: float) -> np.ndarray:
    """Effective yaws at ``time`` for every target, indexed ``[target, source]``."""
    lag = dm.steps.T * dm.dt  # [target, source]
    past = history.at(time - lag)  # [target, source, turbine]
    n = lag.shape[0]
    return past[:, np.arange(n), np.arange(n)]


def effective_yaws(history: YawHistory, dm: DelayMatrix, target_turbine: int,
                   query_step: int) -> np.ndarray:
    """Per-source yaw seen by ``target_turbine`` at step ``query_step`` (time k*dt)."""
    if query_step < 0:
        raise ValueError("query_step must be non-negative")
    return effective_yaw_matrix(history, dm, query_step * dm.dt)[target_turbine]


class HorizonModel:
    """Delay-aware power predictor prepared for repeated evaluation.

    Geometry, delays and the recorded past are fixed at construction, so only
    the planned yaws vary between calls (as inside an optimiser).
    """

    def __init__(self, layout: FarmLayout, specs, inflow: InflowState, history: YawHistory,
                 horizon_steps: int, dt: float = 5.0, params: WakeParams = WakeParams(),
                 t_now: float | None = None):
        n = layout.n_turbines
        self.n = n
        self.horizon_steps = int(horizon_steps)
        self.dt = float(dt)
        self.delay = compute_delay_matrix(layout, inflow, dt)
        self.turbines = specs if isinstance(specs, TurbineArrays) else TurbineArrays(specs, n)
        self.geometry = WakeGeometry(layout, self.turbines, inflow, params)
        self.t_now = history.latest_time if t_now is None else float(t_now)
        self.current = history.at(self.t_now)

        d_max = self.delay.max_steps
        self._n_past = d_max + 1  # steps -d_max..0
        past_times = self.t_now + self.dt * np.arange(-d_max, 1)
        self.past = history.at(past_times)
        k = np.arange(1, self.horizon_steps + 1)
        # row of the timeline for step k - d[j, i]; timeline row r <-> step r - d_max
        self.rows = k[:, None, None] - self.delay.steps.T[None, :, :] + d_max
        self.cols = np.broadcast_to(np.arange(n)[None, None, :], self.rows.shape)

    def powers(self, planned_yaws) -> np.ndarray:
        """Unpenalised powers ``[step, turbine]`` for yaws planned at steps 1..K."""
        planned = np.asarray(planned_yaws, dtype=float)
        if planned.shape != (self.horizon_steps, self.n):
            raise ValueError(f"planned yaws must have shape {(self.horizon_steps, self.n)}")
        timeline = np.concatenate([self.past, planned], axis=0)
        src = timeline[self.rows, self.cols]
        speeds = self.geometry.speeds(src)
        return self.turbines.power(speeds, planned)


def horizon_power(layout: FarmLayout, specs, inflow: InflowState, history: YawHistory,
                  planned_yaws, horizon_steps: int | None = None, dt: float = 5.0,
                  params: WakeParams = WakeParams()) -> np.ndarray:
    """Per-step, per-turbine power over the prediction horizon.

    Step 0 is the latest history record; ``planned_yaws[k-1]`` is the yaw
    vector at step ``k``.
    """
    planned = np.asarray(planned_yaws, dtype=float)
    if horizon_steps is None:
        horizon_steps = planned.shape[0]
    if planned.shape[0] < horizon_steps:
        raise ValueError("planned yaws do not cover the horizon")
    model = HorizonModel(layout, specs, inflow, history, horizon_steps, dt, params)
    return model.powers(planned[:horizon_steps])
