"""Basis-function yaw MPC with back-to-front sequential DIRECT solves.

Each turbine's yaw trajectory over the horizon is ``gamma_i(0) + psi(o1, o2, t)``,
a single rate-limited ramp whose amplitude/sign is set by ``o1`` and whose
start time is set by ``o2``. The cost is the delay-aware, penalised farm
energy over the prediction horizon.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._fastcost import horizon_cost
from .delay import HorizonModel, YawHistory
from .direct import DirectConfig, maximize
from .farm import FarmLayout, InflowState, TurbineSpec, flow_angle
from .wake import TurbineArrays, WakeParams

log = logging.getLogger(__name__)

_DEGENERATE = 1e-9


@dataclass(frozen=True)
class BasisParams:
    o1: float = 0.5
    o2: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.o1 <= 1.0 and 0.0 <= self.o2 <= 1.0):
            raise ValueError(f"basis parameters must lie in [0, 1], got ({self.o1}, {self.o2})")


HOLD = BasisParams(0.5, 0.5)


@dataclass(frozen=True)
class MPCConfig:
    t_ah: float = 100.0
    horizon: float = 500.0
    dt: float = 5.0
    r_gamma_max: float = 0.5
    gamma_max: float = 33.0
    gamma_min: float = -33.0
    sigmoid_slope: float = 50.0
    optimizer_budget: int = 150
    control_interval: float = 60.0

    def __post_init__(self):
        if not (self.horizon >= self.t_ah > 0):
            raise ValueError("need horizon >= t_ah > 0")
        if not self.r_gamma_max > 0:
            raise ValueError("r_gamma_max must be positive")
        if not self.gamma_min < 0 < self.gamma_max:
            raise ValueError("need gamma_min < 0 < gamma_max")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class FarmModel:
    """The controller's internal picture of the farm."""

    layout: FarmLayout
    turbine: TurbineSpec | Sequence[TurbineSpec] = TurbineSpec()
    wake: WakeParams = WakeParams()

    @property
    def n_turbines(self) -> int:
        return self.layout.n_turbines

    @property
    def arrays(self) -> TurbineArrays:
        return TurbineArrays(self.turbine, self.n_turbines)


def saturate(x, a, b):
    if a > b:
        raise ValueError("saturation bounds must satisfy a <= b")
    return np.clip(x, a, b) if np.ndim(x) else min(max(x, a), b)


def start_time(o1, o2):
    """Normalised ramp start time."""
    return o2 * (1.0 - 2.0 * np.abs(o1 - 0.5))


def basis(o1, o2, t, cfg: MPCConfig = MPCConfig()):
    """Yaw offset (deg) relative to the yaw at t = 0; broadcasts over arrays."""
    o1 = np.asarray(o1, dtype=float)
    o2 = np.asarray(o2, dtype=float)
    half_width = np.abs(o1 - 0.5)
    safe = np.where(half_width < _DEGENERATE, 1.0, 2.0 * half_width)
    ramp = np.clip((np.asarray(t, dtype=float) / cfg.t_ah - start_time(o1, o2)) / safe, 0.0, 1.0)
    out = 2.0 * (o1 - 0.5) * ramp * cfg.r_gamma_max * cfg.t_ah
    out = np.where(half_width < _DEGENERATE, 0.0, out)
    return float(out) if out.ndim == 0 else out


def _sigma(x, slope):
    return 0.5 * np.tanh(slope * x) + 0.5


def yaw_penalty(gamma, cfg: MPCConfig = MPCConfig()):
    """Smooth in-band indicator: ~1 inside (gamma_min, gamma_max), ~0 outside."""
    g = np.asarray(gamma, dtype=float)
    out = _sigma(cfg.gamma_max - g, cfg.sigmoid_slope) * _sigma(g - cfg.gamma_min, cfg.sigmoid_slope)
    return float(out) if out.ndim == 0 else out


def yaw_trajectory(current_yaws, params: np.ndarray, times, cfg: MPCConfig = MPCConfig()):
    """Planned yaws ``[time, turbine]`` for parameter array ``params[turbine] = (o1, o2)``."""
    params = np.asarray(params, dtype=float)
    t = np.asarray(times, dtype=float)[:, None]
    return np.asarray(current_yaws, float)[None, :] + basis(params[None, :, 0], params[None, :, 1], t, cfg)


def _as_array(params) -> np.ndarray:
    if isinstance(params, np.ndarray):
        return params.astype(float)
    return np.array([[p.o1, p.o2] for p in params], dtype=float)


class MPCProblem:
    """Horizon cost for fixed snapshot inputs, ready for repeated evaluation."""

    def __init__(self, model: FarmModel, current_yaws, history: YawHistory | None,
                 inflow: InflowState, cfg: MPCConfig = MPCConfig()):
        self.model = model
        self.cfg = cfg
        self.current = np.asarray(current_yaws, dtype=float)
        if history is None:
            history = YawHistory.constant(self.current, capacity=1)
        self.horizon = HorizonModel(model.layout, model.arrays, inflow, history,
                                    cfg.horizon_steps, cfg.dt, model.wake)
        self.times = cfg.dt * np.arange(1, cfg.horizon_steps + 1)
        self.n_evaluations = 0
        g, tb = self.horizon.geometry, self.horizon.turbines
        self._pair = np.stack([g.mask.astype(float), g.dn, g.sigma_lin, g.defl_shape])
        self._turb = np.stack([tb.D, tb.ct, tb.power_coef, tb.rated, tb.cos_exp])
        self._scalars = np.array([cfg.t_ah, cfg.r_gamma_max, cfg.gamma_max, cfg.gamma_min,
                                  cfg.sigmoid_slope, g.gain, g.wind_speed, cfg.dt])
        self._rows = np.ascontiguousarray(self.horizon.rows)
        # first 0-based step whose yaw inputs (own and delayed) are all on the plateau
        k_ramp = int(np.ceil(cfg.t_ah / cfg.dt - 1e-9))
        self._k_const = k_ramp + self.horizon.delay.max_steps - 1

    def planned(self, params) -> np.ndarray:
        return yaw_trajectory(self.current, _as_array(params), self.times, self.cfg)

    def stage_powers(self, params) -> np.ndarray:
        """Penalised powers ``[step, turbine]``."""
        plan = self.planned(params)
        return self.horizon.powers(plan) * yaw_penalty(plan, self.cfg)

    def cost(self, params) -> float:
        self.n_evaluations += 1
        return self._fast(_as_array(params))

    def reference_cost(self, params) -> float:
        """Numpy evaluation of the same cost, independent of the compiled kernel."""
        return self.cfg.dt * float(np.sum(self.stage_powers(params)))

    def _fast(self, params: np.ndarray) -> float:
        return horizon_cost(params, self.current, self.horizon.past, self._rows, self.times,
                            self._pair, self._turb, self._scalars, self._k_const)


def mpc_cost(model: FarmModel, params, current_yaws, history: YawHistory | None,
             inflow_estimate: InflowState, cfg: MPCConfig = MPCConfig()) -> float:
    """Penalised farm energy (J) over the horizon for one parameter set per turbine."""
    if len(params) != model.n_turbines:
        raise ValueError("need one BasisParams per turbine")
    return MPCProblem(model, current_yaws, history, inflow_estimate, cfg).cost(params)


Optimizer = Callable[[Callable[[np.ndarray], float], int], object]


def direct_optimizer(budget: int = 150, epsilon: float = 1e-4) -> Optimizer:
    """DIRECT maximiser over [0, 1]^n with a fixed evaluation budget."""
    dcfg = DirectConfig(max_evaluations=budget, epsilon=epsilon)
    return lambda f, n: maximize(f, n, dcfg)


@dataclass
class MPCSolution:
    params: list[BasisParams]
    order: list[int]
    current_yaws: np.ndarray
    cost: float
    hold_cost: float
    degraded: bool
    cfg: MPCConfig
    trace: list[tuple[int, float, float, float]] = field(default_factory=list, repr=False)

    def yaw_at(self, t) -> np.ndarray:
        """Commanded yaws ``t`` seconds after the solve."""
        return yaw_trajectory(self.current_yaws, _as_array(self.params), np.atleast_1d(t), self.cfg)[0]

    def commands(self, sim_dt: float) -> np.ndarray:
        """Yaw targets over the first control interval, one row per ``sim_dt``."""
        n = int(round(self.cfg.control_interval / sim_dt))
        times = sim_dt * np.arange(1, n + 1)
        return yaw_trajectory(self.current_yaws, _as_array(self.params), times, self.cfg)

    def write_trace(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["turbine", "o1", "o2", "cost"])
            for row in self.trace:
                w.writerow([row[0], f"{row[1]:.12g}", f"{row[2]:.12g}", f"{row[3]:.12g}"])
        return path


def downstream_order(layout: FarmLayout, wind_direction: float) -> list[int]:
    """Turbine indices from most downstream to most upstream."""
    theta = flow_angle(wind_direction)
    xy = layout.xy
    s = xy[:, 0] * np.cos(theta) + xy[:, 1] * np.sin(theta)
    return sorted(range(len(s)), key=lambda i: (-s[i], i))


def solve_back_to_front(model: FarmModel, current_yaws, history: YawHistory | None,
                        inflow_estimate: InflowState, cfg: MPCConfig = MPCConfig(),
                        optimizer: Optimizer | None = None) -> MPCSolution:
    """One sequential pass, downstream to upstream, each turbine solved over (o1, o2).

    Turbines not yet visited hold their current yaw. An optimiser failure for
    a turbine keeps it at hold and flags the solution as degraded.
    """
    problem = MPCProblem(model, current_yaws, history, inflow_estimate, cfg)
    if optimizer is None:
        optimizer = direct_optimizer(cfg.optimizer_budget)
    n = model.n_turbines
    params = np.tile([HOLD.o1, HOLD.o2], (n, 1))
    hold_cost = problem.cost(params)
    best_cost = hold_cost
    order = downstream_order(model.layout, inflow_estimate.wind_direction)
    trace: list[tuple[int, float, float, float]] = []
    degraded = False

    for i in order:
        def objective(o, i=i):
            trial = params.copy()
            trial[i] = o
            val = problem.cost(trial)
            trace.append((i, float(o[0]), float(o[1]), val))
            return val

        try:
            res = optimizer(objective, 2)
        except (FloatingPointError, ValueError) as exc:
            log.warning("optimiser failed for turbine %d: %s", i, exc)
            degraded = True
            continue
        x = np.clip(np.asarray(res.x, dtype=float), 0.0, 1.0)
        if res.fun >= best_cost:
            params[i] = x
            best_cost = float(res.fun)

    return MPCSolution(
        params=[BasisParams(float(a), float(b)) for a, b in params],
        order=order,
        current_yaws=problem.current.copy(),
        cost=best_cost,
        hold_cost=hold_cost,
        degraded=degraded,
        cfg=cfg,
        trace=trace,
    )
