"""Yaw controllers wired to the simulator, and the task (MDP) view used for RL.

Every controller exposes ``reset(env)``, ``decide(env, obs, action)`` at the
start of each decision period and ``command(env)`` once per simulation step.
``ControlTask`` turns a controller into an environment whose transitions
span one decision period.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .delay import YawHistory
from .env import WindFarmEnv, denormalize_action, normalize
from .farm import InflowState
from .mpc import FarmModel, MPCConfig, MPCSolution, solve_back_to_front
from .sac import SafetyWindow, v30

log = logging.getLogger(__name__)

__all__ = [
    "ActionRanges", "ControlTask", "ControllerKind", "DirectRLController", "GreedyController",
    "MPCYawController", "SafetyWindow", "greedy_policy", "make_controller", "v30",
]


class ControllerKind(str, enum.Enum):
    GREEDY = "greedy"
    IDEALIZED_MPC = "idealized_mpc"
    DIRECT_RL = "direct_rl"
    HIERARCHICAL = "hierarchical"

    @property
    def decision_period(self) -> float | None:
        return {"greedy": None, "idealized_mpc": 60.0, "direct_rl": 10.0,
                "hierarchical": 60.0}[self.value]

    @property
    def learns(self) -> bool:
        return self in (ControllerKind.DIRECT_RL, ControllerKind.HIERARCHICAL)


@dataclass(frozen=True)
class ActionRanges:
    """Physical ranges for the hierarchical agent's (wd, U, TI) action."""

    wind_direction: tuple[float, float] = (250.0, 290.0)
    wind_speed: tuple[float, float] = (5.0, 15.0)
    turbulence_intensity: tuple[float, float] = (0.02, 0.20)

    def to_inflow(self, action) -> tuple[float, float, float]:
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        if a.shape != (3,):
            raise ValueError(f"inflow action must have 3 components, got shape {a.shape}")
        return (float(denormalize_action(a[0], *self.wind_direction)),
                float(denormalize_action(a[1], *self.wind_speed)),
                float(denormalize_action(a[2], *self.turbulence_intensity)))

    def to_action(self, wd: float, u: float, ti: float) -> np.ndarray:
        return np.array([normalize(wd, *self.wind_direction), normalize(u, *self.wind_speed),
                         normalize(ti, *self.turbulence_intensity)], dtype=float)


def _period_steps(period: float, sim_dt: float) -> int:
    n = int(round(period / sim_dt))
    if n < 1 or abs(n * sim_dt - period) > 1e-9:
        raise ValueError(f"decision period {period} s is not a multiple of sim_dt {sim_dt} s")
    return n


def greedy_policy(yaws, sim_dt: float, rate_limit: float = 0.5) -> np.ndarray:
    """Yaw rates homing every turbine to zero offset, landing exactly on zero."""
    return np.clip(-np.asarray(yaws, dtype=float) / sim_dt, -rate_limit, rate_limit)


class GreedyController:
    kind = ControllerKind.GREEDY
    act_dim = 0

    def __init__(self, sim_dt: float = 5.0, rate_limit: float = 0.5):
        self.period = sim_dt
        self.rate_limit = rate_limit

    def reset(self, env: WindFarmEnv) -> None:
        self.period = env.cfg.sim_dt
        self.rate_limit = env.cfg.yaw_rate_limit

    def decide(self, env, obs, action=None) -> None:
        pass

    def command(self, env: WindFarmEnv):
        return greedy_policy(env.yaws, env.cfg.sim_dt, self.rate_limit), "rate"

    def observe(self, env) -> None:
        pass


class MPCYawController:
    """Receding-horizon controller; the inflow estimate comes from the plant or an agent.

    With ``source="truth"`` the true inflow is read from the simulator
    (idealized benchmark). With ``source="action"`` the action passed to
    ``decide`` is a normalized (wd, U, TI) estimate. A failed or degraded
    solve holds the current yaws until the next decision.
    """

    def __init__(self, model: FarmModel, cfg: MPCConfig = MPCConfig(), source: str = "truth",
                 ranges: ActionRanges = ActionRanges(), history_capacity: int = 512):
        if source not in ("truth", "action"):
            raise ValueError(f"unknown inflow source {source!r}")
        self.model = model
        self.cfg = cfg
        self.source = source
        self.kind = ControllerKind.IDEALIZED_MPC if source == "truth" else ControllerKind.HIERARCHICAL
        self.act_dim = 0 if source == "truth" else 3
        self.ranges = ranges
        self.period = cfg.control_interval
        self.history_capacity = history_capacity
        self.solution: MPCSolution | None = None
        self.n_solves = 0
        self.n_failures = 0
        self.last_estimate: InflowState | None = None

    def reset(self, env: WindFarmEnv) -> None:
        self.history = YawHistory(env.n_turbines, self.history_capacity)
        self.history.append(env.time, env.yaws)
        self.solution = None
        self._hold = env.yaws.copy()
        self._t_solve = env.time

    def estimate(self, env: WindFarmEnv, action) -> InflowState:
        if self.source == "truth":
            return env.truth.inflow
        wd, u, ti = self.ranges.to_inflow(action)
        return InflowState(u, wd, ti)

    def decide(self, env: WindFarmEnv, obs, action=None) -> None:
        self._t_solve = env.time
        self._hold = env.yaws.copy()
        self.solution = None
        self.n_solves += 1
        try:
            est = self.estimate(env, action)
            self.last_estimate = est
            sol = solve_back_to_front(self.model, env.yaws, self.history, est, self.cfg)
        except ValueError as exc:  # includes InvalidInflowError
            self.n_failures += 1
            log.debug("MPC solve failed at t=%.0f: %s; holding", env.time, exc)
            return
        if sol.degraded:
            self.n_failures += 1
            return
        self.solution = sol

    def command(self, env: WindFarmEnv):
        if self.solution is None:
            return self._hold, "target"
        return self.solution.yaw_at(env.time + env.cfg.sim_dt - self._t_solve), "target"

    def observe(self, env: WindFarmEnv) -> None:
        self.history.append(env.time, env.yaws)


class DirectRLController:
    """Normalized yaw-rate actions held for one decision period."""

    kind = ControllerKind.DIRECT_RL

    def __init__(self, n_turbines: int, period: float = 10.0, rate_limit: float = 0.5):
        self.act_dim = n_turbines
        self.period = period
        self.rate_limit = rate_limit
        self.rate = np.zeros(n_turbines)

    def reset(self, env: WindFarmEnv) -> None:
        self.rate = np.zeros(env.n_turbines)

    def decide(self, env, obs, action=None) -> None:
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        if a.shape != (self.act_dim,):
            raise ValueError(f"expected {self.act_dim} actions, got shape {a.shape}")
        self.rate = a * self.rate_limit

    def command(self, env):
        return self.rate, "rate"

    def observe(self, env) -> None:
        pass


def make_controller(kind, env: WindFarmEnv, mpc_cfg: MPCConfig = MPCConfig(),
                    ranges: ActionRanges = ActionRanges()):
    kind = ControllerKind(kind)
    model = FarmModel(env.layout, env.turbine, env.wake)
    if kind is ControllerKind.GREEDY:
        return GreedyController(env.cfg.sim_dt, env.cfg.yaw_rate_limit)
    if kind is ControllerKind.IDEALIZED_MPC:
        return MPCYawController(model, mpc_cfg, "truth")
    if kind is ControllerKind.HIERARCHICAL:
        return MPCYawController(model, mpc_cfg, "action", ranges)
    return DirectRLController(env.n_turbines, kind.decision_period, env.cfg.yaw_rate_limit)


class ControlTask:
    """One transition per decision period; the reward is the mean step reward.

    ``info["yaws"]`` holds the executed yaw vectors of every simulation step
    in the period, ``info["truncated"]`` marks the time-limit end of an
    episode (never a true terminal state).
    """

    def __init__(self, env: WindFarmEnv, controller, eval_direction: float | None = None):
        self.env = env
        self.controller = controller
        self.n_sub = _period_steps(controller.period, env.cfg.sim_dt)
        self.eval_direction = eval_direction
        self.obs = None

    @property
    def obs_dim(self) -> int:
        return self.env.obs_dim

    @property
    def act_dim(self) -> int:
        return self.controller.act_dim

    @property
    def n_turbines(self) -> int:
        return self.env.n_turbines

    def reset(self, seed: int | None = None, wind_direction: float | None = None) -> np.ndarray:
        wd = self.eval_direction if wind_direction is None else wind_direction
        self.obs = self.env.reset(seed=seed, wind_direction=wd)
        self.controller.reset(self.env)
        return self.obs

    def step(self, action=None):
        env = self.env
        self.controller.decide(env, self.obs, action)
        rewards, yaws, records = [], [], []
        done = False
        for _ in range(self.n_sub):
            prev = env.yaws.copy()
            cmd, mode = self.controller.command(env)
            obs, r, done, info = env.step(cmd, mode)
            assert np.all(np.abs(env.yaws - prev) <= env.cfg.yaw_rate_limit * env.cfg.sim_dt + 1e-9)
            self.controller.observe(env)
            rewards.append(r)
            yaws.append(info["yaws"])
            info["reward"] = r
            info["measurement"] = env.last_measurement
            records.append(info)
            if done:
                break
        self.obs = obs
        return obs, float(np.mean(rewards)), done, {
            "yaws": yaws, "rewards": rewards, "records": records, "truncated": done,
        }
