"""Stochastic transient wind-farm simulator.

The plant differs from the controller's internal model in two ways: each
wake meanders laterally (an Ornstein-Uhlenbeck offset per wake), and the
wind direction fluctuates around its mean. Yaw changes propagate downstream
with advection delay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .delay import YawHistory, compute_delay_matrix, effective_yaw_matrix
from .farm import YAW_ENVELOPE, FarmLayout, InflowState, TurbineSpec, rated_power_at
from .wake import TurbineArrays, WakeGeometry, WakeParams

SPEED_RANGE = (0.0, 15.0)
DIRECTION_RANGE = (250.0, 290.0)
YAW_RANGE = (-YAW_ENVELOPE, YAW_ENVELOPE)


@dataclass(frozen=True)
class EnvConfig:
    sim_dt: float = 5.0
    wind_speed_mean: float = 10.0
    wind_dir_range: tuple[float, float] = (260.0, 280.0)
    ti: float = 0.07
    yaw_rate_limit: float = 0.5
    episode_length: float = 1000.0
    meander_amplitude: float = 0.15 * 178.3
    meander_timescale: float = 60.0
    dir_drift_sd: float = 1.0
    dir_drift_timescale: float = 60.0
    measurement_noise_sd: tuple[float, float] = (0.3, 2.0)
    seed: int = 0

    def __post_init__(self):
        if not self.sim_dt > 0:
            raise ValueError("sim_dt must be positive")
        lo, hi = self.wind_dir_range
        if not lo <= hi:
            raise ValueError("wind_dir_range must be non-empty")
        if not self.yaw_rate_limit > 0:
            raise ValueError("yaw_rate_limit must be positive")
        if min(self.meander_amplitude, self.dir_drift_sd, *self.measurement_noise_sd) < 0:
            raise ValueError("noise amplitudes must be non-negative")

    @property
    def history_capacity(self) -> int:
        return 512


@dataclass(frozen=True)
class EnvTruth:
    inflow: InflowState
    meander: np.ndarray = field(repr=False)
    mean_direction: float = 270.0


def normalize(x, lo, hi):
    """Affine map of [lo, hi] onto [-1, 1], clipped."""
    if not hi > lo:
        raise ValueError(f"degenerate range [{lo}, {hi}]")
    return np.clip(2.0 * (np.asarray(x, dtype=float) - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def denormalize_action(a, x_min, x_max):
    """Linear scaling of a in [-1, 1] to [x_min, x_max]."""
    if not x_max > x_min:
        raise ValueError(f"degenerate range [{x_min}, {x_max}]")
    return (np.asarray(a, dtype=float) + 1.0) / 2.0 * (x_max - x_min) + x_min


def normalize_obs(speeds, directions, yaws) -> np.ndarray:
    """Interleave per-turbine (u, phi, gamma), each scaled to [-1, 1]."""
    obs = np.stack([normalize(speeds, *SPEED_RANGE),
                    normalize(directions, *DIRECTION_RANGE),
                    normalize(yaws, *YAW_RANGE)], axis=-1)
    return obs.reshape(-1)


def _ou_step(x, mean, sd, tau, dt, rng):
    a = math.exp(-dt / tau)
    return mean + (x - mean) * a + sd * math.sqrt(1.0 - a * a) * rng.standard_normal(np.shape(x))


def _reflect(x, lo, hi):
    if hi <= lo:
        return lo
    while x < lo or x > hi:
        x = 2 * lo - x if x < lo else 2 * hi - x
    return x


class WindFarmEnv:
    """Single farm instance. Not thread-safe; run one per worker."""

    def __init__(self, layout: FarmLayout, turbine: TurbineSpec = TurbineSpec(),
                 wake: WakeParams = WakeParams(), cfg: EnvConfig = EnvConfig()):
        self.layout = layout
        self.turbine = turbine
        self.wake = wake
        self.cfg = cfg
        self.n_turbines = layout.n_turbines
        self.turbines = TurbineArrays(turbine, self.n_turbines)
        self.power_norm = float(sum(rated_power_at(s, cfg.wind_speed_mean) for s in self.turbines.specs))
        self._seed_seq = None
        self.reset(cfg.seed)

    @property
    def obs_dim(self) -> int:
        return 3 * self.n_turbines

    @property
    def truth(self) -> EnvTruth:
        return EnvTruth(self._inflow(), self.meander.copy(), self.mean_direction)

    def _inflow(self) -> InflowState:
        return InflowState(self.cfg.wind_speed_mean, self.wd, self.cfg.ti)

    def reset(self, seed: int | None = None, wind_direction: float | None = None,
              yaws=None) -> np.ndarray:
        """Start an episode.

        A seed re-initialises every random stream; without one the streams
        continue. ``wind_direction`` pins the mean direction (evaluation mode);
        otherwise it is drawn uniformly from ``wind_dir_range`` and the
        fluctuation is reflected into that range.
        """
        cfg = self.cfg
        if seed is not None or self._seed_seq is None:
            self._seed_seq = np.random.SeedSequence(cfg.seed if seed is None else seed)
            init, direction, meander, noise = self._seed_seq.spawn(4)
            self._rng_init = np.random.default_rng(init)
            self._rng_dir = np.random.default_rng(direction)
            self._rng_meander = np.random.default_rng(meander)
            self._rng_noise = np.random.default_rng(noise)
        self.eval_mode = wind_direction is not None
        if self.eval_mode:
            self.mean_direction = float(wind_direction)
        else:
            self.mean_direction = float(self._rng_init.uniform(*cfg.wind_dir_range))
        self.wd = self.mean_direction
        self.meander = cfg.meander_amplitude * self._rng_meander.standard_normal(self.n_turbines)
        self.time = 0.0
        self.yaws = np.zeros(self.n_turbines) if yaws is None else np.clip(
            np.asarray(yaws, dtype=float), *YAW_RANGE)
        self.history = YawHistory(self.n_turbines, cfg.history_capacity)
        self.history.append(0.0, self.yaws)
        speeds, powers = self._flow()
        self.last_powers = powers
        return self._observe(speeds)

    def _flow(self):
        inflow = self._inflow()
        dm = compute_delay_matrix(self.layout, inflow, self.cfg.sim_dt)
        src = effective_yaw_matrix(self.history, dm, self.time)
        geom = WakeGeometry(self.layout, self.turbines, inflow, self.wake)
        speeds = geom.speeds(src, self.meander)
        return speeds, self.turbines.power(speeds, self.yaws)

    def _observe(self, speeds) -> np.ndarray:
        su, sd = self.cfg.measurement_noise_sd
        u = speeds + su * self._rng_noise.standard_normal(self.n_turbines)
        phi = self.wd + sd * self._rng_noise.standard_normal(self.n_turbines)
        self.last_measurement = (u, phi, self.yaws.copy())
        return normalize_obs(u, phi, self.yaws)

    def step(self, commands, mode: str = "rate"):
        """Advance one ``sim_dt``.

        ``mode="rate"`` takes yaw rates (deg/s); ``mode="target"`` takes
        absolute yaw targets (deg). Either way the executed rate is clipped to
        the actuator limit.
        """
        cmd = np.asarray(commands, dtype=float)
        if cmd.shape != (self.n_turbines,):
            raise ValueError(f"expected {self.n_turbines} commands, got shape {cmd.shape}")
        if not np.all(np.isfinite(cmd)):
            raise ValueError(f"non-finite yaw commands {cmd.tolist()}")
        cfg = self.cfg
        dt = cfg.sim_dt
        if mode == "rate":
            rate = cmd
        elif mode == "target":
            rate = (cmd - self.yaws) / dt
        else:
            raise ValueError(f"unknown command mode {mode!r}")
        rate = np.clip(rate, -cfg.yaw_rate_limit, cfg.yaw_rate_limit)
        self.yaws = np.clip(self.yaws + rate * dt, *YAW_RANGE)
        self.time += dt
        self.history.append(self.time, self.yaws)

        if cfg.dir_drift_sd > 0:
            wd = float(_ou_step(self.wd, self.mean_direction, cfg.dir_drift_sd,
                                cfg.dir_drift_timescale, dt, self._rng_dir))
            self.wd = wd if self.eval_mode else _reflect(wd, *cfg.wind_dir_range)
        if cfg.meander_amplitude > 0:
            self.meander = _ou_step(self.meander, 0.0, cfg.meander_amplitude,
                                    cfg.meander_timescale, dt, self._rng_meander)

        speeds, powers = self._flow()
        self.last_powers = powers
        obs = self._observe(speeds)
        reward = float(np.sum(powers)) / self.power_norm
        done = self.time >= cfg.episode_length - 1e-9
        info = {
            "time": self.time,
            "power": powers,
            "yaws": self.yaws.copy(),
            "effective_speeds": speeds,
            "inflow": self._inflow(),
        }
        return obs, reward, done, info
