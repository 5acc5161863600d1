"""Experiment configuration, evaluation episodes, benchmark grid and training runs."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .controllers import ControlTask, ControllerKind, make_controller
from .env import EnvConfig, WindFarmEnv
from .farm import FarmLayout, TurbineSpec
from .mpc import MPCConfig
from .sac import SACAgent, SACConfig, SafetyWindow, load_agent, train, v30, write_curve
from .wake import WakeParams

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class FarmConfig:
    n_turbines: int = 3
    spacing_d: float = 5.0  # rotor diameters
    direction: float = 270.0  # row alignment, as a wind direction


@dataclass(frozen=True)
class ExperimentSettings:
    seeds: tuple[int, ...] = (0, 1, 2)
    eval_directions: tuple[float, ...] = (265.0, 270.0, 275.0)
    eval_duration: float = 1000.0
    controllers: tuple[str, ...] = ("greedy", "idealized_mpc")
    train_steps: int = 40_000
    n_envs: int = 4
    eval_every: int = 5000
    checkpoint: str = ""  # agent checkpoint for learned controllers in benchmarks


@dataclass(frozen=True)
class ExperimentConfig:
    farm: FarmConfig = FarmConfig()
    turbine: TurbineSpec = TurbineSpec()
    wake: WakeParams = WakeParams()
    env: EnvConfig = EnvConfig()
    mpc: MPCConfig = MPCConfig()
    sac: SACConfig = SACConfig()
    experiment: ExperimentSettings = ExperimentSettings()

    def layout(self) -> FarmLayout:
        return FarmLayout.row(self.farm.n_turbines, self.farm.spacing_d * self.turbine.rotor_diameter,
                              self.farm.direction)

    def eval_env(self) -> WindFarmEnv:
        cfg = dataclasses.replace(self.env, episode_length=self.experiment.eval_duration)
        return WindFarmEnv(self.layout(), self.turbine, self.wake, cfg)

    def train_env(self, seed: int) -> WindFarmEnv:
        return WindFarmEnv(self.layout(), self.turbine, self.wake, dataclasses.replace(self.env, seed=seed))


_SECTIONS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if default is None:
            return None if raw.lower() in ("", "none") else float(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, tuple):
            items = [s for s in raw.replace(";", ",").split(",") if s.strip()]
            if default and isinstance(default[0], str):
                return tuple(s.strip() for s in items)
            conv = int if default and isinstance(default[0], int) else float
            if not default and "." not in raw:
                conv = int
            return tuple(conv(s) for s in items)
        return type(default)(raw)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse INI-style text; every key is optional and overrides its default."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(source, f"malformed config: {exc}") from None
    base = ExperimentConfig()
    sections = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(name, "unknown section")
        current = getattr(base, name)
        defaults = {f.name: getattr(current, f.name) for f in dataclasses.fields(current)}
        values = {}
        for key, raw in parser.items(name):
            if key not in defaults:
                raise ConfigError(f"{name}.{key}", "unknown key")
            values[key] = _convert(f"{name}.{key}", raw, defaults[key])
        try:
            sections[name] = dataclasses.replace(current, **values)
        except (ValueError, TypeError) as exc:
            bad = next(iter(values), name)
            raise ConfigError(f"{name}.{bad}" if len(values) == 1 else name, str(exc)) from None
    cfg = dataclasses.replace(base, **sections)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))


def validate(cfg: ExperimentConfig) -> None:
    ex = cfg.experiment
    if not ex.seeds:
        raise ConfigError("experiment.seeds", "at least one seed is required")
    if not ex.eval_directions:
        raise ConfigError("experiment.eval_directions", "at least one direction is required")
    if not ex.eval_duration > 0:
        raise ConfigError("experiment.eval_duration", "must be positive")
    for c in ex.controllers:
        try:
            ControllerKind(c)
        except ValueError:
            raise ConfigError("experiment.controllers", f"unknown controller {c!r}") from None
    if ex.n_envs < 1 or ex.train_steps < 1 or ex.eval_every < 1:
        raise ConfigError("experiment", "train_steps, n_envs and eval_every must be positive")
    if ex.train_steps < cfg.sac.warmup_steps:
        raise ConfigError("experiment.train_steps", "must be at least sac.warmup_steps")
    if cfg.farm.n_turbines < 1:
        raise ConfigError("farm.n_turbines", "must be positive")
    for kind in ControllerKind:
        if kind.decision_period is not None:
            n = kind.decision_period / cfg.env.sim_dt
            if abs(n - round(n)) > 1e-9:
                raise ConfigError("env.sim_dt", f"{kind.value} period is not a multiple of sim_dt")
    if abs(cfg.mpc.control_interval - 60.0) > 1e-9 or abs(cfg.mpc.dt - cfg.env.sim_dt) > 1e-9:
        raise ConfigError("mpc", "control_interval must be 60 s and dt must equal env.sim_dt")


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that parses back to ``cfg``."""
    parser = configparser.ConfigParser(interpolation=None)
    for name in _SECTIONS:
        section = getattr(cfg, name)
        parser[name] = {}
        for f in dataclasses.fields(section):
            v = getattr(section, f.name)
            parser[name][f.name] = (", ".join(str(x) for x in v) if isinstance(v, tuple)
                                    else "none" if v is None else str(v))
    lines = []
    for name in parser.sections():
        lines.append(f"[{name}]")
        lines += [f"{k} = {v}" for k, v in parser[name].items()]
        lines.append("")
    return "\n".join(lines)


def substream_seed(root: int, name: str) -> int:
    """Independent seed for a named random stream derived from the root seed."""
    return int(np.random.SeedSequence(root, spawn_key=(zlib.crc32(name.encode()),)).generate_state(1)[0])


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class EpisodeLog:
    controller: str
    seed: int
    direction: float
    n_turbines: int
    rows: list[list[float]] = field(repr=False, default_factory=list)

    @property
    def columns(self) -> list[str]:
        n = range(self.n_turbines)
        return (["time"] + [f"yaw_{i}" for i in n] + [f"power_{i}" for i in n]
                + [f"u_meas_{i}" for i in n] + [f"phi_meas_{i}" for i in n]
                + ["wd_true", "wind_speed", "ti", "reward", "farm_power", "v30"])

    @property
    def farm_power(self) -> np.ndarray:
        return np.array([r[-2] for r in self.rows])

    @property
    def mean_power(self) -> float:
        return float(np.mean(self.farm_power))

    @property
    def v30_trace(self) -> np.ndarray:
        return np.array([r[-1] for r in self.rows])

    @property
    def yaws(self) -> np.ndarray:
        return np.array([r[1:1 + self.n_turbines] for r in self.rows])

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_fmt(v) for v in r])
        return path


def mean_power_from_csv(path) -> float:
    """Mean farm power recomputed from the per-turbine columns of an episode CSV."""
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        totals = []
        for row in reader:
            totals.append(sum(float(v) for k, v in row.items() if k.startswith("power_")))
    return float(np.mean(totals))


def run_episode(env: WindFarmEnv, controller, seed: int, wind_direction: float,
                policy: Callable[[np.ndarray], np.ndarray] | None = None) -> EpisodeLog:
    """Roll out one evaluation episode with the mean direction pinned."""
    if controller.act_dim and policy is None:
        raise ValueError(f"{controller.kind.value} needs a policy")
    task = ControlTask(env, controller)
    obs = task.reset(seed=seed, wind_direction=wind_direction)
    window = SafetyWindow(env.n_turbines)
    episode = EpisodeLog(controller.kind.value, seed, wind_direction, env.n_turbines)
    done = False
    while not done:
        action = policy(obs) if controller.act_dim else None
        obs, _, done, info = task.step(action)
        for rec in info["records"]:
            window.push(rec["yaws"])
            u, phi, _ = rec["measurement"]
            inflow = rec["inflow"]
            power = rec["power"]
            episode.rows.append([rec["time"], *rec["yaws"], *power, *u, *phi, inflow.wind_direction,
                                 inflow.wind_speed, inflow.turbulence_intensity, rec["reward"],
                                 float(np.sum(power)), v30(window)])
    return episode


def agent_policy(agent: SACAgent) -> Callable[[np.ndarray], np.ndarray]:
    return lambda obs: agent.act(obs, deterministic=True)


def simulate(cfg: ExperimentConfig, controller: str, seed: int, wind_direction: float,
             agent: SACAgent | None = None) -> EpisodeLog:
    env = cfg.eval_env()
    ctrl = make_controller(controller, env, cfg.mpc)
    policy = agent_policy(agent) if agent is not None else None
    return run_episode(env, ctrl, substream_seed(seed, "eval"), wind_direction, policy)


@dataclass
class ResultRecord:
    controller: str
    seed: int
    direction: float
    mean_power: float = math.nan
    gain_pct: float = math.nan
    v30_max: float = math.nan
    v30_trace: np.ndarray = field(default=None, repr=False)
    wall_time: float = 0.0
    status: str = "ok"


SUMMARY_FIELDS = ["controller", "seed", "direction", "mean_power_w", "gain_pct", "v30_max", "status"]


def run_benchmark(cfg: ExperimentConfig, out_dir, agents: dict[str, SACAgent] | None = None
                  ) -> list[ResultRecord]:
    """Evaluate every (controller, seed, direction) cell against greedy.

    Per-step episode CSVs go to ``out_dir/episodes``; ``summary.csv`` holds one
    row per cell and ``summary.txt`` a readable table. A failing cell is
    recorded as failed and the grid continues.
    """
    out = Path(out_dir)
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    agents = agents or {}
    kinds = ["greedy"] + [c for c in cfg.experiment.controllers if c != "greedy"]
    records: list[ResultRecord] = []
    for seed in cfg.experiment.seeds:
        for wd in cfg.experiment.eval_directions:
            greedy_power = math.nan
            for kind in kinds:
                rec = ResultRecord(kind, seed, wd)
                start = time.perf_counter()
                try:
                    ep = simulate(cfg, kind, seed, wd, agents.get(kind))
                    path = ep.write_csv(out / "episodes" / f"{kind}_s{seed}_wd{wd:g}.csv")
                    rec.mean_power = mean_power_from_csv(path)
                    rec.v30_trace = ep.v30_trace
                    rec.v30_max = float(ep.v30_trace.max())
                except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the grid
                    log.exception("benchmark cell %s/%s/%s failed", kind, seed, wd)
                    rec.status = f"failed: {type(exc).__name__}: {exc}"
                rec.wall_time = time.perf_counter() - start
                if kind == "greedy":
                    greedy_power = rec.mean_power
                rec.gain_pct = 100.0 * (rec.mean_power / greedy_power - 1.0)
                records.append(rec)
    write_summary(out, records)
    return records


def write_summary(out: Path, records: list[ResultRecord]) -> None:
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in records:
            w.writerow([r.controller, r.seed, f"{r.direction:g}", _fmt(r.mean_power), _fmt(r.gain_pct),
                        _fmt(r.v30_max), r.status])
    (out / "summary.txt").write_text(format_table(records))


def format_table(records: list[ResultRecord]) -> str:
    lines = [f"{'controller':<15}{'seed':>5}{'wd':>7}{'power [MW]':>12}{'gain [%]':>10}"
             f"{'V30 max':>9}{'time [s]':>10}  status"]
    for r in records:
        lines.append(f"{r.controller:<15}{r.seed:>5}{r.direction:>7g}{r.mean_power / 1e6:>12.3f}"
                     f"{r.gain_pct:>10.2f}{r.v30_max:>9.2f}{r.wall_time:>10.1f}  {r.status}")
    by_kind: dict[str, list[float]] = {}
    for r in records:
        if r.status == "ok":
            by_kind.setdefault(r.controller, []).append(r.gain_pct)
    lines.append("")
    lines.append("mean gain vs greedy: " + ", ".join(f"{k} {np.mean(v):+.2f}%" for k, v in by_kind.items()))
    return "\n".join(lines) + "\n"


TRAINING_FIELDS = ["step", "direction", "mean_power", "gain_vs_greedy", "v30"]


@dataclass
class TrainingRun:
    agent: SACAgent
    curve: list[dict]
    rows: list[dict]
    wall_time: float

    def final_gain(self) -> float:
        return self.curve[-1]["gain_vs_greedy"]


def greedy_baselines(cfg: ExperimentConfig, seed: int) -> dict[float, float]:
    return {wd: simulate(cfg, "greedy", seed, wd).mean_power for wd in cfg.experiment.eval_directions}


def run_training(cfg: ExperimentConfig, agent_kind: str, seed: int, out_dir=None,
                 resume_from=None, total_steps: int | None = None) -> TrainingRun:
    """Train a hierarchical or direct-RL agent; evaluate at the pinned directions.

    Writes ``training_curve.csv`` (one row per evaluation and direction plus a
    ``mean`` row) and ``sac_curve.csv`` to ``out_dir`` with the checkpoint.
    """
    kind = ControllerKind(agent_kind)
    if not kind.learns:
        raise ConfigError("agent", f"{agent_kind!r} is not a learning controller")
    ex = cfg.experiment
    steps = ex.train_steps if total_steps is None else total_steps
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    baselines = greedy_baselines(cfg, seed)
    rows: list[dict] = []

    def make_task(i: int) -> ControlTask:
        env = cfg.train_env(substream_seed(seed, f"env{i}"))
        return ControlTask(env, make_controller(kind, env, cfg.mpc))

    def evaluate(agent: SACAgent, step: int) -> dict:
        powers, rewards, gains = [], [], []
        for wd in ex.eval_directions:
            ep = simulate(cfg, kind.value, seed, wd, agent)
            gain = 100.0 * (ep.mean_power / baselines[wd] - 1.0)
            powers.append(ep.mean_power)
            rewards.append(float(np.mean([r[-3] for r in ep.rows])))
            gains.append(gain)
            rows.append({"step": step, "direction": f"{wd:g}", "mean_power": ep.mean_power,
                         "gain_vs_greedy": gain, "v30": float(ep.v30_trace[-1])})
        return {"eval_mean_power": float(np.mean(powers)), "eval_mean_reward": float(np.mean(rewards)),
                "gain_vs_greedy": float(np.mean(gains))}

    result = train(make_task, cfg.sac, total_steps=steps, n_envs=ex.n_envs, eval_every=ex.eval_every,
                   evaluate=evaluate, seed=substream_seed(seed, "train"), checkpoint_dir=out,
                   resume_from=resume_from, n_turbines=cfg.farm.n_turbines)
    # the mean row carries the training-rollout V30 logged with the curve
    for c in result.curve:
        rows.append({"step": c["step"], "direction": "mean", "mean_power": c.get("eval_mean_power", math.nan),
                     "gain_vs_greedy": c.get("gain_vs_greedy", math.nan), "v30": c["v30"]})
    rows.sort(key=lambda r: (r["step"], r["direction"] == "mean"))
    if out is not None:
        write_curve(out / "sac_curve.csv", result.curve)
        with (out / "training_curve.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAINING_FIELDS)
            for r in rows:
                w.writerow([r["step"], r["direction"], _fmt(r["mean_power"]), _fmt(r["gain_vs_greedy"]),
                            _fmt(r["v30"])])
    return TrainingRun(result.agent, result.curve, rows, result.wall_time)


def evaluate_checkpoint(cfg: ExperimentConfig, agent_kind: str, checkpoint, seed: int, out_dir
                        ) -> list[ResultRecord]:
    agent = load_agent(checkpoint)
    sub = dataclasses.replace(cfg, experiment=dataclasses.replace(
        cfg.experiment, seeds=(seed,), controllers=("greedy", agent_kind)))
    return run_benchmark(sub, out_dir, {agent_kind: agent})
