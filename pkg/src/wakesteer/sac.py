"""Soft actor-critic for continuous actions in [-1, 1]^d.

Squashed-Gaussian actor, twin Q critics with Polyak-averaged targets and an
automatically tuned entropy temperature. ``train`` drives any task exposing
``reset() -> obs`` and ``step(action) -> (obs, reward, done, info)``.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "wakesteer-sac"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SACConfig:
    gamma: float = 0.99
    lr: float = 3e-4
    batch_size: int = 256
    tau: float = 0.005
    target_entropy: float | None = None  # defaults to -action_dim
    warmup_steps: int = 5000
    updates_per_step: int = 1
    buffer_size: int = 1_000_000
    hidden: tuple[int, ...] = (256, 256)
    log_std_min: float = -5.0
    log_std_max: float = 2.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ValueError("need 1 <= batch_size <= buffer_size")


def mlp(sizes: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class Actor(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden: Sequence[int],
                 log_std_min: float = -5.0, log_std_max: float = 2.0):
        super().__init__()
        self.trunk = mlp([obs_dim, *hidden])
        self.trunk.append(nn.ReLU())
        self.mean = nn.Linear(hidden[-1], act_dim)
        self.log_std = nn.Linear(hidden[-1], act_dim)
        self.log_std_min, self.log_std_max = log_std_min, log_std_max

    def forward(self, obs):
        h = self.trunk(obs)
        log_std = torch.tanh(self.log_std(h))
        log_std = self.log_std_min + 0.5 * (self.log_std_max - self.log_std_min) * (log_std + 1)
        return self.mean(h), log_std

    def sample(self, obs, noise=None, generator=None):
        """Reparameterised squashed sample; returns (action, log_prob, tanh(mean))."""
        mean, log_std = self(obs)
        if not (torch.isfinite(mean).all() and torch.isfinite(log_std).all()):
            raise FloatingPointError(f"non-finite policy output for obs {obs.detach().cpu().numpy()}")
        std = log_std.exp()
        if noise is None:
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        pre = mean + std * noise
        action = torch.tanh(pre)
        log_prob = (-0.5 * noise.pow(2) - log_std - 0.5 * math.log(2 * math.pi)).sum(-1)
        # log|d tanh/dx| = 2 (log 2 - x - softplus(-2x)), exact and stable
        log_prob = log_prob - (2 * (math.log(2) - pre - F.softplus(-2 * pre))).sum(-1)
        return action, log_prob, torch.tanh(mean)


class Critic(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden: Sequence[int]):
        super().__init__()
        self.net = mlp([obs_dim + act_dim, *hidden, 1])

    def forward(self, obs, act):
        return self.net(torch.cat([obs, act], dim=-1)).squeeze(-1)


class ReplayBuffer:
    """Fixed-capacity ring buffer of (s, a, r, s', done) with uniform sampling."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.act = np.zeros((capacity, act_dim), dtype=np.float32)
        self.rew = np.zeros(capacity, dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, act, rew, next_obs, done) -> None:
        i = self.cursor
        self.obs[i], self.act[i], self.rew[i] = obs, act, rew
        self.next_obs[i], self.done[i] = next_obs, float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "next_obs": self.next_obs[idx], "done": self.done[idx]}

    def ordered(self) -> dict[str, np.ndarray]:
        """Contents oldest-first."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = np.roll(np.arange(self.capacity), -self.cursor)
        return {"obs": self.obs[order], "act": self.act[order], "rew": self.rew[order],
                "next_obs": self.next_obs[order], "done": self.done[order]}

    def state_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("obs", "act", "rew", "next_obs", "done", "cursor", "size")}

    def load_state_dict(self, state: dict) -> None:
        for k, v in state.items():
            setattr(self, k, v)


def polyak_update(target: nn.Module, source: nn.Module, tau: float) -> None:
    with torch.no_grad():
        for tp, sp in zip(target.parameters(), source.parameters()):
            if tau == 1.0:
                tp.copy_(sp)
            elif tau != 0.0:
                tp.mul_(1.0 - tau).add_(sp, alpha=tau)


class SACAgent:
    def __init__(self, obs_dim: int, act_dim: int, cfg: SACConfig = SACConfig(), seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        self.obs_dim, self.act_dim, self.cfg, self.dtype = obs_dim, act_dim, cfg, dtype
        seq = np.random.SeedSequence(seed)
        init_seed, noise_seed = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(init_seed)
            self.actor = Actor(obs_dim, act_dim, cfg.hidden, cfg.log_std_min, cfg.log_std_max).to(dtype)
            self.q1 = Critic(obs_dim, act_dim, cfg.hidden).to(dtype)
            self.q2 = Critic(obs_dim, act_dim, cfg.hidden).to(dtype)
        self.q1_target = Critic(obs_dim, act_dim, cfg.hidden).to(dtype)
        self.q2_target = Critic(obs_dim, act_dim, cfg.hidden).to(dtype)
        polyak_update(self.q1_target, self.q1, 1.0)
        polyak_update(self.q2_target, self.q2, 1.0)
        self.log_alpha = torch.zeros(1, dtype=dtype, requires_grad=True)
        self.target_entropy = -float(act_dim) if cfg.target_entropy is None else cfg.target_entropy
        self.q_opt = torch.optim.Adam(list(self.q1.parameters()) + list(self.q2.parameters()), lr=cfg.lr)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=cfg.lr)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=cfg.lr)
        self.generator = torch.Generator().manual_seed(noise_seed)
        self.n_updates = 0

    @property
    def alpha(self) -> float:
        return float(self.log_alpha.exp().item())

    def _tensor(self, x):
        return torch.as_tensor(np.asarray(x), dtype=self.dtype)

    def policy_sample(self, obs, deterministic: bool = False):
        """Action in [-1, 1]^d and its log-probability for a single observation."""
        with torch.no_grad():
            o = self._tensor(obs).reshape(1, -1)
            action, log_prob, mean_action = self.actor.sample(o, generator=self.generator)
        if deterministic:
            return mean_action[0].numpy().astype(float), float("nan")
        return action[0].numpy().astype(float), float(log_prob[0])

    def act(self, obs, deterministic: bool = False) -> np.ndarray:
        return self.policy_sample(obs, deterministic)[0]

    # losses take explicit noise so they can be checked against finite differences
    def critic_target(self, batch, next_noise=None):
        with torch.no_grad():
            next_obs = self._tensor(batch["next_obs"])
            a2, logp2, _ = self.actor.sample(next_obs, noise=next_noise, generator=self.generator)
            q_next = torch.min(self.q1_target(next_obs, a2), self.q2_target(next_obs, a2))
            soft = q_next - self.log_alpha.exp() * logp2
            return self._tensor(batch["rew"]) + self.cfg.gamma * (1 - self._tensor(batch["done"])) * soft

    def critic_losses(self, batch, target):
        obs, act = self._tensor(batch["obs"]), self._tensor(batch["act"])
        return F.mse_loss(self.q1(obs, act), target), F.mse_loss(self.q2(obs, act), target)

    def actor_loss(self, obs, noise=None):
        obs = self._tensor(obs)
        action, logp, _ = self.actor.sample(obs, noise=noise, generator=self.generator)
        q = torch.min(self.q1(obs, action), self.q2(obs, action))
        return (self.log_alpha.exp().detach() * logp - q).mean(), logp.detach()

    def alpha_loss(self, logp):
        return -(self.log_alpha.exp() * (logp + self.target_entropy)).mean()

    def update_critic(self, batch) -> tuple[float, float]:
        target = self.critic_target(batch)
        l1, l2 = self.critic_losses(batch, target)
        self.q_opt.zero_grad()
        (l1 + l2).backward()
        self.q_opt.step()
        return float(l1.detach()), float(l2.detach())

    def update(self, batch) -> dict[str, float]:
        l1, l2 = self.update_critic(batch)
        a_loss, logp = self.actor_loss(batch["obs"])
        self.actor_opt.zero_grad()
        a_loss.backward()
        self.actor_opt.step()
        al_loss = self.alpha_loss(logp)
        self.alpha_opt.zero_grad()
        al_loss.backward()
        self.alpha_opt.step()
        polyak_update(self.q1_target, self.q1, self.cfg.tau)
        polyak_update(self.q2_target, self.q2, self.cfg.tau)
        self.n_updates += 1
        losses = {"q1": l1, "q2": l2, "actor": float(a_loss.detach()), "alpha": float(al_loss.detach())}
        if not all(math.isfinite(v) for v in losses.values()):
            raise TrainingDivergedError(f"non-finite losses {losses} at update {self.n_updates}")
        return losses

    def state_dict(self) -> dict:
        return {
            "actor": self.actor.state_dict(), "q1": self.q1.state_dict(), "q2": self.q2.state_dict(),
            "q1_target": self.q1_target.state_dict(), "q2_target": self.q2_target.state_dict(),
            "log_alpha": self.log_alpha.detach().clone(),
            "q_opt": self.q_opt.state_dict(), "actor_opt": self.actor_opt.state_dict(),
            "alpha_opt": self.alpha_opt.state_dict(),
            "generator": self.generator.get_state(), "n_updates": self.n_updates,
        }

    def load_state_dict(self, state: dict) -> None:
        for name in ("actor", "q1", "q2", "q1_target", "q2_target"):
            getattr(self, name).load_state_dict(state[name])
        with torch.no_grad():
            self.log_alpha.copy_(state["log_alpha"])
        self.q_opt.load_state_dict(state["q_opt"])
        self.actor_opt.load_state_dict(state["actor_opt"])
        self.alpha_opt.load_state_dict(state["alpha_opt"])
        self.generator.set_state(state["generator"])
        self.n_updates = state["n_updates"]


class SafetyWindow:
    """Rolling window of executed yaw vectors for the large-yaw metric."""

    def __init__(self, n_turbines: int, length: int = 1000, threshold: float = 30.0):
        self.n_turbines = n_turbines
        self.length = length
        self.threshold = threshold
        self._buf = np.zeros((length, n_turbines))
        self._count = 0

    def __len__(self):
        return min(self._count, self.length)

    def push(self, yaws) -> None:
        self._buf[self._count % self.length] = yaws
        self._count += 1

    def extend(self, rows) -> None:
        for r in rows:
            self.push(r)

    def values(self) -> np.ndarray:
        return self._buf[: len(self)]


def v30(window: SafetyWindow) -> float:
    """Percentage of turbine-steps in the window with |yaw| above the threshold."""
    vals = window.values() if isinstance(window, SafetyWindow) else np.asarray(window, float)
    if vals.size == 0:
        raise ValueError("empty safety window")
    thr = window.threshold if isinstance(window, SafetyWindow) else 30.0
    return 100.0 * float(np.count_nonzero(np.abs(vals) > thr)) / vals.size


@dataclass
class TrainResult:
    agent: SACAgent
    curve: list[dict] = field(default_factory=list)
    steps: int = 0
    wall_time: float = 0.0


def save_checkpoint(path, agent: SACAgent, buffer: ReplayBuffer, step: int, curve: list[dict],
                    rng_state: dict) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
        "obs_dim": agent.obs_dim, "act_dim": agent.act_dim, "hidden": list(agent.cfg.hidden),
        "config": asdict(agent.cfg), "step": step, "curve": curve, "agent": agent.state_dict(),
        "buffer": buffer.state_dict(), "rng": rng_state,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> dict:
    payload = torch.load(Path(path), weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def load_agent(path) -> SACAgent:
    payload = load_checkpoint(path)
    cfg_dict = dict(payload["config"])
    cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
    agent = SACAgent(payload["obs_dim"], payload["act_dim"], SACConfig(**cfg_dict))
    agent.load_state_dict(payload["agent"])
    return agent


CURVE_FIELDS = ["step", "eval_mean_power", "eval_mean_reward", "v30"]


def write_curve(path, curve: list[dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_FIELDS)
        for row in curve:
            w.writerow([row["step"]] + [f"{row.get(k, float('nan')):.9g}" for k in CURVE_FIELDS[1:]])
    return path


def train(make_task: Callable[[int], object], cfg: SACConfig = SACConfig(), *,
          total_steps: int, n_envs: int = 1, eval_every: int | None = None,
          evaluate: Callable[[SACAgent, int], dict] | None = None, seed: int = 0,
          checkpoint_dir=None, resume_from=None, n_turbines: int | None = None) -> TrainResult:
    """Collect ``total_steps`` transitions across ``n_envs`` tasks, updating after warmup.

    Tasks are stepped round-robin. ``evaluate(agent, step)`` runs every
    ``eval_every`` transitions and its dict is appended to the curve together
    with the rolling large-yaw percentage of the training rollouts (``v30``).
    """
    if total_steps < cfg.warmup_steps:
        raise ValueError("total_steps must be at least warmup_steps")
    start = time.perf_counter()
    root = np.random.SeedSequence(seed)
    env_seq, agent_seq, replay_seq, explore_seq = root.spawn(4)
    tasks = [make_task(i) for i in range(n_envs)]
    obs_dim, act_dim = tasks[0].obs_dim, tasks[0].act_dim
    agent = SACAgent(obs_dim, act_dim, cfg, seed=int(agent_seq.generate_state(1)[0]))
    buffer = ReplayBuffer(obs_dim, act_dim, cfg.buffer_size)
    replay_rng = np.random.default_rng(replay_seq)
    explore_rng = np.random.default_rng(explore_seq)
    env_seeds = [int(s) for s in env_seq.generate_state(n_envs)]
    step, curve = 0, []

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        agent.load_state_dict(payload["agent"])
        buffer.load_state_dict(payload["buffer"])
        step, curve = payload["step"], list(payload["curve"])
        replay_rng.bit_generator.state = payload["rng"]["replay"]
        explore_rng.bit_generator.state = payload["rng"]["explore"]
        env_seeds = [s + step for s in env_seeds]

    obs = [t.reset(seed=s) for t, s in zip(tasks, env_seeds)]
    n_t = n_turbines if n_turbines is not None else getattr(tasks[0], "n_turbines", 1)
    windows = [SafetyWindow(n_t) for _ in tasks]
    ckpt_path = Path(checkpoint_dir) / "checkpoint.pt" if checkpoint_dir is not None else None

    def rng_state():
        return {"replay": replay_rng.bit_generator.state, "explore": explore_rng.bit_generator.state}

    def record():
        row = {"step": step}
        if evaluate is not None:
            row.update(evaluate(agent, step))
        filled = [w for w in windows if len(w)]
        row["v30"] = float(np.mean([v30(w) for w in filled])) if filled else 0.0
        curve.append(row)
        log.info("step %d: %s", step, {k: v for k, v in row.items() if not isinstance(v, (list, dict))})
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, agent, buffer, step, curve, rng_state())

    try:
        while step < total_steps:
            for i, task in enumerate(tasks):
                if step >= total_steps:
                    break
                if step < cfg.warmup_steps:
                    action = explore_rng.uniform(-1.0, 1.0, act_dim)
                else:
                    action = agent.act(obs[i])
                next_obs, reward, done, info = task.step(action)
                terminal = done and not info.get("truncated", False)
                buffer.add(obs[i], action, reward, next_obs, terminal)
                if "yaws" in info:
                    windows[i].extend(info["yaws"])
                obs[i] = task.reset() if done else next_obs
                step += 1
                if step > cfg.warmup_steps and len(buffer) >= cfg.batch_size:
                    for _ in range(cfg.updates_per_step):
                        agent.update(buffer.sample(cfg.batch_size, replay_rng))
                if eval_every and step % eval_every == 0:
                    record()
    except TrainingDivergedError:
        if ckpt_path is not None:
            dump = ckpt_path.with_name("diverged.pt")
            save_checkpoint(dump, agent, buffer, step, curve, rng_state())
            log.error("training diverged; state dumped to %s", dump)
        raise
    if not curve or curve[-1]["step"] != step:
        if eval_every:
            record()
    return TrainResult(agent=agent, curve=curve, steps=step, wall_time=time.perf_counter() - start)


class ContinuousBandit:
    """One-step task with reward ``1 - (a - optimum)^2``; a sanity check for the learner."""

    obs_dim = 1
    act_dim = 1
    n_turbines = 1

    def __init__(self, optimum: float = 0.4):
        self.optimum = optimum

    def reset(self, seed=None):
        return np.ones(1)

    def step(self, action):
        a = float(np.asarray(action).reshape(-1)[0])
        return np.ones(1), 1.0 - (a - self.optimum) ** 2, True, {"truncated": False}
