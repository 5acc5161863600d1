import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from wakesteer.sac import (ContinuousBandit, ReplayBuffer, SACAgent, SACConfig, SafetyWindow,
                           TrainingDivergedError, load_agent, load_checkpoint, polyak_update, train, v30)

SMALL = SACConfig(hidden=(32, 32), batch_size=32, warmup_steps=100, buffer_size=10_000)


def const_batch(n, obs_dim, act_dim, rew=0.0, done=1.0, seed=0):
    rng = np.random.default_rng(seed)
    return {"obs": rng.uniform(-1, 1, (n, obs_dim)).astype(np.float32),
            "act": rng.uniform(-1, 1, (n, act_dim)).astype(np.float32),
            "rew": np.full(n, rew, np.float32),
            "next_obs": rng.uniform(-1, 1, (n, obs_dim)).astype(np.float32),
            "done": np.full(n, done, np.float32)}


def test_actions_bounded_and_reproducible():
    a, b = SACAgent(4, 2, SMALL, seed=3), SACAgent(4, 2, SMALL, seed=3)
    for obs in np.random.default_rng(0).normal(0, 5, (20, 4)):
        xa, la = a.policy_sample(obs)
        xb, lb = b.policy_sample(obs)
        assert np.all(np.abs(xa) <= 1.0)
        np.testing.assert_array_equal(xa, xb)
        assert la == lb
    det = a.act(np.zeros(4), deterministic=True)
    np.testing.assert_array_equal(det, a.act(np.zeros(4), deterministic=True))


def test_log_std_clamp_keeps_log_prob_finite():
    agent = SACAgent(2, 1, SMALL)
    with torch.no_grad():
        agent.actor.log_std.bias.fill_(-1e3)
        _, log_std = agent.actor(torch.zeros(1, 2))
        assert float(log_std) == pytest.approx(-5.0)
        agent.actor.log_std.bias.fill_(1e3)
        _, log_std = agent.actor(torch.zeros(1, 2))
        assert float(log_std) == pytest.approx(2.0)
    _, logp = agent.policy_sample(np.zeros(2))
    assert math.isfinite(logp)


def test_non_finite_policy_output_raises():
    agent = SACAgent(2, 1, SMALL)
    with torch.no_grad():
        agent.actor.mean.bias.fill_(float("nan"))
    with pytest.raises(FloatingPointError, match="non-finite"):
        agent.policy_sample(np.zeros(2))


def test_terminal_target_is_reward():
    agent = SACAgent(3, 2, SMALL)
    y = agent.critic_target(const_batch(16, 3, 2, rew=0.0, done=1.0))
    assert torch.equal(y, torch.zeros(16))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_overfit_one_batch(seed):
    agent = SACAgent(3, 2, SACConfig(hidden=(64, 64), warmup_steps=0), seed=seed)
    batch = const_batch(256, 3, 2, rew=0.7, done=1.0, seed=seed)
    losses = [sum(agent.update(batch)[k] for k in ("q1", "q2")) for _ in range(51)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_overfit_one_batch_default_width():
    # Adam momentum overshoots once early at this width, so only the overall drop is checked
    agent = SACAgent(3, 2, SACConfig(warmup_steps=0), seed=1)
    batch = const_batch(256, 3, 2, rew=0.7, done=1.0)
    losses = [sum(agent.update(batch)[k] for k in ("q1", "q2")) for _ in range(51)]
    assert losses[-1] < 0.05 * losses[0]


def _params(module):
    return [p for p in module.parameters()]


def _fd_check(loss_fn, params, h=1e-6):
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.data.view(-1), g.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            up = loss_fn().item()
            flat[i] = old - h
            down = loss_fn().item()
            flat[i] = old
            fd = (up - down) / (2 * h)
            scale = max(abs(fd), abs(gflat[i].item()), 1e-8)
            worst = max(worst, abs(fd - gflat[i].item()) / scale)
    return worst


def test_gradients_match_central_differences():
    cfg = SACConfig(hidden=(2,), batch_size=8)
    agent = SACAgent(1, 1, cfg, seed=4, dtype=torch.float64)
    n_actor = sum(p.numel() for p in agent.actor.parameters())
    n_critic = sum(p.numel() for p in agent.q1.parameters())
    assert n_actor == 10 and n_critic == 9
    batch = const_batch(8, 1, 1, rew=0.3, done=0.0, seed=2)
    g = torch.Generator().manual_seed(0)
    next_noise = torch.randn(8, 1, generator=g, dtype=torch.float64)
    noise = torch.randn(8, 1, generator=g, dtype=torch.float64)
    target = agent.critic_target(batch, next_noise=next_noise)

    assert _fd_check(lambda: agent.critic_losses(batch, target)[0], _params(agent.q1)) < 1e-4
    assert _fd_check(lambda: agent.actor_loss(batch["obs"], noise)[0], _params(agent.actor)) < 1e-4
    logp = agent.actor_loss(batch["obs"], noise)[1]
    assert _fd_check(lambda: agent.alpha_loss(logp), [agent.log_alpha]) < 1e-4


def test_squashed_density_integrates_to_one():
    agent = SACAgent(1, 1, SMALL, seed=0, dtype=torch.float64)
    obs = torch.zeros(1000, 1, dtype=torch.float64)
    with torch.no_grad():
        mean, log_std = agent.actor(obs[:1])
    a = np.linspace(-1, 1, 400_001)[1:-1]
    pre = torch.as_tensor(np.arctanh(a))
    noise = ((pre - mean[0, 0]) / log_std[0, 0].exp()).reshape(-1, 1)
    with torch.no_grad():
        _, logp, _ = agent.actor.sample(torch.zeros(len(a), 1, dtype=torch.float64), noise=noise)
    assert np.trapezoid(np.exp(logp.numpy()), a) == pytest.approx(1.0, abs=1e-3)


def test_replay_buffer_keeps_last_capacity():
    buf = ReplayBuffer(1, 1, capacity=5)
    for k in range(8):
        buf.add([k], [0.0], float(k), [k + 1], False)
    assert len(buf) == 5
    np.testing.assert_array_equal(buf.ordered()["rew"], [3, 4, 5, 6, 7])


@given(st.integers(1, 20), st.integers(1, 8))
def test_replay_samples_filled_region(n, cap):
    buf = ReplayBuffer(1, 1, capacity=cap)
    for k in range(n):
        buf.add([k], [0.0], float(k + 1), [k], False)
    sample = buf.sample(64, np.random.default_rng(n))
    assert np.all(sample["rew"] >= max(1, n - cap + 1))


def test_polyak_extremes():
    agent = SACAgent(2, 1, SMALL, seed=0)
    other = SACAgent(2, 1, SMALL, seed=9)
    before = [p.clone() for p in agent.q1_target.parameters()]
    polyak_update(agent.q1_target, other.q1, 0.0)
    assert all(torch.equal(a, b) for a, b in zip(before, agent.q1_target.parameters()))
    polyak_update(agent.q1_target, other.q1, 1.0)
    assert all(torch.equal(a, b) for a, b in zip(other.q1.parameters(), agent.q1_target.parameters()))


def test_alpha_stays_positive():
    agent = SACAgent(2, 1, SMALL)
    batch = const_batch(32, 2, 1, done=0.0)
    for _ in range(20):
        agent.update(batch)
        assert agent.alpha > 0


def test_warmup_only_run_never_updates():
    res = train(lambda i: ContinuousBandit(), SMALL, total_steps=SMALL.warmup_steps, seed=0)
    assert res.agent.n_updates == 0 and res.steps == SMALL.warmup_steps


def test_warmup_actions_are_uniform(tmp_path):
    cfg = SACConfig(hidden=(8,), batch_size=8, warmup_steps=2000, buffer_size=4000)
    train(lambda i: ContinuousBandit(), cfg, total_steps=2000, eval_every=2000, seed=1,
          checkpoint_dir=tmp_path)
    acts = load_checkpoint(tmp_path / "checkpoint.pt")["buffer"]["act"][:2000, 0]
    hist, _ = np.histogram(acts, bins=4, range=(-1, 1))
    assert hist.min() > 400


def _bandit_eval(agent, step):
    a = agent.act(np.ones(1), deterministic=True)
    return {"eval_mean_reward": 1 - (a[0] - 0.4) ** 2, "eval_mean_power": 0.0}


def test_identical_seeds_identical_curves():
    kw = dict(total_steps=400, eval_every=100, seed=5, evaluate=_bandit_eval)
    a = train(lambda i: ContinuousBandit(), SMALL, **kw).curve
    b = train(lambda i: ContinuousBandit(), SMALL, **kw).curve
    assert a == b


def test_bandit_learns_quickly():
    res = train(lambda i: ContinuousBandit(), SACConfig(hidden=(64, 64), warmup_steps=500),
                total_steps=3000, eval_every=1000, evaluate=_bandit_eval, seed=0)
    assert res.curve[-1]["eval_mean_reward"] >= 0.95


def test_checkpoint_resume_continues(tmp_path):
    kw = dict(evaluate=_bandit_eval, eval_every=100, seed=2)
    train(lambda i: ContinuousBandit(), SMALL, total_steps=300, checkpoint_dir=tmp_path, **kw)
    payload = load_checkpoint(tmp_path / "checkpoint.pt")
    assert payload["step"] == 300 and payload["hidden"] == [32, 32]
    res = train(lambda i: ContinuousBandit(), SMALL, total_steps=500, checkpoint_dir=tmp_path,
                resume_from=tmp_path / "checkpoint.pt", **kw)
    assert [c["step"] for c in res.curve] == [100, 200, 300, 400, 500]
    agent = load_agent(tmp_path / "checkpoint.pt")
    np.testing.assert_array_equal(agent.act(np.ones(1), True), res.agent.act(np.ones(1), True))


def test_bad_checkpoint_rejected(tmp_path):
    torch.save({"format": "other"}, tmp_path / "x.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.pt")


def test_divergence_dumps_state(tmp_path):
    class Exploding(ContinuousBandit):
        def step(self, action):
            return np.ones(1), float("inf"), True, {}

    with pytest.raises(TrainingDivergedError):
        train(lambda i: Exploding(), SMALL, total_steps=200, eval_every=1000, checkpoint_dir=tmp_path)
    assert (tmp_path / "diverged.pt").exists()


def test_config_validation():
    with pytest.raises(ValueError):
        SACConfig(gamma=1.0)
    with pytest.raises(ValueError):
        SACConfig(batch_size=10, buffer_size=5)
    with pytest.raises(ValueError):
        train(lambda i: ContinuousBandit(), SMALL, total_steps=10)


def test_v30_examples():
    w = SafetyWindow(3)
    w.extend(np.full((1000, 3), 35.0))
    assert v30(w) == 100.0
    w = SafetyWindow(3)
    w.extend(np.zeros((1000, 3)))
    assert v30(w) == 0.0
    w = SafetyWindow(3)
    w.extend(np.tile([40.0, 0.0, 10.0], (1000, 1)))
    assert v30(w) == pytest.approx(100 / 3, abs=0.01)


def test_safety_window_length_and_sign_invariance():
    w, m = SafetyWindow(2), SafetyWindow(2)
    rows = np.random.default_rng(0).uniform(-45, 45, (1500, 2))
    w.extend(rows)
    m.extend(-rows)
    assert len(w) == 1000
    assert v30(w) == v30(m)
    assert v30(w) == pytest.approx(100 * np.mean(np.abs(rows[-1000:]) > 30))
    with pytest.raises(ValueError):
        v30(SafetyWindow(2))
