import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drumrl import env, oracle
from drumrl.env import DrumControlEnv, OracleBacking
from drumrl.rl import algos, buffer, trainer
from drumrl.rl import policy as pol
from drumrl.rl.config import EPOCH_TIMESTEPS, AlgoConfig

from gradcheck import numeric_grad, rel_error


def zero_policy(n=1):
    ac = pol.build_actor_critic(0)
    for p in ac.params:
        p[...] = 0
    return ac, np.zeros((n, env.OBS_DIM))


# -- distribution ----------------------------------------------------------------

def test_uniform_policy_log_prob_and_entropy():
    ac, obs = zero_policy(3)
    dist = pol.forward(ac, obs)
    assert dist.logits.shape == (3, 6, 181)
    actions = np.array([[0, 90, 180, 5, 6, 7]] * 3)
    np.testing.assert_allclose(dist.log_prob(actions), 6 * math.log(1 / 181), rtol=1e-12)
    np.testing.assert_allclose(dist.entropy(), 6 * math.log(181), rtol=1e-12)


def test_initial_policy_near_uniform():
    ac = pol.build_actor_critic(3)
    dist = pol.forward(ac, np.random.default_rng(0).uniform(size=(5, env.OBS_DIM)))
    assert dist.entropy().min() > 6 * math.log(181) - 0.01


def test_sampling_stays_in_range():
    rng = np.random.default_rng(0)
    ac, obs = zero_policy(500)
    acts = pol.sample_action(pol.forward(ac, obs), rng)
    assert acts.min() >= 0 and acts.max() <= 180
    assert acts.max() == 180 or (acts == 180).sum() == 0  # range is reachable, never exceeded
    ac.mlp.biases[-1][...] = -50.0
    ac.mlp.biases[-1].reshape(6, 181)[:, 180] = 50.0
    dist = pol.forward(ac, obs)
    np.testing.assert_array_equal(pol.sample_action(dist, rng), 180)
    np.testing.assert_array_equal(pol.greedy_action(dist), 180)


def test_sampling_frequencies():
    ac, obs = zero_policy(1)
    ac.mlp.biases[-1].reshape(6, 181)[0, :] = -np.inf
    ac.mlp.biases[-1].reshape(6, 181)[0, [10, 20]] = [0.0, math.log(3.0)]
    dist = pol.forward(ac, np.zeros((4000, env.OBS_DIM)))
    a = pol.sample_action(dist, np.random.default_rng(1))[:, 0]
    assert set(np.unique(a)) == {10, 20}
    assert (a == 20).mean() == pytest.approx(0.75, abs=0.03)


def test_greedy_ties_go_low():
    ac, obs = zero_policy()
    assert not pol.greedy_action(pol.forward(ac, obs)).any()


# -- returns and advantages ------------------------------------------------------

def random_buffer(rng, T=7, W=3, done_p=0.3):
    buf = buffer.RolloutBuffer.empty(T, W, 2, 1)
    buf.rewards[...] = rng.normal(size=(T, W))
    buf.values[...] = rng.normal(size=(T, W))
    buf.dones[...] = rng.random((T, W)) < done_p
    buf.last_values[...] = rng.normal(size=W)
    return buf


def brute_returns(buf, gamma):
    T, W = buf.rewards.shape
    out = np.zeros((T, W))
    for w in range(W):
        for t in range(T):
            g, disc = 0.0, 1.0
            for u in range(t, T):
                g += disc * buf.rewards[u, w]
                if buf.dones[u, w]:
                    break
                disc *= gamma
            else:
                g += disc * buf.last_values[w]
            out[t, w] = g
    return out


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_nstep_and_gae_one_match_brute_force(seed, gamma):
    rng = np.random.default_rng(seed)
    buf = random_buffer(rng)
    expected = brute_returns(buf, gamma)
    buffer.compute_returns_and_advantages(buf, gamma, mode="nstep")
    np.testing.assert_allclose(buf.returns, expected, atol=1e-10)
    np.testing.assert_allclose(buf.advantages, expected - buf.values, atol=1e-10)
    buffer.compute_returns_and_advantages(buf, gamma, 1.0, mode="gae")
    np.testing.assert_allclose(buf.advantages, expected - buf.values, atol=1e-10)


def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(2)
    buf = random_buffer(rng)
    buffer.compute_returns_and_advantages(buf, 0.9, 0.0)
    next_v = np.vstack([buf.values[1:], buf.last_values[None]])
    delta = buf.rewards + 0.9 * (~buf.dones) * next_v - buf.values
    np.testing.assert_allclose(buf.advantages, delta, atol=1e-12)


def test_gamma_zero_returns_rewards():
    buf = random_buffer(np.random.default_rng(3))
    buffer.compute_returns_and_advantages(buf, 0.0, mode="nstep")
    np.testing.assert_array_equal(buf.returns, buf.rewards)


def test_unknown_mode():
    with pytest.raises(ValueError):
        buffer.compute_returns_and_advantages(random_buffer(np.random.default_rng(0)), 0.9, mode="td")


# -- objectives ------------------------------------------------------------------

def test_ppo_clip_arithmetic():
    r = np.array([1.5, 1.5, 0.5, 0.5, 1.0])
    a = np.array([1.0, -1.0, 1.0, -1.0, 2.0])
    np.testing.assert_allclose(algos.ppo_surrogate(r, a, 0.2), [1.2, -1.5, 0.5, -0.8, 2.0])
    np.testing.assert_allclose(algos.ppo_surrogate(r, a, 0.4), [1.4, -1.5, 0.5, -0.6, 2.0])


def test_normalize():
    x = algos.normalize([1.0, 2.0, 3.0, 4.0])
    assert x.mean() == pytest.approx(0.0, abs=1e-12)
    assert x.std() == pytest.approx(1.0, abs=1e-6)
    assert algos.normalize([5.0])[0] == 0.0


@pytest.mark.parametrize("shared", [True, False])
@pytest.mark.parametrize("ppo", [False, True])
def test_objective_gradient_matches_finite_differences(shared, ppo):
    rng = np.random.default_rng(int(shared) * 2 + int(ppo))
    ac = pol.build_actor_critic(5, hidden_sizes=(4,), n_heads=2, n_choices=5,
                                head_gain=1.0, shared=shared)
    for p in ac.params:
        p += rng.normal(scale=0.1, size=p.shape)
    n = 8
    obs = rng.uniform(size=(n, env.OBS_DIM))
    actions = rng.integers(0, 5, size=(n, 2))
    adv = rng.normal(size=n)
    ret = rng.normal(size=n)
    kw = dict(c1=0.6, c2=0.05)
    if ppo:
        lp = pol.forward(ac, obs).log_prob(actions)
        kw.update(old_log_probs=lp + rng.normal(scale=0.3, size=n), clip_eps=0.2)
    res = algos.objective(ac, obs, actions, adv, ret, **kw)

    def f():
        return algos.objective(ac, obs, actions, adv, ret, with_grad=False, **kw).objective

    assert res.objective == pytest.approx(f(), abs=0)
    assert rel_error(res.grads, numeric_grad(f, ac.params)) <= 1e-6


def test_ppo_gradient_vanishes_when_all_clipped():
    ac = pol.build_actor_critic(1, hidden_sizes=(4,), n_heads=2, n_choices=5, head_gain=1.0)
    obs = np.random.default_rng(0).uniform(size=(4, env.OBS_DIM))
    actions = np.zeros((4, 2), dtype=int)
    lp = pol.forward(ac, obs).log_prob(actions)
    res = algos.objective(ac, obs, actions, np.ones(4), np.zeros(4), c1=0.0, c2=0.0,
                          old_log_probs=lp - 1.0, clip_eps=0.2)
    assert all(not g.any() for g in res.grads)
    assert res.clip_fraction == 1.0


# -- rollouts and training -------------------------------------------------------

def test_default_rollout_sizes():
    a2c = AlgoConfig.defaults("a2c")
    ppo = AlgoConfig.defaults("ppo")
    assert a2c.rollout_size == 4000 and ppo.rollout_size == 6000
    assert (a2c.c1, a2c.c2, a2c.learning_rate) == (0.5, 0.02, 7e-4)
    assert (ppo.c1, ppo.c2, ppo.clip_eps, ppo.learning_rate) == (0.75, 0.01, 0.4, 3e-4)
    assert a2c.max_grad_norm == ppo.max_grad_norm == 5.0
    assert ppo.total_timesteps // EPOCH_TIMESTEPS == 40
    with pytest.raises(ValueError):
        AlgoConfig.defaults("dqn")
    with pytest.raises(ValueError):
        AlgoConfig(gamma=1.5)


def test_config_round_trip_and_digest():
    cfg = AlgoConfig.defaults("ppo", n_workers=3)
    assert AlgoConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == AlgoConfig.from_dict(cfg.to_dict()).digest()
    assert cfg.digest() != AlgoConfig.defaults("ppo").digest()


def test_reward_normalizer_matches_running_return_std():
    rng = np.random.default_rng(0)
    norm = trainer.RewardNormalizer(3, gamma=0.9, clip=1e9)
    returns, history = np.zeros(3), []
    for t in range(60):
        r = rng.exponential(100.0, size=3)
        done = np.array([t % 3 == 2] * 3)
        out = norm(r, done)
        returns = returns * 0.9 + r
        history.append(returns.copy())
        np.testing.assert_allclose(out, r / np.sqrt(np.var(history) + 1e-8), rtol=1e-3)
        returns[done] = 0.0


def test_reward_normalizer_clips_and_preserves_sign():
    norm = trainer.RewardNormalizer(2, gamma=0.99, clip=2.0)
    for _ in range(20):
        norm(np.array([1.0, 1.0]), np.array([False, False]))
    out = norm(np.array([1e9, -1e9]), np.array([True, True]))
    np.testing.assert_array_equal(out, [2.0, -2.0])
    assert not norm.returns.any()


def make_venv(n=4, seed=0):
    seeds, _, _ = trainer.worker_seeds(seed, n)
    return trainer.VecEnv([DrumControlEnv(OracleBacking()) for _ in range(n)], seeds)


def test_rollout_episode_boundaries():
    venv = make_venv()
    ac = pol.build_actor_critic(0)
    buf = trainer.collect_rollouts(venv, ac, 9, np.random.default_rng(0))
    assert buf.obs.shape == (9, 4, env.OBS_DIM) and buf.actions.shape == (9, 4, 6)
    np.testing.assert_array_equal(buf.dones[:, 0], [False, False, True] * 3)
    # one-hot of the observation cycles YR0, YR2, YR4
    np.testing.assert_array_equal(buf.obs[:3, 0, :3], np.eye(3))
    assert venv.timesteps == 36 and len(venv.episodes) == 12
    assert buf.actions.max() <= 180


def test_epoch_logger_windows():
    log = trainer.EpochLogger(30)
    eps = [trainer.EpisodeRecord(t, float(t), 0.01, 1.1) for t in range(3, 121, 3)]
    rows = log.update(eps[:15], 45)
    assert [r["epoch"] for r in rows] == [1]
    assert rows[0]["reward_mean"] == pytest.approx(np.mean(range(3, 31, 3)))
    rows = log.update(eps, 120, final=True)
    assert [r["timesteps"] for r in log.rows] == [30, 60, 90, 120]


def test_epoch_logger_full_run_has_40_rows():
    log = trainer.EpochLogger()
    eps = [trainer.EpisodeRecord(t, 1.0, 0.0, 1.0) for t in range(60, 1_200_001, 60)]
    for t in range(6000, 1_200_001, 6000):
        log.update([e for e in eps if e.end_timestep <= t], t, final=t == 1_200_000)
    assert len(log.rows) == 40
    assert log.rows[-1]["timesteps"] == 1_200_000


TINY = dict(n_workers=4, n_steps=15, total_timesteps=600, minibatch_size=30, ppo_epochs=2,
            hidden_sizes=(16,))


@pytest.mark.parametrize("algo", ["a2c", "ppo"])
def test_training_is_deterministic(tmp_path, algo):
    cfg = AlgoConfig.defaults(algo, **TINY)
    runs = [trainer.train(cfg, lambda i: DrumControlEnv(OracleBacking()), seed=4,
                          out_dir=tmp_path / str(k)) for k in range(2)]
    for a, b in zip(runs[0].actor_critic.params, runs[1].actor_critic.params):
        np.testing.assert_array_equal(a, b)
    assert runs[0].rows == runs[1].rows
    assert len(runs[0].update_stats) == 600 // 60
    logged = trainer.read_log(tmp_path / "0" / "train_log.csv")
    assert len(logged) == 1 and logged[0]["timesteps"] == 600
    ac, cfg_back, meta = trainer.load_checkpoint(tmp_path / "0" / "checkpoint")
    assert cfg_back == cfg and meta["seed"] == 4
    for a, b in zip(ac.params, runs[0].actor_critic.params):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("shared", [True, False])
def test_checkpoint_round_trip(tmp_path, shared):
    ac = pol.build_actor_critic(2, hidden_sizes=(8,), shared=shared)
    cfg = AlgoConfig.defaults("ppo", shared_trunk=shared)
    trainer.save_checkpoint(tmp_path / "ck", ac, cfg, {"config_hash": "abc"})
    back, cfg_back, meta = trainer.load_checkpoint(tmp_path / "ck")
    assert back.shared == shared and cfg_back == cfg and meta["config_hash"] == "abc"
    obs = np.random.default_rng(0).uniform(size=(3, env.OBS_DIM))
    a, b = pol.forward(ac, obs), pol.forward(back, obs)
    np.testing.assert_array_equal(a.logits, b.logits)
    np.testing.assert_array_equal(a.values, b.values)
    with pytest.raises(FileNotFoundError):
        trainer.load_checkpoint(tmp_path / "nope")


def test_evaluate_policy_report(tmp_path):
    ac = pol.build_actor_critic(0)
    rows = trainer.evaluate_policy(ac, DrumControlEnv(OracleBacking()), algo="ppo")
    assert [r["year"] for r in rows] == [0, 2, 4]
    for r in rows:
        cfg = tuple(r[f"theta{i}"] for i in range(1, 7))
        step = oracle.BurnupStep.parse(f"YR{r['year']}")
        assert r["keff"] == r["keff_oracle"] == oracle.evaluate(cfg, step, oracle.default_params()).k_eff
    path = tmp_path / "report.csv"
    trainer.write_report(path, rows, ["seed=0"])
    assert path.read_text().splitlines()[1].startswith("algo,year,theta1")
    assert trainer.read_report(path) == rows


def test_inference_latency_under_one_ms():
    assert trainer.inference_latency(pol.build_actor_critic(0), n=200) < 1e-3
