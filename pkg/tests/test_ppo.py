"""Returns, GAE, clipped objective, the update step, and the training loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qppo import hybrid as qh
from qppo import ppo
from qppo.envs import VectorEnv


def synthetic_single_episode(rewards, gamma):
    """Brute-force discounted returns for one fully terminated episode."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def assert_rows_equal(rows_a, rows_b):
    """Bit-equality of curve rows, ignoring wall-clock throughput and
    treating NaN (no finished episode yet) as equal to NaN."""
    assert len(rows_a) == len(rows_b)
    for a, b in zip(rows_a, rows_b):
        for key in a:
            if key == "steps_per_second":
                continue
            va, vb = a[key], b[key]
            if isinstance(va, float) and math.isnan(va):
                assert math.isnan(vb), key
            else:
                assert va == vb, key


def consistent_synthetic_case(rng, max_len=30):
    """Random rollout arrays with the bootstrap consistency a real buffer has:
    next_values[t] = values[t+1] on non-boundary steps, V(final) at
    truncations (and the buffer end), zero at terminations."""
    T = int(rng.integers(2, max_len))
    rewards = rng.normal(size=T)
    values = rng.normal(size=T)
    terminated = rng.random(T) < 0.15
    truncated = (rng.random(T) < 0.1) & ~terminated
    next_values = np.empty(T)
    next_values[:-1] = values[1:]
    next_values[-1] = rng.normal()
    boundary = truncated.copy()
    boundary[-1] = boundary[-1] or not terminated[-1]
    next_values[boundary] = rng.normal(size=int(boundary.sum()))
    next_values[terminated] = 0.0
    return rewards, values, next_values, terminated, truncated


class TestComputeReturns:
    def test_gamma_zero_returns_rewards(self):
        r = np.array([1.0, 2.0, 3.0])
        got = ppo.compute_returns(r, [False] * 3, [False] * 3, np.zeros(3), 0.0)
        np.testing.assert_array_equal(got, r)

    def test_hand_recursion_terminating_episode(self):
        r = np.array([1.0, 1.0, 1.0])
        got = ppo.compute_returns(r, [False, False, True], [False] * 3, np.zeros(3), 0.5)
        np.testing.assert_allclose(got, [1.75, 1.5, 1.0])

    def test_truncated_tail_bootstraps_value(self):
        r = np.array([2.0, 3.0])
        next_values = np.array([0.0, 7.0])
        got = ppo.compute_returns(r, [False, False], [False, True], next_values, 0.9)
        assert got[-1] == pytest.approx(3.0 + 0.9 * 7.0)
        assert got[0] == pytest.approx(2.0 + 0.9 * got[1])

    def test_buffer_end_bootstraps_value(self):
        r = np.array([1.0])
        got = ppo.compute_returns(r, [False], [False], np.array([10.0]), 0.5)
        assert got[0] == pytest.approx(6.0)

    def test_termination_blocks_bootstrap(self):
        r = np.array([1.0, 5.0])
        got = ppo.compute_returns(r, [True, False], [False, False], np.array([99.0, 0.0]), 0.9)
        assert got[0] == pytest.approx(1.0)

    def test_matches_per_episode_brute_force(self, rng):
        # several terminated episodes concatenated in one actor column
        lengths = [4, 7, 3]
        rewards = rng.normal(size=sum(lengths))
        terminated = np.zeros(sum(lengths), dtype=bool)
        idx = np.cumsum(lengths) - 1
        terminated[idx] = True
        got = ppo.compute_returns(rewards, terminated, np.zeros_like(terminated), np.zeros(len(rewards)), 0.93)
        start = 0
        for n in lengths:
            np.testing.assert_allclose(
                got[start : start + n], synthetic_single_episode(rewards[start : start + n], 0.93)
            )
            start += n


class TestComputeGae:
    def test_lambda_zero_collapses_to_delta(self, rng):
        T = 10
        rewards = rng.normal(size=T)
        values = rng.normal(size=T)
        next_values = rng.normal(size=T)
        adv = ppo.compute_gae(rewards, values, next_values, [False] * T, [False] * T, 0.97, 0.0)
        delta = rewards + 0.97 * next_values - values
        np.testing.assert_allclose(adv, delta, atol=1e-12)

    def test_lambda_one_telescopes_to_returns_minus_values(self, rng):
        for _ in range(50):
            rewards, values, next_values, terminated, truncated = consistent_synthetic_case(rng)
            adv = ppo.compute_gae(rewards, values, next_values, terminated, truncated, 0.99, 1.0)
            rets = ppo.compute_returns(rewards, terminated, truncated, next_values, 0.99)
            np.testing.assert_allclose(adv, rets - values, atol=1e-10)

    def test_three_step_sum_oracle(self):
        rewards = np.array([1.0, -0.5, 2.0])
        values = np.array([0.3, 0.1, -0.2])
        next_values = np.array([0.1, -0.2, 0.4])
        gamma, lam = 0.9, 0.7
        delta = rewards + gamma * next_values - values
        want = np.array(
            [
                delta[0] + gamma * lam * delta[1] + (gamma * lam) ** 2 * delta[2],
                delta[1] + gamma * lam * delta[2],
                delta[2],
            ]
        )
        got = ppo.compute_gae(rewards, values, next_values, [False] * 3, [False] * 3, gamma, lam)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_recursion_resets_across_boundaries(self):
        rewards = np.zeros(4)
        values = np.zeros(4)
        next_values = np.array([0.0, 0.0, 1.0, 1.0])
        terminated = np.array([False, True, False, False])
        adv = ppo.compute_gae(rewards, values, next_values, terminated, [False] * 4, 1.0, 1.0)
        # advantage at t=0 must not see the rewards after the terminal at t=1
        assert adv[0] == pytest.approx(0.0)

    def test_zero_rewards_zero_critic_gives_zero(self):
        adv = ppo.compute_gae(np.zeros(6), np.zeros(6), np.zeros(6), [False] * 6, [False] * 6, 0.99, 0.95)
        rets = ppo.compute_returns(np.zeros(6), [False] * 6, [False] * 6, np.zeros(6), 0.99)
        np.testing.assert_array_equal(adv, 0.0)
        np.testing.assert_array_equal(rets, 0.0)


class TestClippedObjective:
    @pytest.mark.parametrize(
        "ratio,adv,eps,want",
        [
            (1.0, 2.0, 0.2, 2.0),
            (1.5, 1.0, 0.2, 1.2),
            (0.5, -1.0, 0.2, -0.8),
            (0.9, 1.0, 0.2, 0.9),
            (2.0, -1.0, 0.2, -2.0),  # min keeps the unclipped, more negative branch
        ],
    )
    def test_truth_table(self, ratio, adv, eps, want):
        assert ppo.clipped_objective(ratio, adv, eps) == pytest.approx(want)

    @settings(max_examples=100, deadline=None)
    @given(
        ratio=st.floats(0.01, 5.0),
        adv=st.floats(-3.0, 3.0),
        eps=st.floats(0.05, 0.5),
    )
    def test_never_exceeds_unclipped_for_positive_adv(self, ratio, adv, eps):
        obj = float(ppo.clipped_objective(ratio, adv, eps))
        if adv > 0:
            assert obj <= ratio * adv + 1e-12
        if 1.0 - eps <= ratio <= 1.0 + eps:
            assert obj == pytest.approx(ratio * adv)


class TestNormalization:
    def test_moments_after_normalization(self, rng):
        for _ in range(20):
            adv = rng.normal(size=64) * rng.uniform(0.5, 10) + rng.uniform(-5, 5)
            out = ppo.normalize_advantages(adv)
            assert abs(out.mean()) <= 1e-8
            assert abs(out.std() - 1.0) <= 1e-6

    def test_constant_advantages_become_zero(self):
        out = ppo.normalize_advantages(np.full(8, 3.7))
        np.testing.assert_array_equal(out, 0.0)


class TestAdamAndClipping:
    def test_adam_minimizes_quadratic(self):
        p = {"x": np.array([5.0])}
        opt = ppo.Adam(p, lr=0.1)
        for _ in range(500):
            opt.step({"x": 2.0 * p["x"]})
        assert abs(p["x"][0]) < 1e-3

    def test_adam_state_round_trip(self):
        p = {"x": np.array([1.0, 2.0])}
        opt = ppo.Adam(p, lr=0.01)
        opt.step({"x": np.array([0.1, -0.2])})
        state = opt.state_dict()
        opt2 = ppo.Adam({"x": p["x"].copy()}, lr=0.01)
        opt2.load_state_dict(state)
        assert opt2.t == 1
        np.testing.assert_array_equal(opt2.m["x"], opt.m["x"])

    def test_gradient_norm_clipping(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        total = ppo.clip_gradients(grads, 0.5)
        assert total == pytest.approx(5.0)
        clipped = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        assert clipped == pytest.approx(0.5, rel=1e-6)

    def test_no_clip_below_threshold(self):
        grads = {"a": np.array([0.1])}
        ppo.clip_gradients(grads, 0.5)
        np.testing.assert_array_equal(grads["a"], [0.1])


def tiny_cartpole_setup(seed=0, scheme="ClassicalBaseline", n_actors=4, buffer=32):
    cfg = ppo.PpoConfig(
        max_steps=buffer * 4,
        buffer_size=buffer,
        minibatch_size=buffer,
        epochs=2,
        n_actors=n_actors,
        gamma=0.98,
        gae_lambda=0.9,
        actor_lr=1e-3,
        critic_lr=1e-3,
        scheme=scheme,
    )
    return ppo.Trainer("CartPole-v1", hybrid_cfg() if "Hybrid" in scheme or "Full" in scheme else None, cfg, seed)


def hybrid_cfg():
    return qh.HybridNetConfig(4, 1, 4, qh.Discrete(2), post_init=qh.Constant(0.1))


class TestCollect:
    def test_buffer_shape_matches_actor_split(self):
        trainer = tiny_cartpole_setup(buffer=32, n_actors=8)
        buf, _ = ppo.collect(
            trainer.actor, trainer.critic, trainer.venv, trainer.states,
            4, trainer.action_rng, trainer.bounds, trainer.tracker,
        )
        assert buf.states.shape == (4, 8, 4)
        assert buf.size == 32

    def test_fixed_seed_identical_buffers(self):
        a = tiny_cartpole_setup(seed=3)
        b = tiny_cartpole_setup(seed=3)
        buf_a, _ = ppo.collect(a.actor, a.critic, a.venv, a.states, 8, a.action_rng, a.bounds, a.tracker)
        buf_b, _ = ppo.collect(b.actor, b.critic, b.venv, b.states, 8, b.action_rng, b.bounds, b.tracker)
        np.testing.assert_array_equal(buf_a.states, buf_b.states)
        np.testing.assert_array_equal(buf_a.actions, buf_b.actions)
        np.testing.assert_array_equal(buf_a.log_probs, buf_b.log_probs)

    def test_recorded_logprobs_match_policy_recomputation(self):
        # with unchanged parameters the first-epoch ratios are exactly one
        trainer = tiny_cartpole_setup(seed=5, scheme="HybridQuantumActor")
        buf, _ = ppo.collect(
            trainer.actor, trainer.critic, trainer.venv, trainer.states,
            8, trainer.action_rng, trainer.bounds, trainer.tracker,
        )
        N = buf.size
        states = buf.states.reshape(N, -1)
        actions = buf.actions.reshape(N)
        out = trainer.actor.forward(states)
        recomputed = qh.log_prob(out, actions)
        np.testing.assert_array_equal(recomputed, buf.log_probs.reshape(N))


class TestUpdate:
    def _processed_buffer(self, trainer, steps=8):
        buf, states = ppo.collect(
            trainer.actor, trainer.critic, trainer.venv, trainer.states,
            steps, trainer.action_rng, trainer.bounds, trainer.tracker,
        )
        buf.process(trainer.critic, trainer.ppo_config.gamma, trainer.ppo_config.gae_lambda, states)
        return buf

    def test_update_returns_diagnostics(self):
        trainer = tiny_cartpole_setup()
        buf = self._processed_buffer(trainer)
        stats = ppo.ppo_update(
            trainer.actor, trainer.critic, buf, trainer.ppo_config,
            trainer.actor_opt, trainer.critic_opt, trainer.shuffle_rng, trainer.bounds,
        )
        for key in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac"):
            assert math.isfinite(stats[key])

    def test_unprocessed_buffer_rejected(self):
        trainer = tiny_cartpole_setup()
        buf, _ = ppo.collect(
            trainer.actor, trainer.critic, trainer.venv, trainer.states,
            8, trainer.action_rng, trainer.bounds, trainer.tracker,
        )
        with pytest.raises(ValueError):
            ppo.ppo_update(
                trainer.actor, trainer.critic, buf, trainer.ppo_config,
                trainer.actor_opt, trainer.critic_opt, trainer.shuffle_rng, trainer.bounds,
            )

    def test_nan_advantages_abort_with_diagnostics(self):
        trainer = tiny_cartpole_setup()
        buf = self._processed_buffer(trainer)
        buf.advantages[:] = math.nan
        with pytest.raises(ppo.TrainingAbort) as crash:
            ppo.ppo_update(
                trainer.actor, trainer.critic, buf, trainer.ppo_config,
                trainer.actor_opt, trainer.critic_opt, trainer.shuffle_rng, trainer.bounds,
            )
        assert "policy_loss" in crash.value.diagnostics

    def test_huge_epsilon_single_epoch_equals_vanilla_policy_gradient(self):
        trainer = tiny_cartpole_setup(scheme="HybridQuantumActor")
        cfg = trainer.ppo_config
        cfg.clip_eps = 1e9
        cfg.epochs = 1
        cfg.entropy_coef = 0.0
        cfg.value_coef = 0.0
        buf = self._processed_buffer(trainer)

        N = buf.size
        states = buf.states.reshape(N, -1)
        actions = buf.actions.reshape(N)
        adv = ppo.normalize_advantages(buf.advantages.reshape(N))

        # vanilla policy-gradient reference: d(-mean(adv * log pi))/d params
        out = trainer.actor.forward(states, cache=True)
        trainer.actor.zero_grad()
        trainer.actor.backward((-adv / N)[:, None] * qh.log_prob_grads(out, actions))
        want = {k: v.copy() for k, v in trainer.actor.gradients().items()}

        cfg.grad_norm_clip = 0.0  # disable clipping so raw gradients compare
        ppo.ppo_update(
            trainer.actor, trainer.critic, buf, cfg,
            trainer.actor_opt, trainer.critic_opt, trainer.shuffle_rng, trainer.bounds,
        )
        got = trainer.actor.gradients()
        for k in want:
            np.testing.assert_allclose(got[k], want[k], rtol=1e-8, atol=1e-12)

    def test_constant_advantages_give_zero_policy_gradient(self):
        trainer = tiny_cartpole_setup(scheme="HybridQuantumActor")
        cfg = trainer.ppo_config
        cfg.epochs = 1
        cfg.entropy_coef = 0.0
        cfg.value_coef = 0.0
        buf = self._processed_buffer(trainer)
        buf.advantages[:] = 4.2  # normalization maps constants to zero
        ppo.ppo_update(
            trainer.actor, trainer.critic, buf, cfg,
            trainer.actor_opt, trainer.critic_opt, trainer.shuffle_rng, trainer.bounds,
        )
        for g in trainer.actor.gradients().values():
            np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_minibatch_clamped_with_warning(self, caplog):
        import logging

        with caplog.at_level(logging.WARNING, logger="qppo.ppo"):
            cfg = ppo.PpoConfig(
                max_steps=64, buffer_size=8, minibatch_size=256, epochs=1, n_actors=1,
                gamma=0.99, gae_lambda=0.9, actor_lr=1e-3, critic_lr=1e-3,
            )
        assert cfg.minibatch_size == 8
        assert any("clamping" in r.message for r in caplog.records)


class TestTrainerLoop:
    def test_iteration_count_is_budget_over_buffer(self):
        trainer = tiny_cartpole_setup(buffer=32)  # max_steps = 4 * 32
        result = trainer.run()
        assert trainer.ppo_config.n_iterations == 4
        assert len(result.rows) == 4
        assert result.rows[-1]["env_steps"] == 128

    def test_curves_bit_reproducible(self):
        rows_a = tiny_cartpole_setup(seed=9, scheme="HybridQuantumActor").run().rows
        rows_b = tiny_cartpole_setup(seed=9, scheme="HybridQuantumActor").run().rows
        assert_rows_equal(rows_a, rows_b)

    def test_checkpoint_resume_bit_exact(self):
        straight = tiny_cartpole_setup(seed=4, scheme="HybridQuantumActor")
        rows_full = straight.run().rows

        part = tiny_cartpole_setup(seed=4, scheme="HybridQuantumActor")
        part.run(max_new_iterations=2)
        snapshot = part.state_dict()

        fresh = tiny_cartpole_setup(seed=4, scheme="HybridQuantumActor")
        fresh.load_state_dict(snapshot)
        rows_rest = fresh.run().rows
        assert_rows_equal(rows_rest, rows_full[2:])
        for k, v in fresh.actor.parameters().items():
            np.testing.assert_array_equal(v, straight.actor.parameters()[k])

    def test_buffer_actor_divisibility_enforced(self):
        cfg = ppo.PpoConfig(
            max_steps=64, buffer_size=10, minibatch_size=5, epochs=1, n_actors=4,
            gamma=0.99, gae_lambda=0.9, actor_lr=1e-3, critic_lr=1e-3,
        )
        with pytest.raises(ValueError):
            ppo.Trainer("CartPole-v1", None, cfg, 0)

    def test_value_target_gae_variant_runs(self):
        trainer = tiny_cartpole_setup()
        trainer.ppo_config.value_target = "gae"
        result = trainer.run()
        assert len(result.rows) == 4

    @pytest.mark.parametrize("scheme", ppo.SCHEMES)
    def test_all_schemes_step(self, scheme):
        cfg = ppo.PpoConfig(
            max_steps=32, buffer_size=16, minibatch_size=16, epochs=1, n_actors=4,
            gamma=0.98, gae_lambda=0.9, actor_lr=1e-3, critic_lr=1e-3, scheme=scheme,
        )
        net_cfg = hybrid_cfg() if scheme != "ClassicalBaseline" else None
        result = ppo.Trainer("CartPole-v1", net_cfg, cfg, 0).run()
        assert len(result.rows) == 2

    def test_continuous_env_training_steps(self):
        cfg = ppo.PpoConfig(
            max_steps=64, buffer_size=32, minibatch_size=16, epochs=2, n_actors=4,
            gamma=0.9, gae_lambda=0.95, actor_lr=1e-3, critic_lr=1e-3,
            scheme="HybridQuantumActor",
        )
        net_cfg = qh.HybridNetConfig(3, 2, 3, qh.ContinuousBeta(1), post_init=qh.Xavier())
        result = ppo.Trainer("Pendulum-v1", net_cfg, cfg, 0).run()
        assert len(result.rows) == 2
        assert all(math.isfinite(r["policy_loss"]) for r in result.rows)


def test_evaluate_policy_runs_and_reports():
    trainer = tiny_cartpole_setup(seed=1)
    stats = ppo.evaluate_policy(trainer.actor, "CartPole-v1", 10, seed=0, bounds=trainer.bounds)
    assert stats["episodes"] == 10
    assert stats["min_return"] <= stats["mean_return"] <= stats["max_return"]
    again = ppo.evaluate_policy(trainer.actor, "CartPole-v1", 10, seed=0, bounds=trainer.bounds)
    assert stats == again
