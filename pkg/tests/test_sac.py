"""SAC machinery: environment encoding, gradients, buffer, baselines."""

import numpy as np
import pytest

from cfris import PhaseConfig
from cfris.sac import (Adam, Mlp, ReplayBuffer, SacConfig, SacNetworks,
                       coordinate_ascent, policy_log_prob, policy_sample,
                       random_search, sac_losses, sac_train)
from conftest import build_case, clustered_case, make_env, toy_env


class FixedNoise:
    """Stands in for a Generator so losses are deterministic in FD checks."""

    def __init__(self, eps):
        self.eps = eps

    def standard_normal(self, shape):
        assert shape == self.eps.shape
        return self.eps


class TestEnvironment:
    def test_observation_lengths_reference_config(self):
        case = build_case(50, num_aps=3, antennas=4, num_users=4, num_ris=3,
                          elements=30, grid=(5, 6), tau_p=4)
        env = make_env(case)
        assert env.action_dim == 3 * 30
        assert env.obs_dim == 3 * 30 + 3 * 4 * 4 == 138
        obs = env.reset(np.random.default_rng(0))
        assert obs.shape == (138,)

    def test_no_panels_observation(self):
        case = build_case(51, num_ris=0, elements=4)
        env = make_env(case)
        assert env.obs_dim == 2 * 2 * 2
        assert env.action_dim == 0

    def test_reset_deterministic(self, small_case):
        env = make_env(small_case)
        a = env.reset(np.random.default_rng(3))
        b = make_env(small_case).reset(np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_action_phase_mapping(self, small_case):
        env = make_env(small_case)
        env.step(np.zeros(env.action_dim))
        np.testing.assert_allclose(env.phase.theta, np.pi)
        env.step(-np.ones(env.action_dim))
        np.testing.assert_allclose(env.phase.theta, 0.0)
        env.step(np.ones(env.action_dim))   # +1 maps to 2*pi, stored as 0
        np.testing.assert_allclose(env.phase.theta, 0.0)

    def test_reward_is_definitional(self, small_case):
        env = make_env(small_case)
        action = np.random.default_rng(4).uniform(-1, 1, env.action_dim)
        _, reward = env.step(action)
        assert reward == pytest.approx(env.evaluate(env.phase), rel=1e-12)

    def test_out_of_range_actions_clamped_and_counted(self, small_case):
        env = make_env(small_case)
        env.step(2.0 * np.ones(env.action_dim))
        assert env.clamp_count == 1
        np.testing.assert_allclose(env.phase.theta, 0.0)  # clamped to +1 -> 2pi -> 0

    def test_observation_tracks_phase_block(self, small_case):
        env = make_env(small_case)
        action = np.random.default_rng(5).uniform(-1, 1, env.action_dim)
        obs, _ = env.step(action)
        np.testing.assert_allclose(obs[:env.action_dim], env.phase.theta.ravel())


class TestPolicy:
    def test_vanishing_std_is_deterministic_tanh_mean(self):
        rng = np.random.default_rng(6)
        nets = SacNetworks.build(3, 2, (8,), rng)
        # push the log-std head far negative via its bias
        nets.policy.biases[-1][2:] = -50.0
        obs = rng.standard_normal((5, 3))
        mean, log_std, _, _ = __import__("cfris.sac", fromlist=["x"])._policy_stats(nets, obs)
        actions, _ = policy_sample(nets, obs, np.random.default_rng(7))
        np.testing.assert_allclose(actions, np.tanh(mean), atol=1e-6)
        assert np.all(log_std == -20.0)

    def test_log_prob_normalizes_on_one_dimension(self):
        rng = np.random.default_rng(8)
        nets = SacNetworks.build(2, 1, (8,), rng)
        obs = np.zeros((1, 2))
        grid = np.linspace(-1 + 1e-9, 1 - 1e-9, 400001)[:, None]
        logp = policy_log_prob(nets, np.repeat(obs, len(grid), axis=0), grid)
        total = np.trapezoid(np.exp(logp), grid[:, 0])
        assert total == pytest.approx(1.0, abs=2e-3)

    def test_entropy_positive_for_unit_std(self):
        # Quadrature over u for mean 0, std 1: entropy of tanh(u) is
        # 0.5*log(2*pi*e) + E[log(1 - tanh(u)^2)] > 0.
        u = np.linspace(-12, 12, 200001)
        pdf = np.exp(-0.5 * u ** 2) / np.sqrt(2 * np.pi)
        entropy = (0.5 * np.log(2 * np.pi * np.e)
                   + np.trapezoid(pdf * np.log(1 - np.tanh(u) ** 2 + 1e-300), u))
        assert entropy > 0
        # sampled -E[log pi] agrees with the quadrature value
        rng = np.random.default_rng(9)
        nets = SacNetworks.build(2, 1, (8,), rng)
        nets.policy.weights[-1][:] = 0.0
        nets.policy.biases[-1][:] = 0.0  # mean 0, log-std 0
        obs = np.zeros((200000, 2))
        _, logp = policy_sample(nets, obs, np.random.default_rng(10))
        assert -logp.mean() == pytest.approx(entropy, abs=0.02)


class TestLossesAndGradients:
    def make_setup(self, seed=11, obs_dim=3, act_dim=2, hidden=(4,), batch=4):
        rng = np.random.default_rng(seed)
        nets = SacNetworks.build(obs_dim, act_dim, hidden, rng)
        cfg = SacConfig(hidden_sizes=hidden, batch_size=batch, buffer_capacity=64)
        batch_data = (rng.standard_normal((batch, obs_dim)),
                      np.tanh(rng.standard_normal((batch, act_dim))),
                      rng.standard_normal(batch),
                      rng.standard_normal((batch, obs_dim)))
        eps = np.random.default_rng(seed + 1).standard_normal((batch, act_dim))
        return nets, cfg, batch_data, eps

    def test_gradients_match_finite_differences(self):
        nets, cfg, batch, eps = self.make_setup()
        _, grads = sac_losses(nets, batch, cfg, FixedNoise(eps))
        gen = np.random.default_rng(12)
        step = 1e-4
        for name, attr, idx in (("value", "value", 0), ("q1", "q1", 1),
                                ("q2", "q2", 2), ("policy", "policy", 3)):
            net = getattr(nets, attr)
            for _ in range(25):
                p = gen.integers(0, len(net.params))
                flat = gen.integers(0, net.params[p].size)
                orig = net.params[p].flat[flat]
                net.params[p].flat[flat] = orig + step
                up = sac_losses(nets, batch, cfg, FixedNoise(eps))[0][idx]
                net.params[p].flat[flat] = orig - step
                down = sac_losses(nets, batch, cfg, FixedNoise(eps))[0][idx]
                net.params[p].flat[flat] = orig
                fd = (up - down) / (2 * step)
                an = grads[name][p].flat[flat]
                assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-6)

    def test_zero_discount_target_reduces_to_scaled_reward(self):
        nets, cfg, batch, eps = self.make_setup(seed=13)
        cfg = SacConfig(hidden_sizes=(4,), batch_size=4, buffer_capacity=64,
                        discount=1e-12, reward_scale=2.0)
        obs, actions, rewards, _ = batch
        losses, _ = sac_losses(nets, batch, cfg, FixedNoise(eps))
        q1 = nets.q1(np.concatenate([obs, actions], axis=1))[:, 0]
        expect = 0.5 * np.mean((q1 - 2.0 * rewards) ** 2)
        assert losses[1] == pytest.approx(expect, rel=1e-6)

    def test_identical_twins_agree(self):
        nets, cfg, batch, eps = self.make_setup(seed=14)
        nets.q2.set_params([p.copy() for p in nets.q1.params])
        losses, grads = sac_losses(nets, batch, cfg, FixedNoise(eps))
        assert losses[1] == pytest.approx(losses[2], rel=1e-12)
        for g1, g2 in zip(grads["q1"], grads["q2"]):
            np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-12)


class TestUpdatesAndBuffer:
    def test_polyak_identity_exact(self):
        rng = np.random.default_rng(15)
        nets = SacNetworks.build(3, 2, (4,), rng)
        before = [p.copy() for p in nets.target_value.params]
        src = [p.copy() for p in nets.value.params]
        for p in nets.value.params:
            p += rng.standard_normal(p.shape)
        tau = 0.005
        nets.polyak_update(tau)
        for tgt, old, new in zip(nets.target_value.params, before, nets.value.params):
            np.testing.assert_array_equal(tgt, tau * new + (1 - tau) * old)

    def test_buffer_uniform_sampling(self):
        buffer = ReplayBuffer(1, 1, 100)
        for idx in range(100):
            buffer.store([idx], [0.0], 0.0, [0.0])
        rng = np.random.default_rng(16)
        counts = np.zeros(100)
        draws = 100000
        for _ in range(draws // 1000):
            obs, _, _, _ = buffer.sample(1000, rng)
            hist, _ = np.histogram(obs[:, 0], bins=np.arange(101) - 0.5)
            counts += hist
        expect = draws / 100
        sigma = np.sqrt(draws * (1 / 100) * (1 - 1 / 100))
        assert np.all(np.abs(counts - expect) <= 5 * sigma)

    def test_buffer_wraps(self):
        buffer = ReplayBuffer(1, 1, 4)
        for idx in range(6):
            buffer.store([idx], [0.0], 0.0, [0.0])
        assert buffer.size == 4
        assert sorted(buffer.obs[:, 0]) == [2, 3, 4, 5]

    def test_adam_moves_against_gradient(self):
        params = [np.array([1.0, -1.0])]
        opt = Adam(params, lr=0.1)
        opt.step(params, [np.array([1.0, -1.0])])
        assert params[0][0] < 1.0
        assert params[0][1] > -1.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SacConfig(batch_size=64, buffer_capacity=32)
        with pytest.raises(ValueError):
            SacConfig(discount=0.0)


class TestTrainingAndBaselines:
    def test_trace_covers_every_episode(self):
        env = toy_env()
        cfg = SacConfig(num_episodes=3, steps_per_episode=4, buffer_capacity=64,
                        batch_size=8)
        _, _, trace, _ = sac_train(env, cfg, np.random.default_rng(17))
        episodes = {int(row[0]) for row in trace.rows}
        assert episodes == {0, 1, 2}
        assert len(trace.rows) == 3 * 4

    def test_random_search_single_draw(self):
        env = toy_env()
        rng = np.random.default_rng(18)
        phase, best, rewards = random_search(env, 1, rng)
        assert rewards.shape == (1,)
        assert best == pytest.approx(env.evaluate(phase))

    def test_coordinate_ascent_monotone(self):
        env = make_env(build_case(52))
        _, best, history = coordinate_ascent(env, 2, 8, np.random.default_rng(19))
        assert np.all(np.diff(history) >= -1e-15)
        assert best == pytest.approx(history[-1])

    def test_sac_beats_mean_random_phase(self):
        env = make_env(clustered_case(53))
        rng = np.random.default_rng(20)
        _, _, rewards = random_search(env, 40, rng)
        cfg = SacConfig(num_episodes=12, steps_per_episode=20,
                        buffer_capacity=1000, batch_size=32)
        _, best, _, _ = sac_train(env, cfg, np.random.default_rng(21))
        assert best >= rewards.mean()

    def test_sac_matches_random_search_at_equal_budget(self):
        # probabilistic bar: wins on at least 4 of 5 seeds at 500 evaluations
        wins = 0
        for seed in range(5):
            env = make_env(clustered_case(30 + seed))
            _, rs_best, _ = random_search(env, 500, np.random.default_rng(40 + seed))
            cfg = SacConfig(num_episodes=20, steps_per_episode=25,
                            buffer_capacity=1000, batch_size=32)
            _, sac_best, _, _ = sac_train(env, cfg, np.random.default_rng(50 + seed))
            wins += sac_best >= rs_best
        assert wins >= 4
