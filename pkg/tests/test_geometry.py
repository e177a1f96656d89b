"""Channel synthesis: array responses, path loss, statistics, realizations."""

import numpy as np
import pytest

import cfris
from cfris import (AngleSet, InvalidArgumentError, PathLossModel, PhaseConfig,
                   SystemTopology, array_response, build_channel_statistics,
                   cascaded_los, path_loss, sample_realization)
from conftest import build_case


class TestArrayResponse:
    def test_single_element(self):
        np.testing.assert_allclose(array_response(1, (1, 1), 0.7, 1.1), [1.0 + 0j])

    def test_ula_broadside(self):
        np.testing.assert_allclose(array_response(4, None, 0.0, np.pi / 2, kind="ULA"),
                                   np.ones(4))

    def test_uspa_hand_evaluation(self):
        # 2x2 grid, half-wavelength spacing, azimuth = elevation = pi/2:
        # entries exp(j*pi*floor(n/2)) = [1, 1, -1, -1].
        got = array_response(4, (2, 2), np.pi / 2, np.pi / 2, 0.5)
        np.testing.assert_allclose(got, [1, 1, -1, -1], atol=1e-12)

    def test_unit_modulus_and_leading_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            az, el = rng.uniform(0, 2 * np.pi), rng.uniform(0, np.pi)
            vec = array_response(6, (2, 3), az, el, 0.5)
            np.testing.assert_allclose(np.abs(vec), 1.0, atol=1e-12)
            assert vec[0] == pytest.approx(1.0)

    def test_invalid_inputs(self):
        with pytest.raises(InvalidArgumentError):
            array_response(0, (1, 1), 0.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            array_response(6, (2, 2), 0.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            array_response(4, (2, 2), 0.0, 0.0, kind="circular")


class TestPathLoss:
    def test_reference_distance(self):
        assert path_loss(1.0, 4.0, 1e-3) == pytest.approx(1e-3)

    def test_inverse_square(self):
        assert path_loss(10.0, 2.0, 1e-3) == pytest.approx(1e-5)

    def test_zero_exponent(self):
        assert path_loss(10.0, 0.0, 1e-3) == pytest.approx(1e-3)

    def test_nonpositive_distance(self):
        with pytest.raises(InvalidArgumentError):
            path_loss(0.0, 2.0)


class TestChannelStatistics:
    def test_zero_rician_kills_los_terms(self):
        case = build_case(5, kappa=0.0, epsilon=0.0)
        stats = case["stats"]
        assert np.all(stats.eta1 == 0)
        assert np.all(stats.eta2 == 0)
        assert np.all(stats.eta3 == 0)
        expected = np.sqrt(stats.beta[:, :, None] * stats.alpha[:, None, :])
        np.testing.assert_allclose(stats.eta4, expected)

    def test_unit_factor_mixing(self):
        # beta = alpha = 1, kappa = epsilon = 10 gives eta1 = 10/11.
        case = build_case(6)
        stats = case["stats"]
        stats.beta = np.ones_like(stats.beta)
        stats.alpha = np.ones_like(stats.alpha)
        stats.__post_init__()
        np.testing.assert_allclose(stats.eta1, 10.0 / 11.0)

    def test_mixing_identities_machine_precision(self):
        stats = build_case(7, num_users=3)["stats"]
        beta = stats.beta[:, :, None]
        alpha = stats.alpha[:, None, :]
        kappa = stats.kappa[:, :, None]
        eps = stats.epsilon[:, None, :]
        zeta = beta * alpha / ((1 + kappa) * (1 + eps))
        np.testing.assert_allclose(stats.eta1 ** 2, zeta * kappa * eps, rtol=1e-14)
        np.testing.assert_allclose(stats.eta2 ** 2, zeta * kappa, rtol=1e-14)
        np.testing.assert_allclose(stats.eta3 ** 2, zeta * eps, rtol=1e-14)
        np.testing.assert_allclose(stats.eta4 ** 2, zeta, rtol=1e-14)
        np.testing.assert_allclose(stats.eta5 ** 2, stats.gamma, rtol=1e-14)

    def test_los_matrices_rank_one_unit_modulus(self):
        stats = build_case(8)["stats"]
        for r in range(stats.topology.num_ris):
            for j in range(stats.topology.num_aps):
                los = stats.los_ap_ris(r, j)
                assert np.linalg.matrix_rank(los) == 1
                np.testing.assert_allclose(np.abs(los), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.abs(stats.los_ris_user), 1.0, atol=1e-12)

    def test_negative_rician_rejected(self):
        case = build_case(9)
        topo = case["stats"].topology
        angles = AngleSet.draw(topo.num_ris, topo.num_aps, topo.num_users,
                               np.random.default_rng(0))
        with pytest.raises(InvalidArgumentError):
            build_channel_statistics(topo, PathLossModel(), -1.0, 10.0, angles)


class TestPhaseConfig:
    def test_unit_modulus_diagonal(self):
        phase = PhaseConfig.uniform(3, 5, np.random.default_rng(2))
        np.testing.assert_allclose(np.abs(phase.phases), 1.0, atol=1e-12)

    def test_wraps_into_principal_range(self):
        phase = PhaseConfig(np.array([[2 * np.pi, -np.pi / 2]]))
        np.testing.assert_allclose(phase.theta, [[0.0, 1.5 * np.pi]])


class TestRealizations:
    def test_decomposition_identity(self, small_case):
        real = sample_realization(small_case["stats"], small_case["phase"],
                                  np.random.default_rng(3), size=8)
        np.testing.assert_allclose(real.q, real.q_from_links(small_case["phase"]),
                                   rtol=1e-12, atol=1e-25)

    def test_determinism(self, small_case):
        a = sample_realization(small_case["stats"], small_case["phase"],
                               np.random.default_rng(11), size=4)
        b = sample_realization(small_case["stats"], small_case["phase"],
                               np.random.default_rng(11), size=4)
        assert np.array_equal(a.q, b.q)

    def test_pure_los_limit(self):
        case = build_case(10, kappa=1e9, epsilon=1e9)
        real = sample_realization(case["stats"], case["phase"],
                                  np.random.default_rng(4), size=200)
        var = np.var(real.h_ap_ris, axis=0).max(axis=(2, 3))
        assert np.all(var < 1e-6 * case["stats"].beta)

    def test_empirical_mean_matches_cascaded_los(self, small_case):
        n = 100000
        real = sample_realization(small_case["stats"], small_case["phase"],
                                  np.random.default_rng(5), size=n)
        mean = real.q.mean(axis=0)
        se = real.q.std(axis=0) / np.sqrt(n)
        expect = cascaded_los(small_case["stats"], small_case["phase"])
        assert np.all(np.abs(mean - expect) <= 3.0 * se + 1e-30)

    def test_empirical_covariance_matches_rank_one_plus_identity(self, small_case):
        stats, phase = small_case["stats"], small_case["phase"]
        n = 100000
        real = sample_realization(stats, phase, np.random.default_rng(6), size=n)
        centered = real.q - real.q.mean(axis=0)
        m_elem = stats.topology.elements_per_ris
        xi = m_elem * stats.eta2 ** 2
        mu = np.sum(m_elem * (stats.eta3 ** 2 + stats.eta4 ** 2), axis=0) + stats.eta5 ** 2
        for j in range(stats.topology.num_aps):
            for k in range(stats.topology.num_users):
                samples = centered[:, j, k, :]
                cov = samples.conj().T @ samples / n
                outer = np.einsum("r,rn,rm->nm", xi[:, j, k],
                                  stats.a_ap[:, j], stats.a_ap[:, j].conj())
                expect = outer + mu[j, k] * np.eye(stats.topology.antennas_per_ap)
                se = np.abs(samples[:, :, None] * samples.conj()[:, None, :]).std(axis=0) \
                    / np.sqrt(n)
                assert np.all(np.abs(cov - expect) <= 4.0 * se)

    def test_cascaded_los_trivial_cases(self):
        case = build_case(12, num_ris=0, elements=4, grid=(2, 2))
        got = cascaded_los(case["stats"], PhaseConfig.zeros(0, 4))
        assert np.all(got == 0)
        case = build_case(13, kappa=0.0)
        np.testing.assert_allclose(cascaded_los(case["stats"], case["phase"]), 0.0)


class TestTopologyValidation:
    def test_grid_mismatch_rejected(self):
        rng = np.random.default_rng(0)
        ap, ris, users = cfris.uniform_placements(1, 1, 1, rng)
        with pytest.raises(InvalidArgumentError):
            SystemTopology(1, 2, 1, 1, 6, ap, ris, users, ris_grid=(2, 2))

    def test_non_square_needs_explicit_grid(self):
        rng = np.random.default_rng(0)
        ap, ris, users = cfris.uniform_placements(1, 1, 1, rng)
        with pytest.raises(InvalidArgumentError):
            SystemTopology(1, 2, 1, 1, 30, ap, ris, users)
        topo = SystemTopology(1, 2, 1, 1, 30, ap, ris, users, ris_grid=(5, 6))
        assert topo.ris_grid == (5, 6)
