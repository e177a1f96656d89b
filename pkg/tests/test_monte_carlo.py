"""Sampling engine: standard errors, determinism, detection, baselines."""

import numpy as np
import pytest

from cfris import (PhaseConfig, centralized_instantaneous_se, component_oracle,
                   detection_sinr, empirical_moments, estimate_channel,
                   sample_realization, simulate_pilot_phase, sum_se, uplink_detect)
from cfris.geometry import ChannelRealization
from conftest import build_case, clustered_case


def run_moments(case, k, n, seed, workers=1):
    return empirical_moments(case["stats"], case["operator"], case["phase"],
                             case["assignment"], k, n, np.random.default_rng(seed),
                             n_workers=workers)


class TestEstimates:
    def test_standard_error_clt_scaling(self, small_case):
        small = run_moments(small_case, 0, 1000, 5)
        large = run_moments(small_case, 0, 4000, 6)
        ratio = small.mean_wkk.std_error / large.mean_wkk.std_error
        assert np.all(ratio > 2.0 * 0.8)
        assert np.all(ratio < 2.0 * 1.2)

    def test_fixed_seed_reproducible(self, small_case):
        a = run_moments(small_case, 0, 2000, 7)
        b = run_moments(small_case, 0, 2000, 7)
        assert np.array_equal(a.mean_wkk.value, b.mean_wkk.value)
        assert np.array_equal(a.second_moments[1].value, b.second_moments[1].value)

    def test_worker_count_deterministic(self, small_case):
        a = run_moments(small_case, 0, 3000, 8, workers=3)
        b = run_moments(small_case, 0, 3000, 8, workers=3)
        assert np.array_equal(a.mean_wkk.value, b.mean_wkk.value)

    def test_sample_count_consistency(self, small_case):
        small = run_moments(small_case, 0, 10000, 9)
        large = run_moments(small_case, 0, 100000, 10)
        band = 3.0 * np.hypot(small.mean_wkk.std_error, large.mean_wkk.std_error)
        assert np.all(np.abs(small.mean_wkk.value - large.mean_wkk.value) <= band)

    def test_minimum_samples(self, small_case):
        with pytest.raises(ValueError):
            run_moments(small_case, 0, 10, 0)

    def test_analytic_no_ris_single_user_mean(self):
        # cross-check of the oracle itself: E{w_kk} = N gamma^2/(gamma + noise)
        case = build_case(44, num_users=1, num_ris=0, tau_p=1)
        est = run_moments(case, 0, 100000, 11)
        gamma = case["stats"].gamma[:, 0]
        noise = case["sigma2"] / case["rho"]
        expect = 2 * gamma ** 2 / (gamma + noise)
        assert np.all(np.abs(est.mean_wkk.value - expect)
                      <= 3.0 * est.mean_wkk.std_error)


class TestComponentOracle:
    def test_all_zero_mask_exact_zero(self, small_case):
        est = component_oracle(small_case["stats"], small_case["phase"],
                               small_case["assignment"], small_case["rho"],
                               small_case["tau_p"], small_case["sigma2"],
                               mask={}, k=0, n_samples=2000,
                               rng=np.random.default_rng(1))
        assert np.all(est.mean_wkk.value == 0)
        assert np.all(est.mean_wkk.std_error == 0)
        assert np.all(est.second_moments[1].value == 0)


class TestUplinkDetection:
    def test_matched_filter_phase_alignment(self):
        case = build_case(41, num_users=1, tau_p=1, sigma2=0.0)
        real = sample_realization(case["stats"], case["phase"],
                                  np.random.default_rng(2), size=16)
        weights = np.ones((2, 1), dtype=complex)
        symbols = np.ones((16, 1), dtype=complex)
        xhat = uplink_detect(real, real.q, weights, symbols, case["rho"],
                             0.0, np.random.default_rng(3))
        ratio = xhat[:, 0] / symbols[:, 0]
        assert np.all(ratio.real > 0)
        assert np.all(np.abs(ratio.imag) <= 1e-12 * ratio.real)

    def test_zero_symbols_noise_mean(self, small_case):
        n = 4000
        real = sample_realization(small_case["stats"], small_case["phase"],
                                  np.random.default_rng(4), size=n)
        weights = np.ones((2, 2), dtype=complex)
        xhat = uplink_detect(real, real.q, weights, np.zeros((n, 2), dtype=complex),
                             small_case["rho"], small_case["sigma2"],
                             np.random.default_rng(5))
        se = xhat.std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(xhat.mean(axis=0)) <= 3.0 * se)

    def test_symbol_level_sinr_does_not_undershoot_bound(self):
        case = clustered_case(42)
        phase = PhaseConfig.uniform(2, 8, np.random.default_rng(6))
        report = sum_se(case["stats"], case["operator"], phase, case["rho"],
                        case["sigma2"], case["tau_p"], case["tau_c"])
        n = 20000
        rng = np.random.default_rng(7)
        real = sample_realization(case["stats"], phase, rng, size=n)
        y = simulate_pilot_phase(real, case["assignment"], case["rho"],
                                 case["tau_p"], case["sigma2"], rng)
        qhat = estimate_channel(case["operator"], y, case["stats"],
                                case["assignment"], phase)
        for k in range(2):
            empirical = detection_sinr(real, qhat, report.weights[k], k,
                                       case["rho"], case["sigma2"])
            # the closed form is a use-and-forget style lower bound
            assert empirical >= report.sinr[k] * (1.0 - 0.1)


class TestCentralizedBaseline:
    def test_single_user_reduction(self):
        case = build_case(43, num_users=1, tau_p=1)
        real = sample_realization(case["stats"], case["phase"],
                                  np.random.default_rng(8), size=32)
        se = centralized_instantaneous_se(real, case["rho"], case["sigma2"], 1, 200)
        power = np.einsum("sjkn,sjkn->s", real.q.conj(), real.q).real
        expect = (1 - 1 / 200) * np.log2(1 + case["rho"] * power / case["sigma2"])
        np.testing.assert_allclose(se[:, 0], expect, rtol=1e-10)

    def test_orthogonal_users_no_interference(self):
        q = np.zeros((1, 1, 2, 2), dtype=complex)
        q[0, 0, 0] = [1.0, 0.0]
        q[0, 0, 1] = [0.0, 2.0]
        real = ChannelRealization(q, *(np.zeros(0),) * 6)
        se = centralized_instantaneous_se(real, 1.0, 0.5, 4, 200)
        expect0 = (1 - 4 / 200) * np.log2(1 + 1.0 / 0.5)
        expect1 = (1 - 4 / 200) * np.log2(1 + 4.0 / 0.5)
        np.testing.assert_allclose(se[0, 0], [expect0, expect1][0])
        np.testing.assert_allclose(se[0, 1], expect1)
