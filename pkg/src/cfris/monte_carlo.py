"""Sampling ground truth for every closed-form quantity.

The oracle path never touches the closed-form expressions: it draws fading,
runs the pilot phase, forms the LMMSE estimates and averages the quantities
of interest, reporting element-wise standard errors so comparisons always
use confidence bands. The same engine drives the pilot-masked component
oracle, the symbol-level detection chain and the fully centralized
instantaneous-CSI baseline.
"""

from dataclasses import dataclass

import numpy as np

from .estimation import (LmmseOperator, PilotAssignment, estimate_channel,
                         lmmse_operator, simulate_pilot_phase)
from .geometry import ChannelStatistics, PhaseConfig, complex_normal, sample_realization


@dataclass
class McEstimate:
    """Sampled mean with element-wise standard errors."""

    value: np.ndarray
    std_error: np.ndarray
    n_samples: int

    def within(self, reference: np.ndarray, n_sigma: float = 3.0,
               floor: float = 0.0) -> bool:
        """True when |reference - value| <= n_sigma * SE element-wise."""
        return bool(np.all(np.abs(reference - self.value)
                           <= n_sigma * self.std_error + floor))


def _mc_stats(total, total_sq, n):
    mean = total / n
    var = np.maximum(total_sq / n - np.abs(mean) ** 2, 0.0)
    return mean, np.sqrt(var / n)


@dataclass
class MomentEstimates:
    """Sampled counterparts of the closed-form moment set for one user."""

    mean_wkk: McEstimate
    second_moments: list        # per probe user i: McEstimate of (J, J)
    v_diag: McEstimate
    expected_w: list            # per probe user i: McEstimate of E{w_ki}
    qhat_norm: McEstimate       # E{qhat^H qhat} per AP (orthogonality check)


def empirical_moments(stats: ChannelStatistics, operator: LmmseOperator,
                      phase: PhaseConfig, assignment: PilotAssignment, k: int,
                      n_samples: int, rng: np.random.Generator,
                      n_workers: int = 1, batch: int = 20000) -> MomentEstimates:
    """Sample E{w_kk}, E{w_ki w_ki^H} for every probe i, and the MRC norms.

    Samples are partitioned into per-worker substreams spawned from the
    given generator, accumulated in a fixed order, so any worker count gives
    reproducible output for a fixed seed.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1e3")
    j_count = stats.topology.num_aps
    k_count = stats.topology.num_users
    streams = rng.spawn(n_workers) if n_workers > 1 else [rng]
    per_worker = [n_samples // n_workers] * n_workers
    per_worker[-1] += n_samples - sum(per_worker)

    sum_w = np.zeros((k_count, j_count), dtype=complex)
    sq_w = np.zeros((k_count, j_count))
    sum_outer = np.zeros((k_count, j_count, j_count), dtype=complex)
    sq_outer = np.zeros((k_count, j_count, j_count))
    sum_norm = np.zeros(j_count)
    sq_norm = np.zeros(j_count)

    for stream, count in zip(streams, per_worker):
        done = 0
        while done < count:
            size = min(batch, count - done)
            real = sample_realization(stats, phase, stream, size=size)
            y = simulate_pilot_phase(real, assignment, operator.rho,
                                     operator.tau_p, operator.sigma2, stream)
            qhat = estimate_channel(operator, y, stats, assignment, phase)
            w = np.einsum("sjn,sjin->sij", qhat[:, :, k, :].conj(), real.q)  # (S, K, J)
            outer = np.einsum("sij,sih->sijh", w, w.conj())
            sum_w += w.sum(axis=0).astype(complex)
            sq_w += (np.abs(w) ** 2).sum(axis=0)
            sum_outer += outer.sum(axis=0)
            sq_outer += (np.abs(outer) ** 2).sum(axis=0)
            norms = np.einsum("sjn,sjn->sj", qhat[:, :, k, :].conj(),
                              qhat[:, :, k, :]).real
            sum_norm += norms.sum(axis=0)
            sq_norm += (norms ** 2).sum(axis=0)
            done += size

    mean_w, se_w = _mc_stats(sum_w, sq_w, n_samples)
    mean_outer, se_outer = _mc_stats(sum_outer, sq_outer, n_samples)
    mean_norm, se_norm = _mc_stats(sum_norm, sq_norm, n_samples)
    return MomentEstimates(
        mean_wkk=McEstimate(mean_w[k], se_w[k], n_samples),
        second_moments=[McEstimate(mean_outer[i], se_outer[i], n_samples)
                        for i in range(k_count)],
        v_diag=McEstimate(mean_norm, se_norm, n_samples),
        expected_w=[McEstimate(mean_w[i], se_w[i], n_samples) for i in range(k_count)],
        qhat_norm=McEstimate(mean_norm, se_norm, n_samples),
    )


def component_oracle(stats: ChannelStatistics, phase: PhaseConfig,
                     assignment: PilotAssignment, rho: float, tau_p: int,
                     sigma2: float, mask: dict, k: int, n_samples: int,
                     rng: np.random.Generator) -> MomentEstimates:
    """Differential tester: sample the moments under masked statistics.

    mask maps component order ("eta1".."eta5") to the user indices whose
    coefficient survives; everything else is zeroed before both the sampling
    and the operator construction, so the estimate is directly comparable
    with the closed form evaluated on the same masked statistics.
    """
    masked = stats.masked(keep1=mask.get("eta1", ()), keep2=mask.get("eta2", ()),
                          keep3=mask.get("eta3", ()), keep4=mask.get("eta4", ()),
                          keep5=mask.get("eta5", ()))
    operator = lmmse_operator(masked, assignment, rho, tau_p, sigma2)
    return empirical_moments(masked, operator, phase, assignment, k, n_samples, rng)


def uplink_detect(realization, qhat: np.ndarray, weights: np.ndarray,
                  symbols: np.ndarray, rho_s: float, sigma2: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Two-step detection: per-AP MRC with the channel estimates, then the
    CPU's weighted fusion. symbols has shape (..., K); returns (..., K)."""
    q = realization.q                                   # (..., J, K, N)
    lead = q.shape[:-3]
    j_count, k_count, n_ant = q.shape[-3:]
    noise = complex_normal(rng, lead + (j_count, n_ant)) * np.sqrt(sigma2)
    y = np.sqrt(rho_s) * np.einsum("...jin,...i->...jn", q, symbols) + noise
    local = np.einsum("...jkn,...jn->...jk", qhat.conj(), y)
    return np.einsum("jk,...jk->...k", weights.conj(), local)


def detection_sinr(realization, qhat: np.ndarray, weights: np.ndarray, k: int,
                   rho_s: float, sigma2: float) -> float:
    """Effective SINR of the fused symbol estimate, computed from the same
    statistical decomposition the closed form bounds (signal carried by the
    mean of a^H w_kk; everything else interference plus noise)."""
    q = realization.q
    w = np.einsum("sjn,sjin->sij", qhat[:, :, k, :].conj(), q)   # (S, K, J)
    fused = np.einsum("j,sij->si", weights.conj(), w)            # (S, K)
    mean_kk = fused[:, k].mean()
    signal = rho_s * abs(mean_kk) ** 2
    own_var = rho_s * np.mean(np.abs(fused[:, k] - mean_kk) ** 2)
    cross = rho_s * sum(np.mean(np.abs(fused[:, i]) ** 2)
                        for i in range(q.shape[2]) if i != k)
    norms = np.einsum("sjn,sjn->sj", qhat[:, :, k, :].conj(), qhat[:, :, k, :]).real
    noise = sigma2 * float(np.abs(weights) ** 2 @ norms.mean(axis=0))
    return float(signal / (own_var + cross + noise))


def centralized_instantaneous_se(realization, rho: float, sigma2: float,
                                 tau_p: int, tau_c: int) -> np.ndarray:
    """Per-user SE of the fully centralized perfect-CSI MRC baseline.

    The CPU stacks all AP antennas (length J*N), combines with v_k = q_k and
    sees the instantaneous SINR; the same pilot-overhead prefactor applies.
    Returns shape (..., K).
    """
    q = realization.q                                    # (..., J, K, N)
    stacked = np.moveaxis(q, -2, -3)                     # (..., K, J, N)
    stacked = stacked.reshape(*q.shape[:-3], q.shape[-2], -1)   # (..., K, J*N)
    gram = np.einsum("...kd,...id->...ki", stacked.conj(), stacked)
    power = np.einsum("...kk->...k", gram).real
    inter = rho * (np.sum(np.abs(gram) ** 2, axis=-1) - power ** 2)
    sinr = rho * power ** 2 / (inter + sigma2 * power)
    return (1.0 - tau_p / tau_c) * np.log2(1.0 + sinr)
