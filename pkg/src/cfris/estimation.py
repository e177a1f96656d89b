"""Pilot transmission and LMMSE estimation of the aggregated channels.

Orthonormal pilots are never materialized: users sharing a pilot simply add
their aggregated channels in the de-spread observation, everyone else drops
out, and the effective noise is white with variance sigma^2/(rho*tau_p) per
antenna. The estimator statistics (mean vector plus the rank-R-plus-identity
covariances) are closed-form in the eta coefficients, so each per-(j,k)
estimation matrix comes from one Hermitian solve.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import ChannelRealization, ChannelStatistics, PhaseConfig, cascaded_los, complex_normal


class NumericalDegeneracyError(RuntimeError):
    """Raised when a covariance or interference matrix is not positive definite."""


@dataclass(frozen=True)
class PilotAssignment:
    """Round-robin pilot reuse: user k transmits pilot k mod tau_p."""

    num_users: int
    tau_p: int
    pilot_of_user: tuple
    copilot_sets: tuple   # copilot_sets[k] includes k itself

    def copilots(self, k: int) -> tuple:
        """Users sharing k's pilot, excluding k."""
        return tuple(l for l in self.copilot_sets[k] if l != k)


def assign_pilots(num_users: int, tau_p: int) -> PilotAssignment:
    if num_users < 1 or tau_p < 1:
        raise ValueError("num_users and tau_p must be >= 1")
    pilots = tuple(k % tau_p for k in range(num_users))
    sets = tuple(tuple(l for l in range(num_users) if pilots[l] == pilots[k])
                 for k in range(num_users))
    return PilotAssignment(num_users, tau_p, pilots, sets)


@dataclass
class LmmseOperator:
    """Per-(j,k) estimation matrices and the scalars behind them.

    xi (R,J,K), mu (J,K), omega (R,J,K), nu (J,K), chi (J,K complex) follow
    the estimator derivation with the direct-link variance counted once and
    the co-pilot cross term entering nu as 2*Re{delta}. delta[j,k,l] is the
    co-pilot covariance scalar. a_mat[j,k] is N x N.
    """

    xi: np.ndarray
    mu: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    nu: np.ndarray
    chi: np.ndarray
    a_mat: np.ndarray          # (J, K, N, N) complex
    noise_var: float           # sigma^2 / (rho * tau_p)
    rho: float
    tau_p: int
    sigma2: float
    assignment: PilotAssignment


def lmmse_scalars(stats: ChannelStatistics, assignment: PilotAssignment,
                  rho: float, tau_p: int, sigma2: float):
    """Scalar tables (xi, mu, delta, omega, nu, chi) of the estimator.

    delta[j,k,l] = sum_r eta3[r,j,k] eta3[r,j,l] gbar_{r,l}^H gbar_{r,k};
    it is complex for distinct co-pilot users and mu-like on the diagonal.
    """
    if rho <= 0 or tau_p < 1 or sigma2 < 0:
        raise ValueError("require rho > 0, tau_p >= 1, sigma2 >= 0")
    r_count, j_count, k_count, n_ant, m_elem = stats.shape
    xi = m_elem * stats.eta2 ** 2
    mu = np.sum(m_elem * (stats.eta3 ** 2 + stats.eta4 ** 2), axis=0) + stats.eta5 ** 2
    # gbar_{r,l}^H gbar_{r,k} for every user pair, then eta3-weighted r-sum.
    gram = np.einsum("rlm,rkm->rlk", stats.los_ris_user.conj(), stats.los_ris_user)
    delta = np.einsum("rjk,rjl,rlk->jkl", stats.eta3, stats.eta3, gram)

    omega = np.zeros_like(xi)
    nu = np.zeros((j_count, k_count))
    chi = np.zeros((j_count, k_count), dtype=complex)
    for k in range(k_count):
        others = assignment.copilots(k)
        omega[:, :, k] = xi[:, :, k] + sum(xi[:, :, l] for l in others)
        nu[:, k] = (mu[:, k] + sum(mu[:, l] for l in others)
                    + 2.0 * sum(delta[:, k, l].real for l in others)
                    + sigma2 / (rho * tau_p))
        chi[:, k] = mu[:, k] + sum(delta[:, k, l] for l in others)
    return xi, mu, delta, omega, nu, chi


def lmmse_operator(stats: ChannelStatistics, assignment: PilotAssignment,
                   rho: float, tau_p: int, sigma2: float) -> LmmseOperator:
    """Build A_{j,k} = Cov{q,y} Cov{y,y}^-1 for every AP-user pair.

    The observation covariance is symmetrized and solved (never inverted):
    A = (C_y^-1 C_qy^H)^H with C_y Hermitian positive definite.
    """
    xi, mu, delta, omega, nu, chi = lmmse_scalars(stats, assignment, rho, tau_p, sigma2)
    r_count, j_count, k_count, n_ant, _ = stats.shape
    a_mat = np.zeros((j_count, k_count, n_ant, n_ant), dtype=complex)
    eye = np.eye(n_ant)
    for j in range(j_count):
        outer = np.einsum("rn,rm->rnm", stats.a_ap[:, j], stats.a_ap[:, j].conj()) \
            if r_count else np.zeros((0, n_ant, n_ant))
        for k in range(k_count):
            if nu[j, k] <= 0:
                raise NumericalDegeneracyError(f"observation covariance not PD at (j={j}, k={k})")
            c_y = np.einsum("r,rnm->nm", omega[:, j, k], outer) + nu[j, k] * eye
            c_y = 0.5 * (c_y + c_y.conj().T)
            c_qy = np.einsum("r,rnm->nm", xi[:, j, k], outer) + chi[j, k] * eye
            try:
                solved = np.linalg.solve(c_y, c_qy.conj().T)
            except np.linalg.LinAlgError as exc:
                raise NumericalDegeneracyError(
                    f"singular observation covariance at (j={j}, k={k})") from exc
            a_mat[j, k] = solved.conj().T
    return LmmseOperator(xi, mu, delta, omega, nu, chi, a_mat,
                         sigma2 / (rho * tau_p), rho, tau_p, sigma2, assignment)


def simulate_pilot_phase(realization: ChannelRealization, assignment: PilotAssignment,
                         rho: float, tau_p: int, sigma2: float,
                         rng: np.random.Generator) -> np.ndarray:
    """De-spread pilot observations y[..., j, k, :].

    y_{j,k} = q_{j,k} + sum over co-pilot users of q_{j,l} + noise, with the
    noise shared within a pilot group (one de-spread noise vector per pilot)
    and independent across pilots and APs.
    """
    q = realization.q
    lead = q.shape[:-3]
    j_count, k_count, n_ant = q.shape[-3:]
    noise_per_pilot = complex_normal(rng, lead + (j_count, tau_p, n_ant)) \
        * np.sqrt(sigma2 / (rho * tau_p))
    y = np.zeros_like(q)
    for k in range(k_count):
        y[..., :, k, :] = q[..., :, k, :] + noise_per_pilot[..., :, assignment.pilot_of_user[k], :]
        for l in assignment.copilots(k):
            y[..., :, k, :] += q[..., :, l, :]
    return y


def estimate_channel(operator: LmmseOperator, y: np.ndarray, stats: ChannelStatistics,
                     assignment: PilotAssignment, phase: PhaseConfig) -> np.ndarray:
    """LMMSE estimates qhat[..., j, k, :] from de-spread observations.

    qhat = A y + (I - A) mean_k - sum_l A mean_l over k's co-pilot users.
    """
    mean = cascaded_los(stats, phase)           # (J, K, N)
    qhat = np.einsum("jknm,...jkm->...jkn", operator.a_mat, y)
    k_count = stats.topology.num_users
    for k in range(k_count):
        offset = mean[:, k, :] - np.einsum("jnm,jm->jn", operator.a_mat[:, k], mean[:, k, :])
        for l in assignment.copilots(k):
            offset -= np.einsum("jnm,jm->jn", operator.a_mat[:, k], mean[:, l, :])
        qhat[..., :, k, :] += offset
    return qhat


def nmse(stats: ChannelStatistics, operator: LmmseOperator, assignment: PilotAssignment,
         phase: PhaseConfig, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Per-user normalized estimation error, sampled.

    Ratio of summed-over-APs error covariance trace to channel covariance
    trace, both from sample covariances over n_samples pilot rounds.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1e3 for a stable covariance estimate")
    from .geometry import sample_realization
    real = sample_realization(stats, phase, rng, size=n_samples)
    y = simulate_pilot_phase(real, assignment, operator.rho, operator.tau_p,
                             operator.sigma2, rng)
    qhat = estimate_channel(operator, y, stats, assignment, phase)
    err = real.q - qhat
    err_var = np.sum(np.var(err, axis=0), axis=(0, 2))   # sum over (j, n) -> per user
    q_var = np.sum(np.var(real.q, axis=0), axis=(0, 2))
    return (err_var / q_var).real
