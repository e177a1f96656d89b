"""Closed-form ergodic uplink SE from statistical CSI.

Everything here is a deterministic function of the long-term statistics, the
panel phases and the estimation matrices: the first moment E{w_kk}, the
second-moment matrices E{w_ki w_ki^H} for every probe user i, the optimal
fusion weights (a generalized Rayleigh quotient) and the resulting SINR/SE.

The second moments are fourth-order Gaussian expectations, assembled from a
complete enumeration of Isserlis pairings of the five-term aggregated-channel
decomposition:

* product part  - all pairings internal to the two (estimate, channel) inner
                  products; identically the outer product of first moments;
* cross part    - the twelve pairing patterns that bridge the two inner
                  products through shared NLoS panel/user channels (valid for
                  every AP pair, including the diagonal);
* diagonal part - same-AP extras: de-spread-noise pairs, direct-link pairs,
                  the pure cross-pair grid (user-interference family) and the
                  split-slot mixed families that only exist when the probe
                  user shares the estimator's pilot group.

Every term is a product of panel sums f, steering Grams b/e/c and sandwiches
of the estimation matrices; see HelperScalars for the cache layout.
"""

from dataclasses import dataclass

import numpy as np

from .estimation import LmmseOperator, NumericalDegeneracyError
from .geometry import ChannelStatistics, PhaseConfig, cascaded_los


# ---------------------------------------------------------------------------
# Helper scalar cache
# ---------------------------------------------------------------------------

@dataclass
class HelperScalars:
    """Contraction primitives shared by all moment formulas.

    Index conventions: j/h APs, a/b/c panel indices, u/v users, k the
    estimator user (the estimation matrices depend on it).

    f[j, a, u]       panel LoS sum  a_ris^H Phi gbar         (J, R, K) complex
    b[j, a, b]       AP steering Gram                        (J, R, R)
    e_ap[a, j, h]    panel departure Gram across APs         (R, J, J)
    c_g[a, u, v]     user LoS Gram                           (R, K, K)
    g_a[k, j, a, b]  a^H A_{j,k} a                           (K, J, R, R)
    w_aah[k, j, a, b]  a^H A A^H a                           (K, J, R, R)
    w_aha[k, j, a, b]  a^H A^H A a                           (K, J, R, R)
    tr_a[k, j]       Tr A_{j,k}                              (K, J)
    tr_w[k, j]       Tr A^H A  (real)                        (K, J)
    g1[j, u, :]      cascaded LoS mean vectors               (J, K, N)
    """

    stats: ChannelStatistics
    operator: LmmseOperator
    phase: PhaseConfig
    f: np.ndarray
    b: np.ndarray
    e_ap: np.ndarray
    c_g: np.ndarray
    g_a: np.ndarray
    w_aah: np.ndarray
    w_aha: np.ndarray
    tr_a: np.ndarray
    tr_w: np.ndarray
    g1: np.ndarray

    @property
    def noise_var(self) -> float:
        return self.operator.noise_var

    @property
    def num_aps(self) -> int:
        return self.stats.topology.num_aps

    @property
    def num_users(self) -> int:
        return self.stats.topology.num_users

    @property
    def num_ris(self) -> int:
        return self.stats.topology.num_ris

    @property
    def m_elem(self) -> int:
        return self.stats.topology.elements_per_ris


def helper_scalars(stats: ChannelStatistics, operator: LmmseOperator,
                   phase: PhaseConfig) -> HelperScalars:
    r_count, j_count, k_count, n_ant, m_elem = stats.shape
    phases = phase.phases if r_count else np.zeros((0, m_elem))
    f = np.einsum("rjm,rm,rkm->jrk", stats.a_ris.conj(), phases, stats.los_ris_user)
    b = np.einsum("ajn,bjn->jab", stats.a_ap.conj(), stats.a_ap)
    e_ap = np.einsum("rjm,rhm->rjh", stats.a_ris.conj(), stats.a_ris)
    c_g = np.einsum("rum,rvm->ruv", stats.los_ris_user.conj(), stats.los_ris_user)
    a_mat = operator.a_mat  # (J, K, N, N)
    g_a = np.einsum("ajn,jknm,bjm->kjab", stats.a_ap.conj(), a_mat, stats.a_ap)
    aah = np.einsum("jknm,jkpm->jknp", a_mat, a_mat.conj())
    aha = np.einsum("jkmn,jkmp->jknp", a_mat.conj(), a_mat)
    w_aah = np.einsum("ajn,jknp,bjp->kjab", stats.a_ap.conj(), aah, stats.a_ap)
    w_aha = np.einsum("ajn,jknp,bjp->kjab", stats.a_ap.conj(), aha, stats.a_ap)
    tr_a = np.einsum("jknn->kj", a_mat)
    tr_w = np.einsum("jknm,jknm->kj", a_mat.conj(), a_mat).real
    g1 = cascaded_los(stats, phase)
    return HelperScalars(stats, operator, phase, f, b, e_ap, c_g, g_a,
                         w_aah, w_aha, tr_a, tr_w, g1)


def _pilot_group(helpers: HelperScalars, k: int) -> list:
    """Estimator user's pilot group [k, co-pilots...]."""
    return [k, *helpers.operator.assignment.copilots(k)]


# ---------------------------------------------------------------------------
# First moment E{qhat_{j,k}^H q_{j,i}}
# ---------------------------------------------------------------------------

def expected_w(helpers: HelperScalars, k: int, i: int) -> np.ndarray:
    """E{qhat_{j,k}^H q_{j,i}} for all APs, shape (J,) complex.

    i == k gives E{w_kk}; a co-pilot probe additionally carries the leakage
    the estimator captures from i's own channel.
    """
    st = helpers.stats
    group = _pilot_group(helpers, k)
    t_ah = helpers.tr_a[k].conj()                         # (J,)
    ew = np.einsum("jn,jn->j", helpers.g1[:, k].conj(), helpers.g1[:, i])
    if helpers.num_ris:
        t3 = np.einsum("aju,aj,au->j", st.eta3[:, :, group], st.eta3[..., i],
                       helpers.c_g[:, group, i])
        ew = ew + t_ah * t3
    if i in group:
        if helpers.num_ris:
            ew = ew + helpers.m_elem * np.einsum("aj,jaa->j", st.eta2[..., i] ** 2,
                                                 helpers.g_a[k].conj())
            ew = ew + t_ah * helpers.m_elem * np.sum(st.eta4[..., i] ** 2, axis=0)
        ew = ew + t_ah * st.eta5[:, i] ** 2
    return ew


def expected_wkk(helpers: HelperScalars, k: int) -> np.ndarray:
    """E{w_kk}, shape (J,) complex."""
    return expected_w(helpers, k, k)


def _side_components(helpers: HelperScalars, k: int, i: int, j: int) -> dict:
    """Per-panel-pair (R, R) decomposition of the first moment at AP j.

    Keys: "det" (pure LoS), "k" (estimator-own NLoS content) and one entry
    per co-pilot. Entry [a, b] is the (estimate-slot panel a, channel-slot
    panel b) summand; panel-free content is parked at [0, 0]. Summing every
    entry of every component gives expected_w(k, i)[j]. Requires R >= 1.
    """
    st = helpers.stats
    r_count = helpers.num_ris
    if r_count == 0:
        raise ValueError("per-panel term views require at least one panel")
    m_elem = helpers.m_elem
    t_ah = helpers.tr_a[k, j].conj()
    parts: dict = {}
    parts["det"] = np.einsum("a,b,a,b,ab->ab",
                             st.eta1[:, j, k], st.eta1[:, j, i],
                             helpers.f[j, :, k].conj(), helpers.f[j, :, i],
                             helpers.b[j])
    for u in _pilot_group(helpers, k):
        comp = np.zeros((r_count, r_count), dtype=complex)
        comp[np.diag_indices(r_count)] = (t_ah * st.eta3[:, j, u] * st.eta3[:, j, i]
                                          * helpers.c_g[:, u, i])
        if i == u:
            comp[np.diag_indices(r_count)] += (
                m_elem * st.eta2[:, j, i] ** 2 * helpers.g_a[k, j].diagonal().conj()
                + t_ah * m_elem * st.eta4[:, j, i] ** 2)
            comp[0, 0] += t_ah * st.eta5[j, i] ** 2
        parts["k" if u == k else u] = comp
    return parts


# ---------------------------------------------------------------------------
# Cross pairing patterns (bridge the two inner products; any AP pair)
# ---------------------------------------------------------------------------

def _cross_pattern_arrays(helpers: HelperScalars, k: int, i: int) -> dict:
    """The twelve cross patterns as (J, J) blocks, keyed by pattern name.

    User sums run over the estimator's whole pilot group; the per-tuple term
    views re-slice them by user. Names encode the slot classes of the two
    inner products (det / G = LoS-panel NLoS-user / H = NLoS-panel LoS-user /
    HG = doubly NLoS), slots in the order (estimate_j, channel_j, channel_h,
    estimate_h).
    """
    st = helpers.stats
    j_count = helpers.num_aps
    if helpers.num_ris == 0:
        zero = np.zeros((j_count, j_count), dtype=complex)
        return {"t2": zero}
    f, b, e_ap, c_g = helpers.f, helpers.b, helpers.e_ap, helpers.c_g
    g_a = helpers.g_a[k]
    g_ah = np.swapaxes(g_a, -1, -2).conj()                # g_ah[j,a,b] = conj(G[j,b,a])
    t_a = helpers.tr_a[k]
    t_ah = t_a.conj()
    group = _pilot_group(helpers, k)
    m_elem = helpers.m_elem

    e1i, e2i = st.eta1[..., i], st.eta2[..., i]           # (R, J)
    e3i, e4i = st.eta3[..., i], st.eta4[..., i]
    e1k = st.eta1[..., k]
    e2u = st.eta2[:, :, group]                            # (R, J, U)
    e3u, e4u = st.eta3[:, :, group], st.eta4[:, :, group]
    fg = f[:, :, group]                                   # (J, R, U)
    fi, fk = f[..., i], f[..., k]                         # (J, R)

    f1i = e1i.T * fi                                      # (J, R)
    f1k = e1k.T * fk

    p22 = np.einsum("aju,ahu->jha", e2u, e2u)
    p44 = np.einsum("aju,ahu->jha", e4u, e4u)
    p24 = np.einsum("aju,ahu->jha", e2u, e4u)
    p42 = np.einsum("aju,ahu->jha", e4u, e2u)
    p33c = np.einsum("aju,ahv,auv->jha", e3u, e3u, c_g[:, group][:, :, group])

    zt = np.einsum("jab,hca,ahj->jhabc", g_ah, g_a, e_ap)
    st4 = np.einsum("jab,bjh,hbc->jhabc", b, e_ap, b)
    dt = np.einsum("jab,bjh,hba,ahj->jhab", g_ah, e_ap, g_a, e_ap)

    out = {}
    # (G u, det i | det i, G u): shared NLoS user channel across both estimates.
    out["t2"] = np.einsum("jha,jb,hc,jhabc->jh", p22, f1i, f1i.conj(), zt)
    # (det k, G i | G i, det k)
    out["t4"] = np.einsum("ja,bj,bh,hc,jhabc->jh", f1k.conj(), e2i, e2i, f1k, st4)
    # (G u, G i | G i, G u)
    out["t7"] = np.einsum("jha,bj,bh,jhab->jh", p22, e2i, e2i, dt)
    # (HG u, HG i | HG i, HG u) and (HG u, H i | H i, HG u)
    out["t8"] = m_elem * np.einsum("jha,aj,ah,j,h->jh", p44, e4i, e4i, t_ah, t_a)
    out["t10"] = m_elem * np.einsum("jha,aj,ah,j,h->jh", p44, e3i, e3i, t_ah, t_a)
    # (H u1, HG i | HG i, H u4): users may differ across the estimate slots.
    out["t9"] = np.einsum("jha,aj,ah,j,h->jh", p33c, e4i, e4i, t_ah, t_a)
    # m1/m2 conjugate pair: LoS estimate slot against a triple-NLoS chain.
    tm1 = np.einsum("bhu,jbu->jhb", e3u, fg)
    out["m1"] = np.einsum("ja,jhb,bj,bh,h,jab->jh", f1k.conj(), tm1, e2i, e4i, t_a, b)
    tm2 = np.einsum("aju,hau->jha", e3u, fg.conj())
    out["m2"] = np.einsum("jha,aj,ah,hc,j,hac->jh", tm2, e4i, e2i, f1k, t_ah, b)
    # m3/m5 conjugate pair: one estimation-matrix sandwich.
    out["m3"] = np.einsum("jha,ah,bj,jb,ja,jab,h->jh", p24, e3i, e1i, fi,
                          fi.conj(), g_ah, t_a)
    out["m5"] = np.einsum("jha,aj,ch,hc,ha,hca,j->jh", p42, e3i, e1i,
                          fi.conj(), fi, g_a, t_ah)
    # m4/m6 conjugate pair: all panels equal, diagonal sandwich.
    gdiag = np.einsum("jaa->ja", g_a)
    out["m4"] = m_elem * np.einsum("jha,aj,ah,ja,h->jh", p24, e2i, e4i,
                                   gdiag.conj(), t_a)
    out["m6"] = m_elem * np.einsum("jha,aj,ah,ha,j->jh", p42, e4i, e2i,
                                   gdiag, t_ah)
    return out


# ---------------------------------------------------------------------------
# Diagonal extras (same-AP pairings only)
# ---------------------------------------------------------------------------

def compute_c_term(helpers: HelperScalars, k: int, i: int, j: int) -> float:
    """Direct-link family: the probe's direct channel against the estimator's
    own and co-pilot direct channels and the de-spread noise."""
    st = helpers.stats
    group = _pilot_group(helpers, k)
    strength = sum(st.eta5[j, u] ** 2 for u in group) + helpers.noise_var
    return float(st.eta5[j, i] ** 2 * helpers.tr_w[k, j] * strength)


def term_noise(helpers: HelperScalars, k: int, i: int, j: int, r1: int, r2: int) -> complex:
    """De-spread-noise family summand at panel indices (r1, r2); summing over
    both indices gives the AP-j noise contribution."""
    st = helpers.stats
    m_elem = helpers.m_elem
    val = (st.eta1[r1, j, i] * st.eta1[r2, j, i] * helpers.f[j, r1, i]
           * helpers.f[j, r2, i].conj() * helpers.w_aah[k, j, r2, r1])
    if r1 == r2:
        val += m_elem * st.eta2[r1, j, i] ** 2 * helpers.w_aah[k, j, r1, r1]
        val += m_elem * (st.eta3[r1, j, i] ** 2 + st.eta4[r1, j, i] ** 2) * helpers.tr_w[k, j]
    return helpers.noise_var * val


def _noise_block(helpers: HelperScalars, k: int, i: int) -> np.ndarray:
    """Noise family for all APs at once, shape (J,)."""
    st = helpers.stats
    f1i = st.eta1[..., i].T * helpers.f[..., i]
    out = np.einsum("jb,jc,jcb->j", f1i, f1i.conj(), helpers.w_aah[k])
    out = out + helpers.m_elem * np.einsum("aj,jaa->j", st.eta2[..., i] ** 2,
                                           helpers.w_aah[k])
    out = out + helpers.m_elem * np.sum(st.eta3[..., i] ** 2 + st.eta4[..., i] ** 2,
                                        axis=0) * helpers.tr_w[k]
    return helpers.noise_var * out


def _grid_block(helpers: HelperScalars, k: int, i: int) -> np.ndarray:
    """Pure cross-pair grid (the user-interference family), shape (J,).

    Estimate slots run over {det, G, H, HG, direct} x channel slots likewise;
    the four all-(det/G) cells belong to the cross patterns and the
    direct/direct cell to the C family, so they are excluded here.
    """
    st = helpers.stats
    j_count = helpers.num_aps
    if helpers.num_ris == 0:
        return np.zeros(j_count, dtype=complex)
    group = _pilot_group(helpers, k)
    m_elem = helpers.m_elem
    w_aah, w_aha = helpers.w_aah[k], helpers.w_aha[k]
    g_a = helpers.g_a[k]
    g_ah = np.swapaxes(g_a, -1, -2).conj()
    t_w = helpers.tr_w[k]

    # Channel-slot weights (probe user i).
    f1i = st.eta1[..., i].T * helpers.f[..., i]                            # (J, R)
    w_g = m_elem * st.eta2[..., i].T ** 2                                  # (J, R)
    w_hhg = m_elem * np.sum(st.eta3[..., i] ** 2 + st.eta4[..., i] ** 2, axis=0)  # (J,)
    w_h5 = st.eta5[:, i] ** 2                                              # (J,)

    # Estimate-slot weights (whole pilot group).
    v_d = st.eta1[..., k].T * helpers.f[..., k].conj()                     # (J, R)
    v_g = m_elem * np.sum(st.eta2[:, :, group] ** 2, axis=2).T             # (J, R)
    e3u = st.eta3[:, :, group]
    v_h = np.einsum("aju,ajv,auv->ja", e3u, e3u,
                    helpers.c_g[:, group][:, :, group]).real               # (J, R)
    v_hg = m_elem * np.sum(st.eta4[:, :, group] ** 2, axis=2).T            # (J, R)
    v_h5 = np.sum(st.eta5[:, group] ** 2, axis=1)                          # (J,)

    out = np.zeros(j_count, dtype=complex)
    # (det, *) estimate slots: a^H X a contractions. (det, det/G) cells live
    # in the product part / t4 cross pattern and are excluded here.
    det_gram = np.einsum("ja,jc,jac->j", v_d, v_d.conj(), helpers.b)
    out += det_gram * (w_hhg + w_h5)
    # (G, *): A^H X A sandwiches; (G, det/G) are the t2/t7 cross patterns.
    waha_diag = np.einsum("jaa->ja", w_aha)
    out += np.einsum("ja,ja->j", v_g, waha_diag) * (w_hhg + w_h5)
    # (H / HG, *): Tr{A^H X A} forms.
    tr_d = np.einsum("jb,jc,jcb->j", f1i, f1i.conj(), w_aah)
    tr_g = np.einsum("jb,jbb->j", w_g, w_aah)
    v_tr = np.sum(v_h + v_hg, axis=1)
    out += v_tr * (tr_d + tr_g + t_w * (w_hhg + w_h5))
    # (direct, *): same trace forms, without the direct/direct cell.
    out += v_h5 * (tr_d + tr_g + t_w * w_hhg)
    return out


def _mixed_block(helpers: HelperScalars, k: int, i: int) -> np.ndarray:
    """Split-slot mixed families, shape (J,). Nonzero only when the probe
    user i belongs to the estimator's pilot group (i == k or a co-pilot)."""
    st = helpers.stats
    group = _pilot_group(helpers, k)
    j_count = helpers.num_aps
    if i not in group or helpers.num_ris == 0:
        return np.zeros(j_count, dtype=complex)
    m_elem = helpers.m_elem
    f = helpers.f
    w_aah, w_aha = helpers.w_aah[k], helpers.w_aha[k]
    g_a = helpers.g_a[k]
    g_ah = np.swapaxes(g_a, -1, -2).conj()
    t_w = helpers.tr_w[k]

    e1i, e2i = st.eta1[..., i], st.eta2[..., i]
    e3i, e4i = st.eta3[..., i], st.eta4[..., i]
    e1k = st.eta1[..., k]
    e3u = st.eta3[:, :, group]
    fg = f[:, :, group]
    fi, fk = f[..., i], f[..., k]

    out = np.zeros(j_count, dtype=complex)
    # A/B conjugate pair: doubly-NLoS estimate slot split across the sides.
    t_u = np.einsum("aju,jau->ja", e3u, fg)               # sum_u eta3 f(., u)
    out += np.einsum("aj,aj,cj,ja,jc,jca->j", e4i, e2i, e1i, t_u, fi.conj(), w_aah)
    t_uc = np.einsum("aju,jau->ja", e3u, fg.conj())
    out += np.einsum("bj,aj,aj,ja,jb,jab->j", e1i, e2i, e4i, t_uc, fi, w_aah)
    # C/F single-panel squares.
    out += m_elem * np.einsum("aj,jaa->j", (e4i * e2i) ** 2, w_aah)
    out += m_elem * np.einsum("aj,jaa->j", (e2i * e4i) ** 2, w_aha)
    # D/E conjugate pair against the pure-LoS estimate slot.
    out += np.einsum("aj,aj,aj,cj,ja,jc,jac->j", e2i, e4i, e3i, e1k,
                     fi.conj(), fk, g_ah)
    out += np.einsum("aj,bj,bj,bj,ja,jb,jab->j", e1k, e3i, e4i, e2i,
                     fk.conj(), fi, g_a)
    # G/H conjugate pair: trace-coupled double splits.
    out += t_w * np.einsum("aj,aj,aju,au->j", e4i ** 2, e3i, e3u,
                           helpers.c_g[:, i, group])
    out += t_w * np.einsum("aju,aj,aj,au->j", e3u, e3i, e4i ** 2,
                           helpers.c_g[:, group, i])
    # I: fully doubly-NLoS split.
    out += m_elem * t_w * np.sum(e4i ** 4, axis=0)
    return out


# ---------------------------------------------------------------------------
# Moment assembly
# ---------------------------------------------------------------------------

@dataclass
class MomentSet:
    """All statistical ingredients of the SINR for one user k."""

    mean_wkk: np.ndarray        # (J,) complex
    second_moments: np.ndarray  # (K, J, J) complex, entry [i] = E{w_ki w_ki^H}
    v_diag: np.ndarray          # (J,) real, E{||qhat_{j,k}||^2}
    hermitian_deviation: float  # max pre-symmetrization relative deviation


def moment_matrix(helpers: HelperScalars, k: int, i: int,
                  symmetrize: bool = True) -> np.ndarray:
    """E{w_ki w_ki^H}, shape (J, J) complex Hermitian."""
    ew = expected_w(helpers, k, i)
    mat = np.outer(ew, ew.conj()).astype(complex)
    for block in _cross_pattern_arrays(helpers, k, i).values():
        mat = mat + block
    j_count = helpers.num_aps
    diag = np.array([compute_c_term(helpers, k, i, j) for j in range(j_count)],
                    dtype=complex)
    diag = diag + _noise_block(helpers, k, i) + _grid_block(helpers, k, i)
    diag = diag + _mixed_block(helpers, k, i)
    mat[np.diag_indices(j_count)] += diag
    if symmetrize:
        mat = 0.5 * (mat + mat.conj().T)
    return mat


def moment_set(helpers: HelperScalars, k: int) -> MomentSet:
    """First/second moments and the MRC-norm diagonal for user k."""
    mean = expected_wkk(helpers, k)
    k_count = helpers.num_users
    seconds = np.zeros((k_count, helpers.num_aps, helpers.num_aps), dtype=complex)
    dev = 0.0
    for i in range(k_count):
        raw = moment_matrix(helpers, k, i, symmetrize=False)
        scale = np.linalg.norm(raw)
        if scale > 0:
            dev = max(dev, float(np.linalg.norm(raw - raw.conj().T) / scale))
        seconds[i] = 0.5 * (raw + raw.conj().T)
    return MomentSet(mean, seconds, mean.real.copy(), dev)


# ---------------------------------------------------------------------------
# Per-tuple term views (mirror the vectorized assembly; require R >= 1)
# ---------------------------------------------------------------------------

def _cross_tuple(helpers: HelperScalars, k: int, i: int, j: int, h: int,
                 r: tuple, users) -> complex:
    """One (r1, r2, r3, r4) summand of the cross patterns, with the estimate
    slots restricted to the given users. Bound panel indices are enforced by
    Kronecker guards so the free quadruple sum reproduces the pattern
    totals; t9's mixed-user slices are handled by the callers."""
    st = helpers.stats
    f, b, e_ap, c_g = helpers.f, helpers.b, helpers.e_ap, helpers.c_g
    g_a = helpers.g_a[k]
    t_a, t_ah = helpers.tr_a[k], helpers.tr_a[k].conj()
    m_elem = helpers.m_elem
    r1, r2, r3, r4 = r
    e1, e2, e3, e4 = st.eta1, st.eta2, st.eta3, st.eta4
    val = 0.0 + 0.0j
    for u in users:
        if r4 == r1:
            val += (e2[r1, j, u] * e1[r2, j, i] * e1[r3, h, i] * e2[r1, h, u]
                    * f[j, r2, i] * f[h, r3, i].conj()
                    * g_a[j, r2, r1].conj() * g_a[h, r3, r1] * e_ap[r1, h, j])
        if r4 == r1 and r3 == r2:
            val += (e2[r1, j, u] * e2[r2, j, i] * e2[r2, h, i] * e2[r1, h, u]
                    * g_a[j, r2, r1].conj() * e_ap[r2, j, h] * g_a[h, r2, r1]
                    * e_ap[r1, h, j])
        if r2 == r1 and r3 == r1 and r4 == r1:
            val += (e4[r1, j, u] * e4[r1, j, i] * e4[r1, h, i] * e4[r1, h, u]
                    * m_elem * t_ah[j] * t_a[h])
            val += (e4[r1, j, u] * e3[r1, j, i] * e3[r1, h, i] * e4[r1, h, u]
                    * m_elem * t_ah[j] * t_a[h])
            val += (e3[r1, j, u] * e4[r1, j, i] * e4[r1, h, i] * e3[r1, h, u]
                    * t_ah[j] * t_a[h] * c_g[r1, u, u])
            val += (e2[r1, j, u] * e2[r1, j, i] * e4[r1, h, i] * e4[r1, h, u]
                    * m_elem * g_a[j, r1, r1].conj() * t_a[h])
            val += (e4[r1, j, u] * e4[r1, j, i] * e2[r1, h, i] * e2[r1, h, u]
                    * m_elem * t_ah[j] * g_a[h, r1, r1])
        if r3 == r1 and r4 == r1:
            val += (e2[r1, j, u] * e1[r2, j, i] * e3[r1, h, i] * e4[r1, h, u]
                    * t_a[h] * f[j, r2, i] * f[j, r1, i].conj()
                    * g_a[j, r2, r1].conj())
        if r2 == r1 and r4 == r1:
            val += (e4[r1, j, u] * e3[r1, j, i] * e1[r3, h, i] * e2[r1, h, u]
                    * t_ah[j] * f[h, r3, i].conj() * f[h, r1, i] * g_a[h, r3, r1])
        if r3 == r2 and r4 == r2:
            val += (e1[r1, j, k] * e2[r2, j, i] * e4[r2, h, i] * e3[r2, h, u]
                    * t_a[h] * f[j, r1, k].conj() * f[j, r2, u] * b[j, r1, r2])
        if r2 == r1 and r3 == r1:
            val += (e3[r1, j, u] * e4[r1, j, i] * e2[r1, h, i] * e1[r4, h, k]
                    * t_ah[j] * f[h, r1, u].conj() * f[h, r4, k] * b[h, r1, r4])
    if k in users and r3 == r2:
        val += (e1[r1, j, k] * e2[r2, j, i] * e2[r2, h, i] * e1[r4, h, k]
                * f[j, r1, k].conj() * f[h, r4, k]
                * b[j, r1, r2] * e_ap[r2, j, h] * b[h, r2, r4])
    return val


def _t9_mixed(helpers: HelperScalars, k: int, i: int, j: int, h: int,
              r: tuple, l: int) -> complex:
    """t9 slices with different users in the two estimate slots, assigned to
    co-pilot l so they are counted exactly once across term_pc_cross_bs."""
    r1, r2, r3, r4 = r
    if not (r2 == r1 and r3 == r1 and r4 == r1):
        return 0.0 + 0.0j
    st = helpers.stats
    group = _pilot_group(helpers, k)
    base = (st.eta4[r1, j, i] * st.eta4[r1, h, i]
            * helpers.tr_a[k, j].conj() * helpers.tr_a[k, h])
    val = sum(st.eta3[r1, j, l] * st.eta3[r1, h, u4] * helpers.c_g[r1, l, u4]
              for u4 in group if u4 != l)
    val += st.eta3[r1, j, k] * st.eta3[r1, h, l] * helpers.c_g[r1, k, l]
    return base * val


def term_cross_bs(helpers: HelperScalars, k: int, i: int, j: int, h: int,
                  r1: int, r2: int, r3: int, r4: int) -> complex:
    """Own-pilot cross family summand. Summed over the quadruple panel range
    (together with term_pc_cross_bs and, for i == k, the self families) it
    rebuilds the off-diagonal (h, j) second-moment entry. For i == k the
    product-of-means content reduces to its pure-LoS cell so the self
    families carry the rest."""
    sides_j = _side_components(helpers, k, i, j)
    sides_h = _side_components(helpers, k, i, h)
    if i == k:
        prod = sides_j["det"][r1, r2] * sides_h["det"][r3, r4].conj()
    else:
        own_j = sides_j["det"] + sides_j["k"]
        own_h = sides_h["det"] + sides_h["k"]
        prod = own_j[r1, r2] * own_h[r3, r4].conj()
    return prod + _cross_tuple(helpers, k, i, j, h, (r1, r2, r3, r4), [k])


def term_pc_cross_bs(helpers: HelperScalars, k: int, l: int, i: int, j: int, h: int,
                     r1: int, r2: int, r3: int, r4: int) -> complex:
    """Co-pilot cross family summand for co-pilot l (see term_cross_bs)."""
    copilots = helpers.operator.assignment.copilots(k)
    if l not in copilots:
        raise ValueError(f"user {l} does not share user {k}'s pilot")
    val = 0.0 + 0.0j
    if i != k:
        sides_j = _side_components(helpers, k, i, j)
        sides_h = _side_components(helpers, k, i, h)
        own_j = sides_j["det"] + sides_j["k"]
        total_h = sum(sides_h.values())
        val += sides_j[l][r1, r2] * total_h[r3, r4].conj()
        val += own_j[r1, r2] * sides_h[l][r3, r4].conj()
    val += _cross_tuple(helpers, k, i, j, h, (r1, r2, r3, r4), [l])
    val += _t9_mixed(helpers, k, i, j, h, (r1, r2, r3, r4), l)
    return val


def term_self_ue(helpers: HelperScalars, k: int, j: int, h: int,
                 r1: int, r2: int, r3: int, r4: int) -> complex:
    """Self family (i == k): estimator-own within-slot pairings minus the
    pure-LoS cell already counted by term_cross_bs. Independent of the
    phases except through the cascaded-LoS inner products."""
    sides_j = _side_components(helpers, k, k, j)
    sides_h = _side_components(helpers, k, k, h)
    own_j = sides_j["det"] + sides_j["k"]
    own_h = sides_h["det"] + sides_h["k"]
    return (own_j[r1, r2] * own_h[r3, r4].conj()
            - sides_j["det"][r1, r2] * sides_h["det"][r3, r4].conj())


def term_pc_self_ue(helpers: HelperScalars, k: int, l: int, j: int, h: int,
                    r1: int, r2: int, r3: int, r4: int) -> complex:
    """Co-pilot self family (i == k): within-slot products touching l."""
    copilots = helpers.operator.assignment.copilots(k)
    if l not in copilots:
        raise ValueError(f"user {l} does not share user {k}'s pilot")
    sides_j = _side_components(helpers, k, k, j)
    sides_h = _side_components(helpers, k, k, h)
    own_j = sides_j["det"] + sides_j["k"]
    total_h = sum(sides_h.values())
    return (sides_j[l][r1, r2] * total_h[r3, r4].conj()
            + own_j[r1, r2] * sides_h[l][r3, r4].conj())


def term_cross_user(helpers: HelperScalars, k: int, i: int, j: int,
                    r1: int, r2: int, r3: int, r4: int) -> complex:
    """Diagonal user-interference family summand: the cross-pair grid plus,
    for pilot-group probes, the split-slot mixed families. Binding contract:
    (r1, r4) are the estimate slots, (r2, r3) the channel slots; panel-free
    factors are parked at index 0."""
    st = helpers.stats
    group = _pilot_group(helpers, k)
    m_elem = helpers.m_elem
    f = helpers.f
    w_aah, w_aha = helpers.w_aah[k], helpers.w_aha[k]
    g_a = helpers.g_a[k]
    t_w = helpers.tr_w[k, j]
    e1, e2, e3, e4, e5 = st.eta1, st.eta2, st.eta3, st.eta4, st.eta5

    v_d1 = e1[r1, j, k] * f[j, r1, k].conj()
    v_d4 = e1[r4, j, k] * f[j, r4, k]
    v_g = m_elem * sum(e2[r1, j, u] ** 2 for u in group)
    v_h = sum(e3[r1, j, u1] * e3[r1, j, u4] * helpers.c_g[r1, u1, u4]
              for u1 in group for u4 in group)
    v_hg = m_elem * sum(e4[r1, j, u] ** 2 for u in group)
    v_h5 = sum(e5[j, u] ** 2 for u in group)

    w_d = e1[r2, j, i] * e1[r3, j, i] * f[j, r2, i] * f[j, r3, i].conj()
    w_g = m_elem * e2[r2, j, i] ** 2
    w_hhg = m_elem * (e3[r2, j, i] ** 2 + e4[r2, j, i] ** 2)
    w_h5 = e5[j, i] ** 2

    val = 0.0 + 0.0j
    free5 = (r2 == 0 and r3 == 0)
    # (det, *); the (det, det/G) cells belong to the cross patterns.
    val += v_d1 * v_d4 * helpers.b[j, r1, r4] * (w_hhg * (r3 == r2) + w_h5 * free5)
    # (G, *); (G, det/G) are the t2/t7 cross patterns.
    if r4 == r1:
        val += v_g * w_aha[j, r1, r1] * (w_hhg * (r3 == r2) + w_h5 * free5)
        # (H / HG, *)
        val += (v_h + v_hg) * (w_d * w_aah[j, r3, r2]
                               + w_g * (r3 == r2) * w_aah[j, r2, r2]
                               + w_hhg * (r3 == r2) * t_w + w_h5 * free5 * t_w)
    # (direct, *) without the direct/direct cell
    if r1 == 0 and r4 == 0:
        val += v_h5 * (w_d * w_aah[j, r3, r2] + w_g * (r3 == r2) * w_aah[j, r2, r2]
                       + w_hhg * (r3 == r2) * t_w)
    # Split-slot mixed families (probes inside the pilot group only).
    if i in group:
        fi, fk = f[j, :, i], f[j, :, k]
        e1i, e2i = e1[:, j, i], e2[:, j, i]
        e3i, e4i = e3[:, j, i], e4[:, j, i]
        if r2 == r1 and r4 == r1:
            for u4 in group:
                val += (e4i[r1] * e2i[r1] * e1i[r3] * e3[r1, j, u4]
                        * fi[r3].conj() * f[j, r1, u4] * w_aah[j, r3, r1])
        if r3 == r1 and r4 == r1:
            for u1 in group:
                val += (e3[r1, j, u1] * e1i[r2] * e2i[r1] * e4i[r1]
                        * fi[r2] * f[j, r1, u1].conj() * w_aah[j, r1, r2])
        if r2 == r1 and r3 == r1 and r4 == r1:
            val += m_elem * (e4i[r1] * e2i[r1]) ** 2 * w_aah[j, r1, r1]
            val += m_elem * (e2i[r1] * e4i[r1]) ** 2 * w_aha[j, r1, r1]
            val += m_elem * t_w * e4i[r1] ** 4
            for u4 in group:
                val += t_w * e4i[r1] ** 2 * e3i[r1] * e3[r1, j, u4] * helpers.c_g[r1, i, u4]
            for u1 in group:
                val += t_w * e3[r1, j, u1] * e3i[r1] * e4i[r1] ** 2 * helpers.c_g[r1, u1, i]
        if r2 == r1 and r3 == r1:
            val += (e2i[r1] * e4i[r1] * e3i[r1] * e1[r4, j, k]
                    * fi[r1].conj() * fk[r4] * g_a[j, r4, r1].conj())
        if r3 == r2 and r4 == r2:
            val += (e1[r1, j, k] * e3i[r2] * e4i[r2] * e2i[r2]
                    * fk[r1].conj() * fi[r2] * g_a[j, r1, r2])
    return val


# ---------------------------------------------------------------------------
# SINR, combining weights, spectral efficiency
# ---------------------------------------------------------------------------

def interference_matrix(moments: MomentSet, k: int, rho: float, sigma2: float) -> np.ndarray:
    """Denominator matrix of the fusion Rayleigh quotient, (J, J) Hermitian."""
    mean = moments.mean_wkk
    mat = moments.second_moments[k] - np.outer(mean, mean.conj())
    for idx in range(moments.second_moments.shape[0]):
        if idx != k:
            mat = mat + moments.second_moments[idx]
    mat = rho * mat + sigma2 * np.diag(moments.v_diag)
    return 0.5 * (mat + mat.conj().T)


def combining_weights(moments: MomentSet, k: int, rho: float, sigma2: float,
                      cond_limit: float = 1e13) -> np.ndarray:
    """Rayleigh-quotient-optimal fusion weights a_k (scaling irrelevant)."""
    i_mat = interference_matrix(moments, k, rho, sigma2)
    cond = np.linalg.cond(i_mat)
    if not np.isfinite(cond) or cond > cond_limit:
        raise NumericalDegeneracyError(
            f"interference matrix ill-conditioned (cond ~ {cond:.3e})")
    return np.linalg.solve(i_mat, moments.mean_wkk)


def sinr_closed_form(moments: MomentSet, k: int, weights: np.ndarray,
                     rho: float, sigma2: float) -> float:
    """Effective SINR for arbitrary fusion weights (scale invariant)."""
    signal = rho * abs(np.vdot(weights, moments.mean_wkk)) ** 2
    i_mat = interference_matrix(moments, k, rho, sigma2)
    denom = np.real(np.vdot(weights, i_mat @ weights))
    if denom <= 0:
        raise NumericalDegeneracyError("non-positive SINR denominator")
    return float(signal / denom)


def sinr_optimal(moments: MomentSet, k: int, rho: float, sigma2: float) -> float:
    """SINR at the optimal weights, rho * mean^H I^-1 mean."""
    i_mat = interference_matrix(moments, k, rho, sigma2)
    sol = np.linalg.solve(i_mat, moments.mean_wkk)
    val = rho * np.real(np.vdot(moments.mean_wkk, sol))
    if val < 0:
        raise NumericalDegeneracyError("negative optimal SINR (degenerate system)")
    return float(val)


def spectral_efficiency(sinr: float, tau_p: int, tau_c: int) -> float:
    """Pilot-overhead-discounted rate (1 - tau_p/tau_c) log2(1 + SINR)."""
    if sinr < 0:
        raise NumericalDegeneracyError("negative SINR")
    return float((1.0 - tau_p / tau_c) * np.log2(1.0 + sinr))


@dataclass
class SeReport:
    """Per-user SINR/SE and their sum, with the fusion weights used."""

    sinr: np.ndarray       # (K,)
    se: np.ndarray         # (K,)
    weights: np.ndarray    # (K, J) complex
    sum_se: float


def sum_se(stats: ChannelStatistics, operator: LmmseOperator, phase: PhaseConfig,
           rho: float, sigma2: float, tau_p: int, tau_c: int,
           helpers: HelperScalars | None = None) -> SeReport:
    """Closed-form sum SE of all users at the given panel phases."""
    if helpers is None:
        helpers = helper_scalars(stats, operator, phase)
    k_count = helpers.num_users
    j_count = helpers.num_aps
    sinr = np.zeros(k_count)
    se = np.zeros(k_count)
    weights = np.zeros((k_count, j_count), dtype=complex)
    for k in range(k_count):
        moments = moment_set(helpers, k)
        w = combining_weights(moments, k, rho, sigma2)
        weights[k] = w
        sinr[k] = sinr_closed_form(moments, k, w, rho, sigma2)
        se[k] = spectral_efficiency(sinr[k], tau_p, tau_c)
    return SeReport(sinr, se, weights, float(np.sum(se)))
