"""System geometry, long-term channel statistics and per-block channel draws.

The network has J multi-antenna access points (ULA), K single-antenna users
and R reflecting panels (uniform planar arrays of M elements). The direct
AP-user links are Rayleigh; the panel links are Rician with rank-one LoS
components built from array response vectors. Everything long-term (path
losses, Rician factors, LoS matrices and the derived mixing coefficients)
lives in ChannelStatistics; fast fading is drawn per coherence block by
sample_realization.
"""

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


class InvalidArgumentError(ValueError):
    """Raised when a structural precondition on the inputs is violated."""


# ---------------------------------------------------------------------------
# Configuration containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemTopology:
    """Static network layout.

    Positions are 3-D coordinates in meters: ap_positions (J,3),
    ris_positions (R,3), user_positions (K,3). ris_grid is the (horizontal,
    vertical) element layout of each panel, with ris_grid[0]*ris_grid[1] == M.
    """

    num_aps: int
    antennas_per_ap: int
    num_users: int
    num_ris: int
    elements_per_ris: int
    ap_positions: np.ndarray
    ris_positions: np.ndarray
    user_positions: np.ndarray
    ris_grid: tuple[int, int] | None = None
    d_over_lambda: float = 0.5

    def __post_init__(self):
        if min(self.num_aps, self.antennas_per_ap, self.num_users,
               self.elements_per_ris) < 1 or self.num_ris < 0:
            raise InvalidArgumentError("topology dimensions must be positive (num_ris >= 0)")
        grid = self.ris_grid
        if grid is None:
            grid = square_grid(self.elements_per_ris)
            object.__setattr__(self, "ris_grid", grid)
        if grid[0] * grid[1] != self.elements_per_ris:
            raise InvalidArgumentError(
                f"ris_grid {grid} does not factor elements_per_ris={self.elements_per_ris}")
        if self.d_over_lambda <= 0:
            raise InvalidArgumentError("d_over_lambda must be positive")
        for name, arr, count in (("ap_positions", self.ap_positions, self.num_aps),
                                 ("ris_positions", self.ris_positions, self.num_ris),
                                 ("user_positions", self.user_positions, self.num_users)):
            arr = np.asarray(arr, dtype=float).reshape(count, 3)
            object.__setattr__(self, name, arr)


def square_grid(m: int) -> tuple[int, int]:
    """Default square element layout; rejects non-square counts."""
    side = int(round(np.sqrt(m)))
    if side * side != m:
        raise InvalidArgumentError(
            f"elements_per_ris={m} is not a perfect square; pass ris_grid=(m_h, m_v) explicitly")
    return (side, side)


@dataclass(frozen=True)
class PathLossModel:
    """Power-law path loss: gain = reference_gain * distance^-exponent."""

    reference_gain: float = 1e-3
    exponent_ap_user: float = 4.0
    exponent_ap_ris: float = 2.5
    exponent_ris_user: float = 2.0

    def __post_init__(self):
        if self.reference_gain <= 0:
            raise InvalidArgumentError("reference_gain must be positive")


@dataclass(frozen=True)
class AngleSet:
    """Link angles in radians.

    aoa_ap (R,J): azimuth at each AP from each panel. aod_ris_az/el (R,J):
    departure from panel toward AP. aoa_ris_az/el (R,K): arrival at panel
    from user. Azimuths live in [0, 2pi), elevations in [0, pi).
    """

    aoa_ap: np.ndarray
    aod_ris_az: np.ndarray
    aod_ris_el: np.ndarray
    aoa_ris_az: np.ndarray
    aoa_ris_el: np.ndarray

    @staticmethod
    def draw(num_ris: int, num_aps: int, num_users: int, rng: np.random.Generator) -> "AngleSet":
        """Uniform azimuth [0,2pi) / elevation [0,pi) draws, frozen as S-CSI."""
        return AngleSet(
            aoa_ap=rng.uniform(0.0, TWO_PI, size=(num_ris, num_aps)),
            aod_ris_az=rng.uniform(0.0, TWO_PI, size=(num_ris, num_aps)),
            aod_ris_el=rng.uniform(0.0, np.pi, size=(num_ris, num_aps)),
            aoa_ris_az=rng.uniform(0.0, TWO_PI, size=(num_ris, num_users)),
            aoa_ris_el=rng.uniform(0.0, np.pi, size=(num_ris, num_users)),
        )


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def path_loss(distance: float, exponent: float, reference_gain: float = 1e-3) -> float:
    """Power-law link gain reference_gain * distance^-exponent."""
    if np.any(np.asarray(distance) <= 0):
        raise InvalidArgumentError("path_loss requires distance > 0")
    return reference_gain * np.asarray(distance, dtype=float) ** (-exponent)


def array_response(x: int, grid: tuple[int, int] | None, azimuth: float, elevation: float,
                   d_over_lambda: float = 0.5, kind: str = "USPA") -> np.ndarray:
    """Array response vector, unit-modulus entries, first entry 1.

    USPA entry n (0-based): exp(j*2pi*(d/lambda) * (floor(n / m_v) * sin(az) * sin(el)
    + (n mod m_v) * cos(el))) on an (m_h, m_v) grid. The ULA variant fixes
    elevation = pi/2 and ramps linearly in n.
    """
    if x < 1:
        raise InvalidArgumentError("array size must be positive")
    n = np.arange(x)
    if kind == "ULA":
        phase = TWO_PI * d_over_lambda * n * np.sin(azimuth)
    elif kind == "USPA":
        if grid is None:
            grid = square_grid(x)
        if grid[0] * grid[1] != x:
            raise InvalidArgumentError(f"grid {grid} does not factor array size {x}")
        m_v = grid[1]
        phase = TWO_PI * d_over_lambda * ((n // m_v) * np.sin(azimuth) * np.sin(elevation)
                                          + (n % m_v) * np.cos(elevation))
    else:
        raise InvalidArgumentError(f"unknown array kind {kind!r}")
    return np.exp(1j * phase)


# ---------------------------------------------------------------------------
# Long-term statistics
# ---------------------------------------------------------------------------

@dataclass
class ChannelStatistics:
    """All slow-timescale quantities of the network.

    Arrays are indexed (r, j) for panel-AP links, (r, k) for panel-user
    links and (j, k) for direct links. eta1..eta4 have shape (R, J, K),
    eta5 has shape (J, K); they are the mixing coefficients of the five-term
    aggregated-channel decomposition. a_ap[r, j] is the AP steering vector
    (N,), a_ris[r, j] the panel-side departure steering vector (M,), and
    los_ris_user[r, k] the panel-user LoS vector (M,); los_ap_ris[r, j] is
    the rank-one product a_ap * a_ris^H.
    """

    topology: SystemTopology
    beta: np.ndarray          # (R, J) panel-AP path loss
    alpha: np.ndarray         # (R, K) panel-user path loss
    gamma: np.ndarray         # (J, K) direct path loss
    kappa: np.ndarray         # (R, J) Rician factors, panel-AP
    epsilon: np.ndarray       # (R, K) Rician factors, panel-user
    a_ap: np.ndarray          # (R, J, N) complex
    a_ris: np.ndarray         # (R, J, M) complex
    los_ris_user: np.ndarray  # (R, K, M) complex
    zeta: np.ndarray = field(init=False)   # (R, J, K)
    eta1: np.ndarray = field(init=False)   # (R, J, K)
    eta2: np.ndarray = field(init=False)
    eta3: np.ndarray = field(init=False)
    eta4: np.ndarray = field(init=False)
    eta5: np.ndarray = field(init=False)   # (J, K)

    def __post_init__(self):
        beta = self.beta[:, :, None]
        alpha = self.alpha[:, None, :]
        kappa = self.kappa[:, :, None]
        eps = self.epsilon[:, None, :]
        self.zeta = beta * alpha / ((1.0 + kappa) * (1.0 + eps))
        self.eta1 = np.sqrt(self.zeta * kappa * eps)
        self.eta2 = np.sqrt(self.zeta * kappa)
        self.eta3 = np.sqrt(self.zeta * eps)
        self.eta4 = np.sqrt(self.zeta)
        self.eta5 = np.sqrt(self.gamma)

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        t = self.topology
        return (t.num_ris, t.num_aps, t.num_users, t.antennas_per_ap, t.elements_per_ris)

    def los_ap_ris(self, r: int, j: int) -> np.ndarray:
        """Rank-one panel-AP LoS matrix (N, M)."""
        return np.outer(self.a_ap[r, j], self.a_ris[r, j].conj())

    def masked(self, keep1=(), keep2=(), keep3=(), keep4=(), keep5=()) -> "ChannelStatistics":
        """Copy with eta coefficients zeroed except for the listed users.

        Each keep* is an iterable of user indices whose eta of that order
        survives; used by the component oracle to isolate one term family.
        The e.g. beta/kappa fields are left untouched, so only the
        decomposition-form sampling path is meaningful on a masked copy.
        """
        out = ChannelStatistics(self.topology, self.beta, self.alpha, self.gamma,
                                self.kappa, self.epsilon, self.a_ap, self.a_ris,
                                self.los_ris_user)
        for name, keep in (("eta1", keep1), ("eta2", keep2), ("eta3", keep3),
                           ("eta4", keep4), ("eta5", keep5)):
            arr = np.zeros_like(getattr(self, name))
            for u in keep:
                arr[..., u] = getattr(self, name)[..., u]
            setattr(out, name, arr)
        return out


def build_channel_statistics(topology: SystemTopology, path_loss_model: PathLossModel,
                             rician_ap_ris, rician_ris_user, angles: AngleSet) -> ChannelStatistics:
    """Assemble path losses, Rician factors and LoS steering vectors.

    rician_ap_ris broadcasts to (R, J) and rician_ris_user to (R, K);
    scalars give uniform factors as in the reference parameter table.
    """
    t = topology
    r_count, j_count, k_count = t.num_ris, t.num_aps, t.num_users
    n_ant, m_elem = t.antennas_per_ap, t.elements_per_ris
    kappa = np.broadcast_to(np.asarray(rician_ap_ris, dtype=float), (r_count, j_count)).copy()
    eps = np.broadcast_to(np.asarray(rician_ris_user, dtype=float), (r_count, k_count)).copy()
    if np.any(kappa < 0) or np.any(eps < 0):
        raise InvalidArgumentError("Rician factors must be non-negative")

    def dist(a, b):
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
        if np.any(d <= 0):
            raise InvalidArgumentError("coincident nodes give zero link distance")
        return d

    pl = path_loss_model
    beta = path_loss(dist(t.ris_positions, t.ap_positions), pl.exponent_ap_ris,
                     pl.reference_gain) if r_count else np.zeros((0, j_count))
    alpha = path_loss(dist(t.ris_positions, t.user_positions), pl.exponent_ris_user,
                      pl.reference_gain) if r_count else np.zeros((0, k_count))
    gamma = path_loss(dist(t.ap_positions, t.user_positions), pl.exponent_ap_user,
                      pl.reference_gain)

    a_ap = np.ones((r_count, j_count, n_ant), dtype=complex)
    a_ris = np.ones((r_count, j_count, m_elem), dtype=complex)
    los_ris_user = np.ones((r_count, k_count, m_elem), dtype=complex)
    for r in range(r_count):
        for j in range(j_count):
            a_ap[r, j] = array_response(n_ant, None, angles.aoa_ap[r, j], np.pi / 2,
                                        t.d_over_lambda, kind="ULA")
            a_ris[r, j] = array_response(m_elem, t.ris_grid, angles.aod_ris_az[r, j],
                                         angles.aod_ris_el[r, j], t.d_over_lambda)
        for k in range(k_count):
            los_ris_user[r, k] = array_response(m_elem, t.ris_grid, angles.aoa_ris_az[r, k],
                                                angles.aoa_ris_el[r, k], t.d_over_lambda)
    return ChannelStatistics(topology, beta, alpha, gamma, kappa, eps,
                             a_ap, a_ris, los_ris_user)


# ---------------------------------------------------------------------------
# Phase configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseConfig:
    """Per-panel element phases theta (R, M) in [0, 2pi)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.mod(np.asarray(self.theta, dtype=float), TWO_PI)
        object.__setattr__(self, "theta", theta)

    @property
    def phases(self) -> np.ndarray:
        """Diagonal entries e^{j theta}, shape (R, M)."""
        return np.exp(1j * self.theta)

    @staticmethod
    def uniform(num_ris: int, elements: int, rng: np.random.Generator) -> "PhaseConfig":
        return PhaseConfig(rng.uniform(0.0, TWO_PI, size=(num_ris, elements)))

    @staticmethod
    def zeros(num_ris: int, elements: int) -> "PhaseConfig":
        return PhaseConfig(np.zeros((num_ris, elements)))


# ---------------------------------------------------------------------------
# Fast-fading realizations
# ---------------------------------------------------------------------------

def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. circularly-symmetric unit-variance complex Gaussians."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass
class ChannelRealization:
    """One (or a batch of) fast-fading draws.

    q has shape (..., J, K, N) and is assembled from the five-component
    decomposition; h_ap_ris/g_ris_user/h_direct are the physical link
    channels rebuilt from the same NLoS draws, so for unmasked statistics
    the link-product aggregate equals q to machine precision.
    """

    q: np.ndarray             # (..., J, K, N)
    h_ap_ris: np.ndarray      # (..., R, J, N, M)
    g_ris_user: np.ndarray    # (..., R, K, M)
    h_direct: np.ndarray      # (..., J, K, N)
    nlos_ap_ris: np.ndarray   # (..., R, J, N, M)
    nlos_ris_user: np.ndarray  # (..., R, K, M)
    nlos_direct: np.ndarray   # (..., J, K, N)

    def q_from_links(self, phase: PhaseConfig) -> np.ndarray:
        """Aggregate channel recomputed from the physical link matrices."""
        cascade = np.einsum("...rjnm,rm,...rkm->...jkn", self.h_ap_ris,
                            phase.phases, self.g_ris_user)
        return cascade + self.h_direct


def sample_realization(stats: ChannelStatistics, phase: PhaseConfig,
                       rng: np.random.Generator, size: int | None = None) -> ChannelRealization:
    """Draw fast fading and assemble the aggregated channels.

    size=None gives single-draw arrays; size=S prepends a sample axis.
    The aggregate q is built from the eta-weighted decomposition so that
    masked statistics (component oracle) sample exactly the surviving terms.
    """
    r_count, j_count, k_count, n_ant, m_elem = stats.shape
    lead = () if size is None else (size,)
    ht = complex_normal(rng, lead + (r_count, j_count, n_ant, m_elem))
    gt = complex_normal(rng, lead + (r_count, k_count, m_elem))
    dt = complex_normal(rng, lead + (j_count, k_count, n_ant))

    phases = phase.phases if r_count else np.zeros((0, m_elem))
    # Scalar panel sums: u[r,j,u] = a_ris^H Phi gbar (LoS) and its NLoS analogues.
    f_los = np.einsum("rjm,rm,rkm->rjk", stats.a_ris.conj(), phases, stats.los_ris_user)
    f_nlos_g = np.einsum("rjm,rm,...rkm->...rjk", stats.a_ris.conj(), phases, gt)
    hphi_los = np.einsum("...rjnm,rm,rkm->...rjkn", ht, phases, stats.los_ris_user)
    hphi_nlos = np.einsum("...rjnm,rm,...rkm->...rjkn", ht, phases, gt)

    comp1 = np.einsum("rjk,rjk,rjn->jkn", stats.eta1, f_los, stats.a_ap)
    comp2 = np.einsum("rjk,...rjk,rjn->...jkn", stats.eta2, f_nlos_g, stats.a_ap)
    comp3 = np.einsum("rjk,...rjkn->...jkn", stats.eta3, hphi_los)
    comp4 = np.einsum("rjk,...rjkn->...jkn", stats.eta4, hphi_nlos)
    comp5 = stats.eta5[:, :, None] * dt
    q = comp1 + comp2 + comp3 + comp4 + comp5

    scale_ris = np.sqrt(stats.beta / (1.0 + stats.kappa))
    h_ap_ris = scale_ris[:, :, None, None] * (
        np.sqrt(stats.kappa)[:, :, None, None]
        * np.einsum("rjn,rjm->rjnm", stats.a_ap, stats.a_ris.conj()) + ht)
    scale_user = np.sqrt(stats.alpha / (1.0 + stats.epsilon))
    g_ris_user = scale_user[:, :, None] * (
        np.sqrt(stats.epsilon)[:, :, None] * stats.los_ris_user + gt)
    h_direct = stats.eta5[:, :, None] * dt
    return ChannelRealization(q, h_ap_ris, g_ris_user, h_direct, ht, gt, dt)


def cascaded_los(stats: ChannelStatistics, phase: PhaseConfig) -> np.ndarray:
    """Mean aggregated channel E{q}, shape (J, K, N).

    The eta1-weighted sum of LoS cascades over all panels; zero when R = 0
    or when either Rician factor vanishes.
    """
    r_count, j_count, k_count, n_ant, m_elem = stats.shape
    if r_count == 0:
        return np.zeros((j_count, k_count, n_ant), dtype=complex)
    f_los = np.einsum("rjm,rm,rkm->rjk", stats.a_ris.conj(), phase.phases, stats.los_ris_user)
    return np.einsum("rjk,rjk,rjn->jkn", stats.eta1, f_los, stats.a_ap)


# ---------------------------------------------------------------------------
# Placement helpers
# ---------------------------------------------------------------------------

def uniform_placements(num_aps: int, num_ris: int, num_users: int, rng: np.random.Generator,
                       box=(500.0, 400.0), ap_height: float = 30.0,
                       ris_height=(30.0, 400.0)):
    """Random node layout: users on the ground plane, APs at fixed height,
    panels at a uniform height inside [ris_height[0], ris_height[1]]."""
    def xy(count):
        return rng.uniform((0.0, 0.0), box, size=(count, 2))

    ap = np.column_stack([xy(num_aps), np.full(num_aps, ap_height)])
    ris_z = rng.uniform(ris_height[0], ris_height[1], size=num_ris)
    ris = np.column_stack([xy(num_ris), ris_z]) if num_ris else np.zeros((0, 3))
    users = np.column_stack([xy(num_users), np.zeros(num_users)])
    return ap, ris, users
