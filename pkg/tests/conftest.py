"""Shared scenario builders for the test suite."""

import numpy as np
import pytest

import cfris
from cfris import (AngleSet, PathLossModel, PhaseConfig, SystemTopology,
                   assign_pilots, build_channel_statistics, lmmse_operator)
from cfris.sac import RisEnvironment

RHO_0DBM = 1e-3
SIGMA2 = 10 ** ((-104 - 30) / 10)


def build_case(seed, num_aps=2, antennas=2, num_users=2, num_ris=2, elements=4,
               grid=None, tau_p=2, kappa=10.0, epsilon=10.0, rho=RHO_0DBM,
               sigma2=SIGMA2, box=(120.0, 100.0), ris_height=(30.0, 60.0)):
    """Random compact scenario with everything wired up."""
    rng = np.random.default_rng(seed)
    ap, ris, users = cfris.uniform_placements(num_aps, num_ris, num_users, rng,
                                              box=box, ris_height=ris_height)
    topo = SystemTopology(num_aps, antennas, num_users, num_ris, elements,
                          ap, ris, users, ris_grid=grid)
    angles = AngleSet.draw(num_ris, num_aps, num_users, rng)
    stats = build_channel_statistics(topo, PathLossModel(), kappa, epsilon, angles)
    assignment = assign_pilots(num_users, tau_p)
    operator = lmmse_operator(stats, assignment, rho, tau_p, sigma2)
    phase = PhaseConfig.uniform(num_ris, elements, rng)
    return {
        "stats": stats, "assignment": assignment, "operator": operator,
        "phase": phase, "rho": rho, "sigma2": sigma2, "tau_p": tau_p,
        "tau_c": 200, "rng": rng,
    }


def synthetic_case(seed=7, coeff_seed=42, **kwargs):
    """Compact scenario with order-one mixing coefficients so that every
    pairing family is numerically material."""
    case = build_case(seed, num_users=kwargs.pop("num_users", 3), **kwargs)
    gen = np.random.default_rng(coeff_seed)
    stats = case["stats"]
    for name in ("eta1", "eta2", "eta3", "eta4"):
        setattr(stats, name, gen.uniform(0.3, 1.0, getattr(stats, name).shape))
    stats.eta5 = gen.uniform(0.3, 1.0, stats.eta5.shape)
    case["rho"], case["sigma2"] = 1.0, 0.5
    case["operator"] = lmmse_operator(stats, case["assignment"], 1.0,
                                      case["tau_p"], 0.5)
    return case


def clustered_case(seed, num_users=2, num_ris=2, elements=8, grid=(2, 4),
                   tau_p=2, antennas=2, kappa=10.0, epsilon=10.0,
                   rho=RHO_0DBM, sigma2=SIGMA2):
    """Users near the panels, APs far: phase optimization is material."""
    rng = np.random.default_rng(seed)
    ap = np.array([[0.0, 0.0, 30.0], [0.0, 40.0, 30.0]])
    users = np.column_stack([rng.uniform(85, 105, num_users),
                             rng.uniform(0, 40, num_users), np.zeros(num_users)])
    if num_ris:
        ris = np.column_stack([rng.uniform(80, 105, num_ris),
                               rng.uniform(0, 40, num_ris),
                               np.full(num_ris, 40.0)])
    else:
        ris = np.zeros((0, 3))
    topo = SystemTopology(2, antennas, num_users, num_ris, elements, ap, ris,
                          users, ris_grid=grid if num_ris else (1, elements))
    angles = AngleSet.draw(num_ris, 2, num_users, rng)
    stats = build_channel_statistics(topo, PathLossModel(), kappa, epsilon, angles)
    assignment = assign_pilots(num_users, tau_p)
    operator = lmmse_operator(stats, assignment, rho, tau_p, sigma2)
    return {"stats": stats, "assignment": assignment, "operator": operator,
            "rho": rho, "sigma2": sigma2, "tau_p": tau_p, "tau_c": 200, "rng": rng}


def make_env(case) -> RisEnvironment:
    return RisEnvironment(case["stats"], case["operator"], case["assignment"],
                          case["rho"], case["sigma2"], case["tau_p"], case["tau_c"])


def toy_env(seed=11):
    """Single AP, single user, one 2-element panel."""
    case = build_case(seed, num_aps=1, antennas=2, num_users=1, num_ris=1,
                      elements=2, grid=(1, 2), tau_p=1)
    return make_env(case)


@pytest.fixture
def small_case():
    return build_case(1)


@pytest.fixture
def contaminated_case():
    return build_case(3, num_users=3, tau_p=2)
