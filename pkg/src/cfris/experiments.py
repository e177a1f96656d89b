"""Config-driven experiment scenarios producing plot-ready CSV data.

Configs are flat ``key = value`` text files (# comments). Every scenario
derives one child seed per sweep point from the master seed, so re-running
with the same config and seed reproduces the CSV byte for byte.
"""

import hashlib
import json
import time
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .estimation import assign_pilots, estimate_channel, lmmse_operator, simulate_pilot_phase
from .geometry import (AngleSet, PathLossModel, PhaseConfig, SystemTopology,
                       build_channel_statistics, sample_realization, uniform_placements)
from .monte_carlo import centralized_instantaneous_se, empirical_moments
from .sac import RisEnvironment, SacConfig, coordinate_ascent, random_search, sac_train

SCENARIOS = ("nmse-vs-m", "se-vs-m", "se-vs-n", "se-vs-power", "se-cdf",
             "centralized-compare", "validate-closed-form")


class ConfigError(ValueError):
    """Malformed or incomplete experiment configuration."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class ExperimentConfig:
    """Everything a scenario needs; dBm fields are converted on access."""

    num_aps: int = 2
    antennas_per_ap: int = 2
    num_users: int = 2
    num_ris: int = 2
    elements_per_ris: int = 8
    ris_grid_h: int = 0          # 0 = derive (square, or h x v from both fields)
    ris_grid_v: int = 0
    d_over_lambda: float = 0.5
    rho_dbm: float = 0.0
    rho_s_dbm: float | None = None
    sigma2_dbm: float = -104.0
    tau_c: int = 200
    tau_p: int = 2
    kappa: float = 10.0
    epsilon: float = 10.0
    gamma_exp: float = 4.0
    beta_exp: float = 2.5
    alpha_exp: float = 2.0
    reference_gain: float = 1e-3
    n_samples: int = 20000
    optimizer: str = "random"    # sac | random | coordinate | none
    episodes: int = 30
    steps_per_episode: int = 25
    n_random_draws: int = 50
    ca_sweeps: int = 1
    ca_grid_points: int = 16
    sweep: tuple = ()
    n_placements: int = 50
    n_seeds: int = 20
    seed: int = 1
    placement: str = "uniform"   # uniform | fig2 | cluster
    box_x: float = 500.0
    box_y: float = 400.0
    ap_height: float = 30.0
    ris_height_min: float = 30.0
    ris_height_max: float = 400.0

    @property
    def rho(self) -> float:
        return dbm_to_watt(self.rho_dbm)

    @property
    def rho_s(self) -> float:
        return dbm_to_watt(self.rho_s_dbm) if self.rho_s_dbm is not None else self.rho

    @property
    def sigma2(self) -> float:
        return dbm_to_watt(self.sigma2_dbm)

    def ris_grid(self, m: int | None = None):
        m = self.elements_per_ris if m is None else m
        if self.ris_grid_h and self.ris_grid_v and m == self.ris_grid_h * self.ris_grid_v:
            return (self.ris_grid_h, self.ris_grid_v)
        side = int(round(np.sqrt(m)))
        if side * side == m:
            return (side, side)
        raise ConfigError(f"elements_per_ris={m} needs explicit ris_grid_h/ris_grid_v")

    def to_dict(self) -> dict:
        out = {}
        for f_ in fields(self):
            value = getattr(self, f_.name)
            out[f_.name] = list(value) if isinstance(value, tuple) else value
        return out


_REQUIRED = ("num_aps", "antennas_per_ap", "num_users", "num_ris", "elements_per_ris",
             "tau_c", "tau_p", "rho_dbm", "sigma2_dbm", "seed")

_PRESETS = {
    # Reference parameter table: 3 APs x 4 antennas, 4 users, 3 panels x 30
    # elements (5 x 6 grid), tau_c 200 / tau_p 4, Rician factors 10.
    "paper-table2": dict(num_aps=3, antennas_per_ap=4, num_users=4, num_ris=3,
                         elements_per_ris=30, ris_grid_h=5, ris_grid_v=6,
                         tau_p=4, tau_c=200, kappa=10.0, epsilon=10.0,
                         rho_dbm=0.0, sigma2_dbm=-104.0),
    # Same parameters with the published corner coordinates (panel at
    # (0,200,400), AP at (500,200,30)); remaining nodes are a fixed invented
    # layout on the same 500 x 400 ground plan.
    "paper-fig2": dict(num_aps=3, antennas_per_ap=4, num_users=4, num_ris=3,
                       elements_per_ris=30, ris_grid_h=5, ris_grid_v=6,
                       tau_p=4, tau_c=200, placement="fig2"),
    # Desk-scale layout with users clustered under the panels so phase
    # optimization is material.
    "desk": dict(num_aps=2, antennas_per_ap=2, num_users=2, num_ris=2,
                 elements_per_ris=8, ris_grid_h=2, ris_grid_v=4, tau_p=2,
                 placement="cluster", box_x=120.0, box_y=100.0,
                 ris_height_min=35.0, ris_height_max=45.0),
}


_INT_KEYS = frozenset(name for name, f_ in ExperimentConfig.__dataclass_fields__.items()
                      if f_.type is int)
_STR_KEYS = frozenset(name for name, f_ in ExperimentConfig.__dataclass_fields__.items()
                      if f_.type is str)


def _parse_value(name: str, raw: str, line_no: int):
    raw = raw.strip()
    try:
        if name == "sweep":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        if name in _INT_KEYS:
            return int(raw)
        if name in _STR_KEYS:
            return raw
        return None if raw.lower() == "none" else float(raw)
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: cannot parse {name} = {raw!r}") from exc


def load_config(path=None, preset: str | None = None, overrides: dict | None = None,
                require_all: bool = False) -> ExperimentConfig:
    """Read a flat key=value config, optionally on top of a named preset."""
    values: dict = {}
    if preset is not None:
        if preset not in _PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (choose from {sorted(_PRESETS)})")
        values.update(_PRESETS[preset])
    seen = set(values)
    if path is not None:
        with open(path, "r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise ConfigError(f"line {line_no}: expected 'key = value', got {text!r}")
                key, raw = (part.strip() for part in text.split("=", 1))
                if key not in ExperimentConfig.__dataclass_fields__:
                    raise ConfigError(f"line {line_no}: unknown key: {key}")
                values[key] = _parse_value(key, raw, line_no)
                seen.add(key)
    if require_all or (path is not None and preset is None):
        for key in _REQUIRED:
            if key not in seen:
                raise ConfigError(f"missing key: {key}")
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


# ---------------------------------------------------------------------------
# Scenario machinery
# ---------------------------------------------------------------------------

_FIG2_NODES = {
    # Published corners plus an invented, fixed completion of the layout.
    "aps": np.array([[500.0, 200.0, 30.0], [250.0, 390.0, 30.0], [20.0, 20.0, 30.0]]),
    "ris": np.array([[0.0, 200.0, 400.0], [400.0, 50.0, 200.0], [450.0, 350.0, 300.0]]),
    "users": np.array([[150.0, 150.0, 0.0], [220.0, 260.0, 0.0],
                       [330.0, 120.0, 0.0], [280.0, 330.0, 0.0]]),
}


def scene_inputs(cfg: ExperimentConfig, rng: np.random.Generator) -> dict:
    """Placement and angle draws, frozen so sweep points share geometry."""
    if cfg.placement == "fig2":
        ap = _FIG2_NODES["aps"][:cfg.num_aps]
        ris = _FIG2_NODES["ris"][:cfg.num_ris]
        users = _FIG2_NODES["users"][:cfg.num_users]
        if (len(ap) < cfg.num_aps or len(ris) < cfg.num_ris
                or len(users) < cfg.num_users):
            raise ConfigError("fig2 placement supports at most 3 APs, 3 panels, 4 users")
    elif cfg.placement == "cluster":
        ap, ris, users = _cluster_placement(cfg, cfg.num_users, cfg.num_ris, rng)
    else:
        ap, ris, users = uniform_placements(
            cfg.num_aps, cfg.num_ris, cfg.num_users, rng, box=(cfg.box_x, cfg.box_y),
            ap_height=cfg.ap_height, ris_height=(cfg.ris_height_min, cfg.ris_height_max))
    angles = AngleSet.draw(cfg.num_ris, cfg.num_aps, cfg.num_users, rng)
    return {"ap": ap, "ris": ris, "users": users, "angles": angles}


def assemble_scene(cfg: ExperimentConfig, inputs: dict,
                   num_ris: int | None = None, elements: int | None = None,
                   antennas: int | None = None):
    """Statistics/assignment/operator for one sweep point on frozen geometry."""
    r_count = cfg.num_ris if num_ris is None else num_ris
    m_elem = cfg.elements_per_ris if elements is None else elements
    n_ant = cfg.antennas_per_ap if antennas is None else antennas
    angles = inputs["angles"]
    if r_count < cfg.num_ris:
        angles = AngleSet(angles.aoa_ap[:r_count], angles.aod_ris_az[:r_count],
                          angles.aod_ris_el[:r_count], angles.aoa_ris_az[:r_count],
                          angles.aoa_ris_el[:r_count])
    grid = cfg.ris_grid(m_elem) if r_count else (1, m_elem)
    topo = SystemTopology(cfg.num_aps, n_ant, cfg.num_users, r_count, m_elem,
                          inputs["ap"], inputs["ris"][:r_count], inputs["users"],
                          ris_grid=grid, d_over_lambda=cfg.d_over_lambda)
    model = PathLossModel(cfg.reference_gain, cfg.gamma_exp, cfg.beta_exp, cfg.alpha_exp)
    stats = build_channel_statistics(topo, model, cfg.kappa, cfg.epsilon, angles)
    assignment = assign_pilots(cfg.num_users, cfg.tau_p)
    operator = lmmse_operator(stats, assignment, cfg.rho, cfg.tau_p, cfg.sigma2)
    return stats, assignment, operator


def build_scene(cfg: ExperimentConfig, rng: np.random.Generator,
                num_ris: int | None = None, elements: int | None = None,
                antennas: int | None = None):
    """One-shot scene: fresh geometry plus statistics for a single point."""
    return assemble_scene(cfg, scene_inputs(cfg, rng), num_ris=num_ris,
                          elements=elements, antennas=antennas)


def _cluster_placement(cfg, k_count, r_count, rng):
    """APs on one edge, users near the far edge, panels above the users."""
    box_x, box_y = cfg.box_x, cfg.box_y
    ap = np.column_stack([np.zeros(cfg.num_aps),
                          np.linspace(0.1, 0.9, cfg.num_aps) * box_y,
                          np.full(cfg.num_aps, cfg.ap_height)])
    users = np.column_stack([rng.uniform(0.7 * box_x, 0.9 * box_x, k_count),
                             rng.uniform(0.1 * box_y, 0.9 * box_y, k_count),
                             np.zeros(k_count)])
    if r_count:
        ris = np.column_stack([rng.uniform(0.65 * box_x, 0.95 * box_x, r_count),
                               rng.uniform(0.0, box_y, r_count),
                               rng.uniform(cfg.ris_height_min, cfg.ris_height_max, r_count)])
    else:
        ris = np.zeros((0, 3))
    return ap, ris, users


def make_environment(cfg: ExperimentConfig, stats, assignment, operator) -> RisEnvironment:
    return RisEnvironment(stats, operator, assignment, cfg.rho, cfg.sigma2,
                          cfg.tau_p, cfg.tau_c)


def optimize_phases(cfg: ExperimentConfig, env: RisEnvironment,
                    rng: np.random.Generator):
    """Run the configured optimizer; returns (best sum SE, trace or None)."""
    if env.stats.topology.num_ris == 0 or cfg.optimizer == "none":
        t = env.stats.topology
        return env.evaluate(PhaseConfig.uniform(t.num_ris, t.elements_per_ris, rng)), None
    if cfg.optimizer == "sac":
        sac_cfg = SacConfig(num_episodes=cfg.episodes,
                            steps_per_episode=cfg.steps_per_episode,
                            buffer_capacity=max(2000, cfg.episodes * cfg.steps_per_episode),
                            batch_size=32)
        _, best, trace, _ = sac_train(env, sac_cfg, rng)
        return best, trace
    if cfg.optimizer == "coordinate":
        _, best, _ = coordinate_ascent(env, cfg.ca_sweeps, cfg.ca_grid_points, rng)
        return best, None
    if cfg.optimizer == "random":
        _, best, _ = random_search(env, cfg.n_random_draws, rng)
        return best, None
    raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")


def chunked_nmse(stats, operator, assignment, phase, n_samples: int,
                 rng: np.random.Generator, n_chunks: int = 10):
    """Per-user NMSE with a chunk-based standard error."""
    per_chunk = max(n_samples // n_chunks, 500)
    values = []
    for _ in range(n_chunks):
        real = sample_realization(stats, phase, rng, size=per_chunk)
        y = simulate_pilot_phase(real, assignment, operator.rho, operator.tau_p,
                                 operator.sigma2, rng)
        qhat = estimate_channel(operator, y, stats, assignment, phase)
        err = real.q - qhat
        err_var = np.sum(np.var(err, axis=0), axis=(0, 2))
        q_var = np.sum(np.var(real.q, axis=0), axis=(0, 2))
        values.append((err_var / q_var).real)
    values = np.array(values)
    return values.mean(axis=0), values.std(axis=0, ddof=1) / np.sqrt(n_chunks)


# ---------------------------------------------------------------------------
# Scenario implementations: each returns (header, rows, extra_outputs)
# ---------------------------------------------------------------------------

def run_nmse_vs_m(cfg: ExperimentConfig):
    sweep = tuple(int(v) for v in cfg.sweep) or (4, 16, 36, 64)
    inputs = scene_inputs(cfg, np.random.default_rng([cfg.seed]))
    rows = []
    for idx, m_elem in enumerate(sweep):
        rng = np.random.default_rng([cfg.seed, idx])
        stats, assignment, operator = assemble_scene(cfg, inputs, elements=m_elem)
        phase = PhaseConfig.uniform(stats.topology.num_ris, m_elem, rng)
        value, err = chunked_nmse(stats, operator, assignment, phase,
                                  cfg.n_samples, rng)
        rows.append((m_elem, float(value.mean()), float(err.mean()),
                     *(float(v) for v in value)))
    header = ["m", "nmse_mean", "nmse_se"] + [f"nmse_user{k}" for k in range(cfg.num_users)]
    return header, rows, {}


def _se_sweep(cfg: ExperimentConfig, kind: str):
    sweep = cfg.sweep
    if not sweep:
        sweep = {"m": (4.0, 8.0, 16.0), "n": (2.0, 4.0, 8.0),
                 "power": (-5.0, 0.0, 5.0, 10.0)}[kind]
    per_seed_inputs = [scene_inputs(cfg, np.random.default_rng([cfg.seed, s]))
                       for s in range(cfg.n_seeds)]
    rows = []
    trace = None
    for idx, value in enumerate(sweep):
        opt_vals, rand_vals, no_ris_vals = [], [], []
        for s in range(cfg.n_seeds):
            rng = np.random.default_rng([cfg.seed, idx, s])
            kwargs = {}
            point_cfg = cfg
            if kind == "m":
                kwargs["elements"] = int(value)
            elif kind == "n":
                kwargs["antennas"] = int(value)
            else:
                point_cfg = ExperimentConfig(**{**cfg.to_dict(), "rho_dbm": float(value),
                                                "sweep": ()})
            inputs = per_seed_inputs[s]
            stats, assignment, operator = assemble_scene(point_cfg, inputs, **kwargs)
            env = make_environment(point_cfg, stats, assignment, operator)
            best, point_trace = optimize_phases(point_cfg, env, rng)
            if trace is None and point_trace is not None:
                trace = point_trace
            opt_vals.append(best)
            t = stats.topology
            draws = [env.evaluate(PhaseConfig.uniform(t.num_ris, t.elements_per_ris, rng))
                     for _ in range(5)]
            rand_vals.append(float(np.mean(draws)))
            stats0, assignment0, operator0 = assemble_scene(
                point_cfg, inputs, num_ris=0,
                **{k: v for k, v in kwargs.items() if k != "elements"})
            env0 = make_environment(point_cfg, stats0, assignment0, operator0)
            no_ris_vals.append(env0.evaluate(PhaseConfig.zeros(0, 1)))
        rows.append((value, float(np.mean(opt_vals)), float(np.mean(rand_vals)),
                     float(np.mean(no_ris_vals))))
    header = [kind if kind != "power" else "rho_dbm",
              "sum_se_optimized", "sum_se_random", "sum_se_no_ris"]
    return header, rows, {"trace": trace}


def run_se_vs_m(cfg):
    return _se_sweep(cfg, "m")


def run_se_vs_n(cfg):
    return _se_sweep(cfg, "n")


def run_se_vs_power(cfg):
    return _se_sweep(cfg, "power")


def run_se_cdf(cfg: ExperimentConfig):
    rows = []
    trace = None
    for idx in range(cfg.n_placements):
        rng = np.random.default_rng([cfg.seed, idx])
        stats, assignment, operator = build_scene(cfg, rng)
        env = make_environment(cfg, stats, assignment, operator)
        best, trace_idx = optimize_phases(cfg, env, rng)
        if trace is None and trace_idx is not None:
            trace = trace_idx
        t = stats.topology
        draws = [env.evaluate(PhaseConfig.uniform(t.num_ris, t.elements_per_ris, rng))
                 for _ in range(5)]
        stats0, assignment0, operator0 = build_scene(cfg, np.random.default_rng([cfg.seed, idx]),
                                                     num_ris=0)
        env0 = make_environment(cfg, stats0, assignment0, operator0)
        rows.append((idx, best, float(np.mean(draws)), env0.evaluate(PhaseConfig.zeros(0, 1))))
    header = ["placement", "sum_se_optimized", "sum_se_random", "sum_se_no_ris"]
    return header, rows, {"trace": trace}


def run_centralized_compare(cfg: ExperimentConfig):
    rows = []
    for s in range(cfg.n_seeds):
        rng = np.random.default_rng([cfg.seed, s])
        stats, assignment, operator = build_scene(cfg, rng)
        env = make_environment(cfg, stats, assignment, operator)
        best, _ = optimize_phases(cfg, env, rng)
        t = stats.topology
        phase = PhaseConfig.uniform(t.num_ris, t.elements_per_ris, rng)
        real = sample_realization(stats, phase, rng, size=max(cfg.n_samples // 100, 200))
        se_inst = centralized_instantaneous_se(real, cfg.rho_s, cfg.sigma2,
                                               cfg.tau_p, cfg.tau_c)
        rows.append((s, best, float(se_inst.sum(axis=-1).mean())))
    header = ["seed", "sum_se_two_timescale", "sum_se_centralized"]
    return header, rows, {}


def run_validate_closed_form(cfg: ExperimentConfig):
    from .closed_form import expected_w, helper_scalars, moment_set
    rng = np.random.default_rng([cfg.seed, 0])
    stats, assignment, operator = build_scene(cfg, rng)
    t = stats.topology
    phase = PhaseConfig.uniform(t.num_ris, t.elements_per_ris, rng)
    helpers = helper_scalars(stats, operator, phase)
    rows = []
    for k in range(t.num_users):
        est = empirical_moments(stats, operator, phase, assignment, k,
                                cfg.n_samples, rng)
        moments = moment_set(helpers, k)
        for i in range(t.num_users):
            mc = est.second_moments[i]
            ratio = np.abs(moments.second_moments[i] - mc.value) \
                / np.maximum(mc.std_error, 1e-300)
            mc_w = est.expected_w[i]
            ratio_w = np.abs(expected_w(helpers, k, i) - mc_w.value) \
                / np.maximum(mc_w.std_error, 1e-300)
            rows.append((k, i, float(ratio_w.max()), float(ratio.max())))
        ratio_v = np.abs(moments.v_diag - est.v_diag.value) \
            / np.maximum(est.v_diag.std_error, 1e-300)
        rows.append((k, -1, float(ratio_v.max()), float(ratio_v.max())))
    header = ["k", "i", "max_se_ratio_first_moment", "max_se_ratio_second_moment"]
    return header, rows, {}


_RUNNERS = {
    "nmse-vs-m": run_nmse_vs_m,
    "se-vs-m": run_se_vs_m,
    "se-vs-n": run_se_vs_n,
    "se-vs-power": run_se_vs_power,
    "se-cdf": run_se_cdf,
    "centralized-compare": run_centralized_compare,
    "validate-closed-form": run_validate_closed_form,
}


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------

def format_cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def emit_csv(header, rows, path):
    lines = [",".join(header)]
    lines += [",".join(format_cell(cell) for cell in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def emit_manifest(run_info: dict, path):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(run_info, handle, indent=2, sort_keys=True)
        handle.write("\n")


def content_hash(cfg: ExperimentConfig, scenario: str) -> str:
    payload = json.dumps({"scenario": scenario, "config": cfg.to_dict(),
                          "version": __version__}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def run_scenario(scenario: str, cfg: ExperimentConfig, out_dir, plots: bool = True) -> dict:
    """Execute a scenario and write <scenario>.csv, manifest.json and the
    report figures into out_dir. Returns the manifest dictionary."""
    if scenario not in _RUNNERS:
        raise ConfigError(f"unknown scenario {scenario!r} (choose from {SCENARIOS})")
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    header, rows, extra = _RUNNERS[scenario](cfg)
    csv_path = out / f"{scenario}.csv"
    emit_csv(header, rows, csv_path)
    trace = extra.get("trace")
    if trace is not None:
        emit_csv(list(trace.columns), trace.rows, out / "trace.csv")
    manifest = {
        "scenario": scenario,
        "config": cfg.to_dict(),
        "master_seed": cfg.seed,
        "point_seeds": [[cfg.seed, idx] for idx in range(len(rows))],
        "wall_clock_s": round(time.time() - start, 3),
        "content_hash": content_hash(cfg, scenario),
        "version": __version__,
        "outputs": [csv_path.name] + (["trace.csv"] if trace is not None else []),
    }
    if plots:
        from .plots import render_scenario
        figures = render_scenario(scenario, header, rows, out)
        manifest["outputs"] += figures
    emit_manifest(manifest, out / "manifest.json")
    return manifest
