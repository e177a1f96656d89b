"""Report figures rendered next to the CSV outputs (Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {"linewidth": 1.6, "markersize": 5}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path.name


def line_plot(x, series: dict, xlabel, ylabel, path, logy=False):
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for label, values in series.items():
        ax.plot(x, values, marker="o", label=label, **_STYLE)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.4)
    ax.legend()
    return _save(fig, path)


def cdf_plot(series: dict, xlabel, path):
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for label, values in series.items():
        data = np.sort(np.asarray(values))
        probs = np.arange(1, len(data) + 1) / len(data)
        ax.step(data, probs, where="post", label=label, **{"linewidth": 1.6})
    ax.set_xlabel(xlabel)
    ax.set_ylabel("CDF")
    ax.grid(True, alpha=0.4)
    ax.legend()
    return _save(fig, path)


def render_scenario(scenario, header, rows, out_dir):
    """Best-effort figure for each scenario family; returns file names."""
    cols = {name: np.array([row[idx] for row in rows])
            for idx, name in enumerate(header)}
    path = out_dir / f"{scenario}.png"
    if scenario == "nmse-vs-m":
        return [line_plot(cols["m"], {"average NMSE": cols["nmse_mean"]},
                          "panel elements M", "NMSE", path, logy=True)]
    if scenario in ("se-vs-m", "se-vs-n", "se-vs-power"):
        x_name = header[0]
        series = {"optimized": cols["sum_se_optimized"],
                  "random phases": cols["sum_se_random"],
                  "no panels": cols["sum_se_no_ris"]}
        return [line_plot(cols[x_name], series, x_name, "sum SE (bit/s/Hz)", path)]
    if scenario == "se-cdf":
        series = {"optimized": cols["sum_se_optimized"],
                  "random phases": cols["sum_se_random"],
                  "no panels": cols["sum_se_no_ris"]}
        return [cdf_plot(series, "sum SE (bit/s/Hz)", path)]
    if scenario == "centralized-compare":
        series = {"two-timescale": cols["sum_se_two_timescale"],
                  "centralized": cols["sum_se_centralized"]}
        return [cdf_plot(series, "sum SE (bit/s/Hz)", path)]
    if scenario == "validate-closed-form":
        fig, ax = plt.subplots(figsize=(5.2, 3.6))
        ax.bar(np.arange(len(rows)), cols["max_se_ratio_second_moment"])
        ax.axhline(3.0, color="k", linestyle="--", linewidth=1.0)
        ax.set_xlabel("(k, i) pair index")
        ax.set_ylabel("max |closed-form - MC| / SE")
        ax.grid(True, alpha=0.4)
        return [_save(fig, path)]
    return []
