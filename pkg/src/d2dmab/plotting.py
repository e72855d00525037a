"""Matplotlib figures for regret, per-player bars and sum throughput.

Figures are written to files only (SVG by default); nothing is shown.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import aggregate  # noqa: E402

LABELS = {
    "ucb1": "UCB1",
    "mp_ucb1": "MP-UCB1",
    "dlf": "DLF",
    "kth_ucb1": "kth-UCB1",
    "exp3": "Exp3",
}
COLORS = {
    "ucb1": "#1565C0",
    "mp_ucb1": "#1565C0",
    "dlf": "#E65100",
    "kth_ucb1": "#2E7D32",
    "exp3": "#C62828",
}
REGRET_LABELS = {
    "regret_def2": "regret vs best arm",
    "regret_def3": "ranked regret",
    "regret_adv": "regret vs best arm in hindsight",
}


def setup_style():
    plt.rcParams.update({
        "font.size": 10,
        "axes.titlesize": 11,
        "axes.labelsize": 10,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "legend.frameon": False,
        "figure.figsize": (6.0, 4.0),
        "savefig.bbox": "tight",
        "svg.hashsalt": "d2dmab",
    })


def _save(fig, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fmt = os.path.splitext(path)[1].lstrip(".") or "svg"
    meta = {"Date": None} if fmt in ("svg", "pdf") else None
    fig.savefig(path, format=fmt, metadata=meta)
    plt.close(fig)
    return path


def plot_regret(kind, records, path):
    """Mean regret curves of one policy with a one-standard-error band."""
    fig, ax = plt.subplots()
    n = records[0].metrics.subframes
    for name, label in REGRET_LABELS.items():
        if getattr(records[0].metrics, name) is None:
            continue
        mean, se = aggregate([getattr(r.metrics, name) for r in records])
        line, = ax.plot(n, mean, label=label)
        ax.fill_between(n, mean - se, mean + se, color=line.get_color(), alpha=0.2, lw=0)
    ax.set_xlabel("subframe")
    ax.set_ylabel("regret")
    ax.set_title(f"Regret, {LABELS.get(kind, kind)} ({len(records)} runs)")
    ax.legend()
    return _save(fig, path)


def plot_bars(groups, metric, path):
    """Grouped per-player bars of ``collision_pct`` or ``fairness_pct``."""
    kinds = list(groups)
    n_players = len(getattr(groups[kinds[0]][0].metrics, metric))
    width = 0.8 / len(kinds)
    fig, ax = plt.subplots()
    x = np.arange(n_players)
    for i, kind in enumerate(kinds):
        mean, se = aggregate([getattr(r.metrics, metric) for r in groups[kind]])
        ax.bar(x + (i - (len(kinds) - 1) / 2) * width, mean, width, yerr=se,
               label=LABELS.get(kind, kind), color=COLORS.get(kind))
    ax.set_xticks(x, [f"D2D {d + 1}" for d in range(n_players)])
    ax.set_ylabel("percent of subframes")
    ax.set_title({"collision_pct": "Collision percentage",
                  "fairness_pct": "Fairness percentage"}.get(metric, metric))
    ax.legend()
    return _save(fig, path)


def plot_throughput(kind, records, path):
    """Mean D2D and CU sum rates against the CU target-rate reference."""
    fig, ax = plt.subplots()
    n = records[0].metrics.subframes
    d2d, _ = aggregate([r.metrics.sum_tput_d2d for r in records])
    cu, _ = aggregate([r.metrics.sum_tput_cu for r in records])
    ax.plot(n, d2d / 1e6, label="D2D players")
    ax.plot(n, cu / 1e6, label="reused CUs")
    ax.axhline(records[0].metrics.r_tgt / 1e6, color="0.4", ls="--", lw=1,
               label="single CU at target SINR")
    ax.set_xlabel("subframe")
    ax.set_ylabel("sum throughput (Mbit/s)")
    ax.set_title(f"Sum throughput, {LABELS.get(kind, kind)}")
    ax.legend()
    return _save(fig, path)


def render_all(groups, outdir, fmt="svg"):
    setup_style()
    paths = []
    for kind, recs in groups.items():
        paths.append(plot_regret(kind, recs, os.path.join(outdir, f"regret_{kind}.{fmt}")))
        paths.append(plot_throughput(kind, recs,
                                     os.path.join(outdir, f"throughput_{kind}.{fmt}")))
    paths.append(plot_bars(groups, "collision_pct", os.path.join(outdir, f"collisions.{fmt}")))
    paths.append(plot_bars(groups, "fairness_pct", os.path.join(outdir, f"fairness.{fmt}")))
    return paths
