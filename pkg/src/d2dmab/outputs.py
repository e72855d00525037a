"""CSV tables and the run manifest.

Files written by ``emit_outputs``::

    regret_<policy>.csv       subframe, mean/stderr of each regret the policy has
    throughput_<policy>.csv   subframe, mean D2D and CU sum rates, r_tgt
    bars.csv                  policy, player, collision_pct, fairness_pct
    runs.csv                  one row per run: seeds, final regrets, averages, invariant counters
    per_topology/             the regret and throughput tables per topology
    plots/                    SVG figures (optional)
    manifest.json             config, seeds, code version, CSV digests

Floats are written with ``repr`` so a replay can be compared byte for byte.
"""

import csv
import hashlib
import json
import os
from collections import OrderedDict

import numpy as np

from . import __version__
from .harness import aggregate

REGRETS = ("regret_def2", "regret_def3", "regret_adv")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def group_by_policy(records):
    groups = OrderedDict()
    for rec in records:
        groups.setdefault(rec.kind, []).append(rec)
    return groups


def regret_table(records):
    """Header and rows of the aggregated regret table for one policy."""
    subframes = records[0].metrics.subframes
    header = ["subframe"]
    columns = [subframes]
    for name in REGRETS:
        if getattr(records[0].metrics, name) is None:
            continue
        mean, se = aggregate([getattr(r.metrics, name) for r in records])
        header += [f"mean_{name}", f"stderr_{name}"]
        columns += [mean, se]
    return header, list(zip(*columns))


def throughput_table(records):
    subframes = records[0].metrics.subframes
    d2d, _ = aggregate([r.metrics.sum_tput_d2d for r in records])
    cu, _ = aggregate([r.metrics.sum_tput_cu for r in records])
    r_tgt = np.full(len(subframes), records[0].metrics.r_tgt)
    header = ["subframe", "sum_tput_d2d_mean", "sum_tput_cu_mean", "r_tgt"]
    return header, list(zip(subframes, d2d, cu, r_tgt))


def bars_rows(groups):
    rows = []
    for kind, recs in groups.items():
        coll, _ = aggregate([r.metrics.collision_pct for r in recs])
        fair, _ = aggregate([r.metrics.fairness_pct for r in recs])
        for d in range(len(coll)):
            rows.append((kind, d, coll[d], fair[d]))
    return rows


RUN_COLUMNS = ["policy", "topology", "run", "topology_seed", "run_seed",
               "final_regret_def2", "final_regret_def3", "final_regret_adv",
               "collision_pct", "fairness_pct", "cu_reuses", "cu_protection_violations",
               "init_collisions", "rank_violations"]


def runs_rows(records):
    """Per-run summary; percentages are averaged over players, missing regrets left blank."""
    rows = []
    for r in records:
        m = r.metrics
        final = ["" if getattr(m, name) is None else getattr(m, name)[-1] for name in REGRETS]
        rows.append([r.kind, r.topology_index, r.run_index, r.topology_seed, r.run_seed,
                     *final, float(np.mean(m.collision_pct)), float(np.mean(m.fairness_pct)),
                     m.cu_reuses, m.cu_protection_violations, m.init_collisions,
                     m.rank_violations])
    return rows


def sha256(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def emit_outputs(records, output_dir, plots=False, manifest=None):
    """Write the tables (and optionally figures) for ``records``; returns written paths."""
    records = list(records)
    if not records:
        raise ValueError("no run records to emit")
    os.makedirs(output_dir, exist_ok=True)
    groups = group_by_policy(records)
    written = []

    def out(name, header, rows):
        path = os.path.join(output_dir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        _write_csv(path, header, rows)
        written.append(path)

    for kind, recs in groups.items():
        out(f"regret_{kind}.csv", *regret_table(recs))
        out(f"throughput_{kind}.csv", *throughput_table(recs))
        by_topo = OrderedDict()
        for r in recs:
            by_topo.setdefault(r.topology_index, []).append(r)
        for t, trecs in by_topo.items():
            out(os.path.join("per_topology", f"regret_{kind}_t{t}.csv"), *regret_table(trecs))
            out(os.path.join("per_topology", f"throughput_{kind}_t{t}.csv"),
                *throughput_table(trecs))
    out("bars.csv", ["policy", "player", "collision_pct", "fairness_pct"], bars_rows(groups))
    out("runs.csv", RUN_COLUMNS, runs_rows(records))

    if plots:
        from .plotting import render_all

        written += render_all(groups, os.path.join(output_dir, "plots"))

    if manifest is not None:
        manifest = dict(manifest)
        manifest["csv_sha256"] = {
            os.path.relpath(p, output_dir): sha256(p) for p in written if p.endswith(".csv")}
        path = os.path.join(output_dir, "manifest.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
        written.append(path)
    return written


def build_manifest(result):
    """Everything needed to reproduce ``result``."""
    from dataclasses import asdict

    phy = result.config.phy.build()
    return {
        "code_version": __version__,
        "config": result.config.to_dict(),
        "policies": [asdict(p) for p in result.policies],
        "master_seed": result.config.master_seed,
        "topology_seeds": result.topology_seeds,
        "run_seeds": result.run_seeds,
        "r_norm": phy.r_norm,
        "r_tgt": phy.r_tgt,
        "gain_checksums": {
            kind: [r.gain_checksum for r in recs]
            for kind, recs in group_by_policy(result.all_records()).items()},
        "duration_s": result.duration,
    }
