"""Command line: ``simulate``, ``oracle`` and ``replay``."""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .harness import ConfigError, ExperimentConfig, load_config, run_experiment
from .metrics import estimate_arm_means
from .outputs import build_manifest, emit_outputs, sha256
from .policies import KINDS, PolicyConfig
from .topology import draw_large_scale, generate_topology

MULTI_PLAYER = ("mp_ucb1", "dlf", "kth_ucb1", "exp3")


def _policies(config, spec):
    if not spec:
        return [config.policy]
    kinds = MULTI_PLAYER if spec == "all" else [k.strip() for k in spec.split(",") if k.strip()]
    for k in kinds:
        if k not in KINDS:
            raise ConfigError(f"--policy: unknown kind {k!r}; choose from {', '.join(KINDS)}")
    return [replace(config.policy, kind=k) for k in kinds]


def _print_summary(result, out=sys.stdout):
    print("policy,player,collision_pct,fairness_pct", file=out)
    from .outputs import bars_rows, group_by_policy

    for kind, d, coll, fair in bars_rows(group_by_policy(result.all_records())):
        print(f"{kind},{d},{coll:.3f},{fair:.3f}", file=out)


def cmd_simulate(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.out:
        config = replace(config, output_dir=args.out)
    policies = _policies(config, args.policy)
    result = run_experiment(config.validate(), policies, workers=args.workers)
    paths = emit_outputs(result.all_records(), config.output_dir, plots=args.plots,
                         manifest=build_manifest(result))
    _print_summary(result)
    print(f"wrote {len(paths)} files to {config.output_dir}", file=sys.stderr)
    return 0


def cmd_oracle(args):
    config = load_config(args.config)
    topo = generate_topology(config.n_cu, config.n_d2d, config.cell_radius,
                             config.d2d_range, args.topology_seed)
    large = draw_large_scale(topo, config.shadowing_std_db, config.min_distance)
    phy = config.phy.build()
    oracle = estimate_arm_means(topo, large, phy, config.oracle_samples, args.topology_seed,
                                config.policy.reward_model, config.fading)
    print(f"# reward model: {oracle.reward_model}, samples per arm: {oracle.samples}")
    print("player,cu,mean,stderr,best")
    best = oracle.best_arm
    for d in range(oracle.mu.shape[0]):
        for c in range(oracle.mu.shape[1]):
            flag = "*" if best[d] == c else ""
            print(f"{d},{c},{oracle.mu[d, c]:.6f},{oracle.stderr[d, c]:.2e},{flag}")
    return 0


def cmd_replay(args):
    with open(args.manifest, encoding="utf-8") as f:
        manifest = json.load(f)
    config = ExperimentConfig.from_dict(manifest["config"])
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.manifest)), "replay")
    config = replace(config, output_dir=out)
    policies = [PolicyConfig(**p) for p in manifest["policies"]]
    result = run_experiment(config, policies, workers=args.workers)
    emit_outputs(result.all_records(), out, manifest=build_manifest(result))
    expected = manifest.get("csv_sha256", {})
    mismatched = [name for name, digest in sorted(expected.items())
                  if not os.path.exists(os.path.join(out, name))
                  or sha256(os.path.join(out, name)) != digest]
    if mismatched:
        print("replay differs in: " + ", ".join(mismatched))
        return 1
    print(f"replay reproduced {len(expected)} CSV files byte for byte in {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="d2dmab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a Monte Carlo experiment and write CSV tables")
    s.add_argument("--config", required=True)
    s.add_argument("--policy", help="policy kind, comma-separated kinds, or 'all'")
    s.add_argument("--seed", type=int, help="override master_seed")
    s.add_argument("--out", help="override output_dir")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--plots", action="store_true", help="also render SVG figures")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="print the arm-mean table of one topology")
    o.add_argument("--config", required=True)
    o.add_argument("--topology-seed", type=int, required=True)
    o.set_defaults(func=cmd_oracle)

    r = sub.add_parser("replay", help="re-run an experiment from its manifest and compare")
    r.add_argument("--manifest", required=True)
    r.add_argument("--out")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
