"""Experiment configuration, the subframe loop and Monte Carlo orchestration.

``run_subframe`` is the literal per-subframe protocol (players select, the
BS arbitrates collisions and allocates power, players observe and update).
``run_batch`` executes the same protocol for many runs on one topology at
once: all runs' players are stacked as rows of one policy object and the
per-link power/throughput tables are computed a block of subframes at a
time. The tables depend only on the channel, so several policies can be
driven from the same draws without changing any of their results.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import seeding
from .metrics import MetricsAccumulator, estimate_arm_means
from .phy import (
    PhyConfig,
    SubframeOutcome,
    allocate_power,
    cu_sinr,
    d2d_throughput,
    link_tables,
    resolve_collisions,
    reward,
)
from .policies import PolicyConfig, make_policy
from .topology import FADING_BLOCK, draw_channels, draw_large_scale, generate_topology

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PhyParams:
    """Link constants as written in a configuration file."""

    p_c_mw: float = 250.0
    p_max_mw: float = 200.0
    gamma_tgt_db: float = 10.0
    bandwidth: float = 180e3
    noise_figure_bs_db: float = 5.0
    noise_figure_d2d_db: float = 9.0
    noise_density_dbm: float = -174.0
    sinr_cap_db: float = 40.0
    r_prime: float = 64e3

    def build(self):
        return PhyConfig.from_units(**asdict(self))


@dataclass(frozen=True)
class ExperimentConfig:
    n_cu: int = 20
    n_d2d: int = 5
    cell_radius: float = 250.0
    d2d_range: float = 50.0
    horizon: int = 100_000
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    phy: PhyParams = field(default_factory=PhyParams)
    mc_runs_per_topology: int = 50
    mc_topologies: int = 10
    master_seed: int = 0
    output_dir: str = "results"
    shadowing_std_db: float = 8.0
    min_distance: float = 3.0
    fading: bool = True
    oracle_samples: int = 100_000
    log_every: int = 100
    log_init_phase: bool = True

    def validate(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        for name in ("n_cu", "n_d2d", "horizon", "mc_runs_per_topology", "mc_topologies",
                     "log_every"):
            if int(getattr(self, name)) < 1:
                bad(name, f"must be >= 1, got {getattr(self, name)}")
        if self.n_cu < self.n_d2d:
            bad("n_cu", f"must be >= n_d2d ({self.n_d2d}), got {self.n_cu}")
        if self.horizon < self.n_cu:
            bad("horizon", f"must be >= n_cu ({self.n_cu}) to finish initialization, "
                           f"got {self.horizon}")
        for name in ("cell_radius", "d2d_range", "min_distance"):
            if not getattr(self, name) > 0:
                bad(name, f"must be positive, got {getattr(self, name)}")
        if self.shadowing_std_db < 0:
            bad("shadowing_std_db", "must be non-negative")
        if self.oracle_samples < 2:
            bad("oracle_samples", "must be >= 2")
        if self.master_seed < 0:
            bad("master_seed", "must be non-negative")
        try:
            self.phy.build()
        except ValueError as e:
            bad("phy", str(e))
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            if isinstance(data.get("policy"), dict):
                data["policy"] = PolicyConfig(**data["policy"])
            if isinstance(data.get("phy"), dict):
                data["phy"] = PhyParams(**data["phy"])
        except TypeError as e:
            raise ConfigError(str(e)) from None
        except ValueError as e:
            raise ConfigError(f"policy: {e}") from None
        return cls(**data).validate()


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return ExperimentConfig.from_dict(json.load(f))


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2)
        f.write("\n")


def check_policy_fits(config, policy):
    if policy.kind == "ucb1" and config.n_d2d != 1:
        raise ConfigError(
            "policy.kind: 'ucb1' is the single-player policy and needs n_d2d = 1 "
            f"(got {config.n_d2d}); use 'mp_ucb1' for several players")


def logged_subframes(horizon, n_cu, log_every, log_init_phase=True):
    """Subframes kept in the downsampled log: every ``log_every``-th, the last, and optionally the initialization window."""
    keep = set(range(log_every, horizon + 1, log_every))
    keep.add(horizon)
    if log_init_phase:
        keep.update(range(1, n_cu + 1))
    return np.array(sorted(keep))


@dataclass
class RunMetrics:
    subframes: np.ndarray
    regret_def2: np.ndarray
    regret_def3: object
    regret_adv: object
    sum_tput_d2d: np.ndarray
    sum_tput_cu: np.ndarray
    collision_pct: np.ndarray
    fairness_pct: np.ndarray
    counterfactual_best_return: np.ndarray
    r_tgt: float
    cu_reuses: int = 0
    cu_protection_violations: int = 0
    init_collisions: int = 0
    rank_violations: int = 0


@dataclass
class RunRecord:
    config: dict
    policy: dict
    topology_index: int
    run_index: int
    topology_seed: int
    run_seed: int
    outcomes: dict
    metrics: RunMetrics
    gain_checksum: float
    duration: float

    @property
    def kind(self):
        return self.policy["kind"]


# ----------------------------------------------------------- literal protocol

def run_subframe(policy, channel, phy, n):
    """One subframe for the players of ``policy`` (a single run).

    ``channel`` is the ``ChannelDraw`` of subframe ``n``.
    """
    sel = np.asarray(policy.select(n))
    players = policy.player_ids
    collided = resolve_collisions(sel, len(channel.g_cB))
    g_cB = channel.g_cB[sel]
    g_dB = channel.g_dB[players]
    p = np.atleast_1d(allocate_power(g_cB, g_dB, phy, collided))
    sinr = cu_sinr(g_cB, g_dB, p, phy)
    r = d2d_throughput(channel.g_d[players], channel.g_cd[sel, players], p, phy)
    x = reward(r, phy, policy.reward_model)
    policy.update(sel, x)
    return SubframeOutcome(n=n, selections=sel, collided=collided, p_d=p,
                           cu_sinr=sinr, r_d=r, reward=x)


# ------------------------------------------------------------ batched engine

def _blocks(horizon):
    """Subframe ranges ``[lo, hi)`` covering ``1..horizon``, aligned to fading blocks."""
    lo = 1
    while lo <= horizon:
        hi = min(horizon + 1, (lo // FADING_BLOCK + 1) * FADING_BLOCK)
        yield lo, hi
        lo = hi


def _take(table, sel):
    return np.take_along_axis(table, sel[..., None], axis=-1)[..., 0]


class _PolicyBatch:
    """One policy driven over a batch of runs, with its own metrics."""

    def __init__(self, cfg, config, run_seeds, oracle, phy, logged):
        self.cfg = cfg
        self.runs = len(run_seeds)
        self.n_d2d = config.n_d2d
        self.n_cu = config.n_cu
        players = np.tile(np.arange(config.n_d2d), self.runs)
        seeds = [seeding.derive_seed(s, seeding.POLICY, cfg.seed, d)
                 for s in run_seeds for d in range(config.n_d2d)]
        self.policy = make_policy(cfg, config.n_cu, players, n_players=config.n_d2d,
                                  seeds=seeds)
        self.phy = phy
        self.acc = MetricsAccumulator(self.runs, oracle, phy, ranked=cfg.ranked,
                                      adversarial=cfg.kind == "exp3")
        self.logged = logged
        self.log = {k: [] for k in ("selections", "collided", "p_d", "cu_sinr", "r_d",
                                    "reward", "ranks")}
        self.series = {}
        self.cu_reuses = np.zeros(self.runs, dtype=np.int64)
        self.violations = np.zeros(self.runs, dtype=np.int64)
        self.init_collisions = np.zeros(self.runs, dtype=np.int64)
        self.rank_violations = np.zeros(self.runs, dtype=np.int64)

    def advance(self, lo, hi, p_tab, r_tab, sinr_tab, snr):
        R, D = self.runs, self.n_d2d
        L = hi - lo
        x_tab = reward(r_tab, self.phy, self.cfg.reward_model)
        sel = np.empty((R, L, D), dtype=np.int64)
        col = np.empty((R, L, D), dtype=bool)
        ranks = np.empty((R, L, D), dtype=np.int64) if self.cfg.ranked else None
        policy = self.policy
        for i, n in enumerate(range(lo, hi)):
            s = policy.select(n).reshape(R, D)
            c = resolve_collisions(s)
            x = np.where(c, 0.0, _take(x_tab[:, i], s))
            policy.update(s.ravel(), x.ravel())
            sel[:, i] = s
            col[:, i] = c
            if ranks is not None:
                ranks[:, i] = policy.ranks.reshape(R, D)

        p_d = np.where(col, 0.0, _take(p_tab, sel))
        r_d = np.where(col, 0.0, _take(r_tab, sel))
        rewards = np.where(col, 0.0, _take(x_tab, sel))
        sinr = np.where(col, np.take_along_axis(snr, sel, axis=-1), _take(sinr_tab, sel))

        reused = p_d > 0
        floor = np.nextafter(self.phy.gamma_tgt, 0.0)
        self.cu_reuses += reused.sum(axis=(1, 2))
        self.violations += (reused & (sinr < floor)).sum(axis=(1, 2))
        n = np.arange(lo, hi)
        if self.cfg.kind != "exp3":
            self.init_collisions += col[:, n <= self.n_cu].sum(axis=(1, 2))
        if ranks is not None:
            bad = np.any(np.sort(ranks, axis=-1) != np.arange(1, D + 1), axis=-1)
            self.rank_violations += bad.sum(axis=1)

        out = self.acc.add(sel, col, rewards, r_d, sinr, x_tab, ranks)
        keep = np.isin(n, self.logged)
        for name, values in out.items():
            self.series.setdefault(name, []).append(values[:, keep])
        for name, values in (("selections", sel), ("collided", col), ("p_d", p_d),
                             ("cu_sinr", sinr), ("r_d", r_d), ("reward", rewards),
                             ("ranks", ranks)):
            if values is not None:
                self.log[name].append(values[:, keep])

    def records(self, config, topology_index, topology_seed, run_seeds, checksums, duration):
        series = {k: np.concatenate(v, axis=1) for k, v in self.series.items()}
        log_arrays = {k: np.concatenate(v, axis=1) for k, v in self.log.items() if v}
        collision = self.acc.collision_pct()
        fairness = self.acc.fairness_pct()
        best = self.acc.best_return()
        out = []
        for r, seed in enumerate(run_seeds):
            metrics = RunMetrics(
                subframes=self.logged,
                regret_def2=series["regret_def2"][r],
                regret_def3=series["regret_def3"][r] if "regret_def3" in series else None,
                regret_adv=series["regret_adv"][r] if "regret_adv" in series else None,
                sum_tput_d2d=series["sum_tput_d2d"][r],
                sum_tput_cu=series["sum_tput_cu"][r],
                collision_pct=collision[r],
                fairness_pct=fairness[r],
                counterfactual_best_return=best[r],
                r_tgt=self.phy.r_tgt,
                cu_reuses=int(self.cu_reuses[r]),
                cu_protection_violations=int(self.violations[r]),
                init_collisions=int(self.init_collisions[r]),
                rank_violations=int(self.rank_violations[r]),
            )
            out.append(RunRecord(
                config=config.to_dict(),
                policy=asdict(self.cfg),
                topology_index=topology_index,
                run_index=r,
                topology_seed=int(topology_seed),
                run_seed=int(seed),
                outcomes={k: v[r] for k, v in log_arrays.items()},
                metrics=metrics,
                gain_checksum=float(checksums[r]),
                duration=duration / len(run_seeds),
            ))
        return out


def run_batch(config, topology_seed, run_seeds, policies=None, topology_index=0):
    """Run every policy in ``policies`` for each run seed on one topology.

    Returns one list of ``RunRecord`` per policy, in ``run_seeds`` order.
    Each record is identical to what ``run_simulation`` produces for the same
    seeds.
    """
    config.validate()
    policies = list(policies) if policies else [config.policy]
    for cfg in policies:
        check_policy_fits(config, cfg)
    started = time.perf_counter()
    topo = generate_topology(config.n_cu, config.n_d2d, config.cell_radius,
                             config.d2d_range, topology_seed)
    large = draw_large_scale(topo, config.shadowing_std_db, config.min_distance)
    phy = config.phy.build()
    oracles = {}
    for cfg in policies:
        if cfg.reward_model not in oracles:
            oracles[cfg.reward_model] = estimate_arm_means(
                topo, large, phy, config.oracle_samples, topology_seed,
                cfg.reward_model, config.fading)
    logged = logged_subframes(config.horizon, config.n_cu, config.log_every,
                              config.log_init_phase)
    batches = [_PolicyBatch(cfg, config, run_seeds, oracles[cfg.reward_model], phy, logged)
               for cfg in policies]
    checksums = np.zeros(len(run_seeds))
    for lo, hi in _blocks(config.horizon):
        draws = [draw_channels(large, s, lo, hi, config.fading) for s in run_seeds]
        g_cB = np.stack([d.g_cB for d in draws])
        g_dB = np.stack([d.g_dB for d in draws])
        g_d = np.stack([d.g_d for d in draws])
        g_cd = np.stack([d.g_cd for d in draws])
        checksums += (g_cB.sum(axis=(1, 2)) + g_dB.sum(axis=(1, 2)) + g_d.sum(axis=(1, 2))
                      + g_cd.sum(axis=(1, 2, 3)))
        p_tab, r_tab = link_tables(g_cB, g_dB, g_d, g_cd, phy)
        sinr_tab = cu_sinr(g_cB[:, :, None, :], g_dB[:, :, :, None], p_tab, phy)
        snr = cu_sinr(g_cB, 0.0, 0.0, phy)
        for batch in batches:
            batch.advance(lo, hi, p_tab, r_tab, sinr_tab, snr)
    duration = time.perf_counter() - started
    return [b.records(config, topology_index, topology_seed, run_seeds, checksums, duration)
            for b in batches]


def run_simulation(config, topology_seed, run_seed, policy=None):
    """A single run of ``policy`` (default ``config.policy``)."""
    policy = policy or config.policy
    return run_batch(config, topology_seed, [run_seed], [policy])[0][0]


# --------------------------------------------------------------- experiments

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    policies: list
    topology_seeds: list
    run_seeds: list            # one list per topology
    records: dict              # policy index -> list of RunRecord, topology-major
    duration: float = 0.0

    def for_policy(self, kind):
        for i, cfg in enumerate(self.policies):
            if cfg.kind == kind:
                return self.records[i]
        raise KeyError(kind)

    def all_records(self):
        return [r for i in range(len(self.policies)) for r in self.records[i]]


def _topology_job(args):
    config, t, tseed, rseeds, policies = args
    try:
        return run_batch(config, tseed, rseeds, policies, topology_index=t)
    except Exception as e:
        raise RuntimeError(
            f"run failed: topology seed {tseed}, run seeds {rseeds}: {e!r}") from e


def experiment_seeds(config):
    tseeds = seeding.topology_seeds(config.master_seed, config.mc_topologies)
    rseeds = [seeding.run_seeds(t, config.mc_runs_per_topology) for t in tseeds]
    return tseeds, rseeds


def run_experiment(config, policies=None, workers=1):
    """All topologies x runs for each policy; any failure aborts with its seeds."""
    config.validate()
    policies = list(policies) if policies else [config.policy]
    for cfg in policies:
        check_policy_fits(config, cfg)
    tseeds, rseeds = experiment_seeds(config)
    jobs = [(config, t, ts, rs, policies) for t, (ts, rs) in enumerate(zip(tseeds, rseeds))]
    started = time.perf_counter()
    if workers > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            per_topology = pool.map(_topology_job, jobs)
    else:
        per_topology = []
        for job in jobs:
            per_topology.append(_topology_job(job))
            log.info("topology %d/%d done", len(per_topology), len(jobs))
    records = {i: [rec for topo in per_topology for rec in topo[i]]
               for i in range(len(policies))}
    return ExperimentResult(config, policies, tseeds, rseeds, records,
                            time.perf_counter() - started)


def aggregate(values):
    """Mean and standard error across runs (axis 0); stderr is 0 for one run."""
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=0)
    if len(values) < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=0, ddof=1) / np.sqrt(len(values))


def with_policy(config, kind):
    return replace(config, policy=replace(config.policy, kind=kind))
