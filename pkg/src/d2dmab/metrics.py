"""Regret, collision, fairness and throughput measurements.

Everything here reads outcome logs only (selections, collision flags,
rewards, ranks, counterfactual rewards), never policy internals. Logs are
arrays with time on axis -2 for per-player quantities, shape
``(..., T, n_d2d)``, and on axis -3 for per-arm counterfactuals, shape
``(..., T, n_d2d, n_cu)``. Leading axes, if any, index independent runs.

``MetricsAccumulator`` consumes the same logs chunk by chunk and produces
series bit-identical to the whole-log functions.
"""

from dataclasses import dataclass

import numpy as np

from . import seeding
from .phy import cu_throughput, link_tables, reward


@dataclass(frozen=True)
class ArmMeansOracle:
    """Monte Carlo estimates of every player's mean reward on every CU."""

    mu: np.ndarray          # (n_d2d, n_cu)
    stderr: np.ndarray      # (n_d2d, n_cu)
    samples: int
    reward_model: str = "normalized"

    @property
    def best_arm(self):
        return np.argmax(self.mu, axis=1)

    @property
    def mu_star(self):
        return self.mu.max(axis=1)

    @property
    def sorted_means(self):
        return -np.sort(-self.mu, axis=1)


def estimate_arm_means(topology, large, phy, samples=100_000, seed=None,
                       reward_model="normalized", fading=True, chunk=4096):
    """Collision-free mean reward of each (player, CU) pair by simulation.

    Uses its own fading stream keyed by ``seed`` (the topology seed by
    default), so the oracle never shares draws with the runs it judges.
    """
    if samples < 2:
        raise ValueError("need at least two samples for a standard error")
    seed = topology.seed if seed is None else seed
    rng = seeding.stream(seed, seeding.ORACLE)
    nd, nc = large.n_d2d, large.n_cu
    total = np.zeros((nd, nc))
    total_sq = np.zeros((nd, nc))
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        if fading:
            mult = rng.standard_exponential((m, large.n_links))
        else:
            mult = np.ones((m, large.n_links))
        g_cB = large.cu_bs * mult[:, :nc]
        g_dB = large.d2d_bs * mult[:, nc:nc + nd]
        g_d = large.d2d * mult[:, nc + nd:nc + 2 * nd]
        g_cd = large.cu_d2d * mult[:, nc + 2 * nd:].reshape(m, nc, nd)
        _, r = link_tables(g_cB, g_dB, g_d, g_cd, phy)
        x = reward(r, phy, reward_model)
        total += x.sum(axis=0)
        total_sq += (x * x).sum(axis=0)
        done += m
    mu = total / samples
    var = np.maximum(total_sq - samples * mu * mu, 0.0) / (samples - 1)
    return ArmMeansOracle(mu=mu, stderr=np.sqrt(var / samples), samples=samples,
                          reward_model=reward_model)


# ------------------------------------------------------------ per-subframe terms

def _running_sum(x, carry, axis):
    """Cumulative sum along ``axis`` continuing from ``carry``.

    Prepending the carry keeps the additions in the same order as one
    cumulative sum over the whole log, so chunked results are exact.
    """
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    if carry is not None:
        x = np.concatenate([np.asarray(carry, dtype=float)[None], x])
        out = np.cumsum(x, axis=0)[1:]
    else:
        out = np.cumsum(x, axis=0)
    return np.moveaxis(out, 0, axis)


def _def3_terms(rewards, collided, ranks, sorted_means):
    target = np.take_along_axis(
        np.broadcast_to(sorted_means, ranks.shape + sorted_means.shape[-1:]),
        (np.asarray(ranks) - 1)[..., None], axis=-1)[..., 0]
    sole = np.where(collided, 0.0, rewards)
    return np.abs(target - sole).sum(axis=-1)


def _distinct(selections):
    """True for the first player on each selected CU in a subframe."""
    sel = np.asarray(selections)
    same = sel[..., :, None] == sel[..., None, :]
    earlier = np.tril(np.ones(same.shape[-2:], dtype=bool), -1)
    return ~np.any(same & earlier, axis=-1)


# --------------------------------------------------------- whole-log functions

def regret_def2(rewards, mu_star):
    """Best-fixed-arm regret ``n * sum(mu_star) - cumulative reward``."""
    rewards = np.asarray(rewards, dtype=float)
    cum = _running_sum(rewards.sum(axis=-1), None, -1)
    n = np.arange(1, rewards.shape[-2] + 1)
    return n * np.sum(mu_star) - cum


def regret_def3(rewards, collided, ranks, sorted_means):
    """Ranked regret: sum of ``|mu_(K-th best) - sole-selector reward|`` terms.

    ``ranks`` is the log of ranks (1-based), so this only applies to ranked
    policies.
    """
    if ranks is None:
        raise ValueError("ranked regret needs the rank log of a ranked policy")
    terms = _def3_terms(np.asarray(rewards, dtype=float), collided, ranks, sorted_means)
    return _running_sum(terms, None, -1)


def regret_adversarial(counterfactual, rewards):
    """Hindsight regret against each player's best fixed arm, summed over players.

    ``counterfactual[..., n, d, c]`` is the reward player ``d`` would have got
    from CU ``c`` in subframe ``n`` as its sole selector.
    """
    cf = _running_sum(counterfactual, None, -3)
    got = _running_sum(rewards, None, -2)
    return (cf.max(axis=-1) - got).sum(axis=-1)


def counterfactual_best_return(counterfactual):
    return np.asarray(counterfactual, dtype=float).sum(axis=-3).max(axis=-1)


def hindsight_best_arm(counterfactual):
    return np.argmax(np.asarray(counterfactual, dtype=float).sum(axis=-3), axis=-1)


def collision_percentage(collided):
    collided = np.asarray(collided)
    return 100.0 * collided.sum(axis=-2) / collided.shape[-2]


def fairness_percentage(selections, collided, best_arm):
    """Share of subframes each player was the sole selector of ``best_arm``."""
    sel = np.asarray(selections)
    hit = (sel == np.asarray(best_arm)[..., None, :]) & ~np.asarray(collided)
    return 100.0 * hit.sum(axis=-2) / sel.shape[-2]


def sum_throughputs(r_d, selections, cu_sinr, phy):
    """Per-subframe D2D sum rate and the sum rate of the distinct reused CUs.

    Returns ``(d2d_sum, cu_sum, r_tgt)``; ``r_tgt`` is the CU rate at exactly
    the SINR threshold, the reference level for the CU curve.
    """
    d2d = np.asarray(r_d, dtype=float).sum(axis=-1)
    cu = np.where(_distinct(selections), cu_throughput(np.asarray(cu_sinr), phy), 0.0).sum(axis=-1)
    return d2d, cu, phy.r_tgt


# ------------------------------------------------------------------ streaming

class MetricsAccumulator:
    """Chunked version of the whole-log functions for a batch of runs.

    Arrays passed to ``add`` have shape ``(runs, L, n_d2d[, n_cu])`` for a
    chunk of ``L`` consecutive subframes. ``add`` returns the per-subframe
    series for that chunk; totals needed at the horizon are kept.
    """

    def __init__(self, runs, oracle, phy, ranked=False, adversarial=False):
        nd, nc = oracle.mu.shape
        self.oracle = oracle
        self.phy = phy
        self.ranked = ranked
        self.adversarial = adversarial
        self.t = 0
        self._reward_sum = np.zeros(runs)
        self._def3_sum = np.zeros(runs)
        self._got = np.zeros((runs, nd))
        self._cf = np.zeros((runs, nd, nc))
        self.collisions = np.zeros((runs, nd), dtype=np.int64)
        self.sole_counts = np.zeros((runs, nd, nc), dtype=np.int64)

    def add(self, selections, collided, rewards, r_d, cu_sinr, counterfactual, ranks=None):
        length = selections.shape[1]
        n = np.arange(self.t + 1, self.t + length + 1)
        out = {}

        cum = _running_sum(rewards.sum(axis=-1), self._reward_sum, -1)
        self._reward_sum = cum[:, -1]
        out["regret_def2"] = n * np.sum(self.oracle.mu_star) - cum

        if self.ranked:
            terms = _def3_terms(rewards, collided, ranks, self.oracle.sorted_means)
            cum3 = _running_sum(terms, self._def3_sum, -1)
            self._def3_sum = cum3[:, -1]
            out["regret_def3"] = cum3

        if self.adversarial:
            cf = _running_sum(counterfactual, self._cf, -3)
            got = _running_sum(rewards, self._got, -2)
            self._cf = cf[:, -1]
            self._got = got[:, -1]
            out["regret_adv"] = (cf.max(axis=-1) - got).sum(axis=-1)
        else:
            self._cf = self._cf + counterfactual.sum(axis=1)

        d2d, cu, _ = sum_throughputs(r_d, selections, cu_sinr, self.phy)
        out["sum_tput_d2d"] = d2d
        out["sum_tput_cu"] = cu

        self.collisions += collided.sum(axis=1)
        runs, _, nd = selections.shape
        nc = self.sole_counts.shape[-1]
        # collided entries land in a discarded extra bin
        sole = np.where(collided, nc, selections)
        cell = (np.arange(runs)[:, None, None] * nd + np.arange(nd)) * (nc + 1) + sole
        counts = np.bincount(cell.ravel(), minlength=runs * nd * (nc + 1))
        self.sole_counts += counts.reshape(runs, nd, nc + 1)[..., :nc]
        self.t += length
        return out

    def collision_pct(self):
        return 100.0 * self.collisions / self.t

    def best_arm(self):
        """Oracle-best arm for stochastic rewards, hindsight-best for Exp3."""
        if self.adversarial:
            return np.argmax(self._cf, axis=-1)
        return np.broadcast_to(self.oracle.best_arm, self._cf.shape[:-1])

    def fairness_pct(self):
        best = self.best_arm()
        hits = np.take_along_axis(self.sole_counts, best[..., None], axis=-1)[..., 0]
        return 100.0 * hits / self.t

    def best_return(self):
        return self._cf.max(axis=-1)
