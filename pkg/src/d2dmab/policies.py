"""Bandit policies for D2D players choosing which CU block to reuse.

The index and probability functions operate on the last axis, so they
accept one player's per-arm vectors or a stack of players at once. Policy
objects hold a stack of independent players ("rows"): row ``i`` is player
``player_ids[i]`` and only ever sees its own selections and rewards, so a
policy with one row is exactly a single player's local policy and a
policy with many rows is many local policies advanced in lockstep.

Conventions: CUs and players are 0-based, subframes start at ``n = 1``,
ranks run from 1 to the number of players, ties go to the lowest CU.
"""

from dataclasses import dataclass

import numpy as np

from . import seeding

KINDS = ("ucb1", "mp_ucb1", "dlf", "kth_ucb1", "exp3")
RANKED_KINDS = ("dlf", "kth_ucb1")
UNIFORM_BLOCK = 1024


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "mp_ucb1"
    alpha: float = 0.01
    beta: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"policy.kind must be one of {KINDS}, got {self.kind!r}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"policy.alpha must lie in (0, 1], got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"policy.beta must be positive, got {self.beta}")

    @property
    def reward_model(self):
        return "bernoulli" if self.kind == "exp3" else "normalized"

    @property
    def ranked(self):
        return self.kind in RANKED_KINDS


@dataclass
class PolicyState:
    """Snapshot of one player's learning state."""

    player_id: int
    n: int
    y: np.ndarray
    mu_hat: np.ndarray
    w: np.ndarray
    p: np.ndarray
    rank: int


# ---------------------------------------------------------------- primitives

def init_selection(d, n, n_arms):
    """Round-robin CU for player ``d`` in initialization subframe ``n``.

    Distinct players get distinct CUs as long as there are no more players
    than CUs.
    """
    if not 1 <= n <= n_arms:
        raise ValueError(f"initialization covers 1 <= n <= {n_arms}, got n={n}")
    return (n + np.asarray(d) + 1) % n_arms


def assign_rank(d, n, n_players):
    """Rotating rank in ``1..n_players``; a permutation across players for every ``n``."""
    return (n + np.asarray(d) + 1) % n_players + 1


def update_mean(mu_prev, y_new, x):
    """Running mean after the ``y_new``-th observation ``x``."""
    return ((y_new - 1) * mu_prev + x) / y_new


def _radius(y, n):
    y = np.asarray(y)
    if np.any(y < 1):
        raise ValueError("confidence radius needs every arm sampled at least once")
    return np.sqrt(2.0 * np.log(n) / y)


def ucb1_index(mu_hat, y, n):
    return mu_hat + _radius(y, n)


def lcb_index(mu_hat, y, n):
    return mu_hat - _radius(y, n)


def top_k_mask(index, k):
    """Boolean mask of the ``k`` largest entries along the last axis.

    Ordering is by index descending, then CU ascending. ``k`` may be a scalar
    or one value per row.
    """
    index = np.asarray(index)
    n_arms = index.shape[-1]
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k > n_arms):
        raise ValueError(f"K must lie in [1, {n_arms}], got {k}")
    order = np.argsort(-index, axis=-1, kind="stable")
    pos = np.empty_like(order)
    np.put_along_axis(pos, order, np.broadcast_to(np.arange(n_arms), order.shape), axis=-1)
    return pos < k[..., None]


def _masked_argmin(values, mask):
    return np.argmin(np.where(mask, values, np.inf), axis=-1)


def select_ucb1(mu_hat, y, n):
    return np.argmax(ucb1_index(mu_hat, y, n), axis=-1)


def select_dlf(mu_hat, y, n, k):
    """Among the top-``k`` arms by UCB1 index, the one with the lowest LCB."""
    mask = top_k_mask(ucb1_index(mu_hat, y, n), k)
    return _masked_argmin(lcb_index(mu_hat, y, n), mask)


def epsilon(n, beta):
    return np.minimum(beta / n, 1.0)


def select_kth_ucb1(mu_hat, y, n, k, beta, uniforms):
    """Fair kth-UCB1 choice.

    ``uniforms[..., 0]`` decides exploration (probability ``min(beta/n, 1)``),
    ``uniforms[..., 1]`` picks the exploring arm uniformly from the top-``k``
    set; otherwise the arm of that set with the smallest UCB1 index is
    returned.
    """
    ucb = ucb1_index(mu_hat, y, n)
    k = np.broadcast_to(np.asarray(k), ucb.shape[:-1])
    mask = top_k_mask(ucb, k)
    greedy = _masked_argmin(ucb, mask)
    u = np.asarray(uniforms)
    order = np.argsort(-ucb, axis=-1, kind="stable")
    slot = np.minimum((u[..., 1] * k).astype(int), k - 1)
    explore = np.take_along_axis(order, slot[..., None], axis=-1)[..., 0]
    return np.where(u[..., 0] < epsilon(n, beta), explore, greedy)


def exp3_probabilities(w, alpha):
    w = np.asarray(w, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("Exp3 weights must be positive and finite")
    n_arms = w.shape[-1]
    return (1.0 - alpha) * w / w.sum(axis=-1, keepdims=True) + alpha / n_arms


def exp3_update(w, c, x, p, alpha):
    """New weights after reward ``x`` on arm ``c`` drawn with probabilities ``p``.

    Only the played arm moves; the importance-weighted reward of every other
    arm is zero.
    """
    w = np.array(w, dtype=float)
    p = np.asarray(p, dtype=float)
    n_arms = w.shape[-1]
    c = np.asarray(c)
    pc = np.take_along_axis(p, c[..., None], axis=-1)[..., 0]
    gain = np.exp(alpha * np.asarray(x) / (n_arms * pc))
    np.put_along_axis(w, c[..., None],
                      np.take_along_axis(w, c[..., None], axis=-1) * gain[..., None], axis=-1)
    return w


def sample_arm(p, u):
    """Inverse-CDF draw along the last axis of ``p`` with uniform ``u``."""
    cdf = np.cumsum(p, axis=-1)
    c = (cdf <= np.asarray(u)[..., None]).sum(axis=-1)
    return np.minimum(c, np.shape(p)[-1] - 1)


# ------------------------------------------------------------------ policies

class RowUniforms:
    """Per-row uniform stream, a pure function of (row seed, subframe)."""

    def __init__(self, seeds, width=2):
        self.seeds = [int(s) for s in seeds]
        self.width = width
        self._block = None
        self._data = None

    def __call__(self, n):
        block, i = divmod(int(n), UNIFORM_BLOCK)
        if block != self._block:
            self._data = np.stack([
                seeding.stream(s, seeding.POLICY, block).random((UNIFORM_BLOCK, self.width))
                for s in self.seeds
            ])
            self._block = block
        return self._data[:, i]


class Policy:
    """Base for a stack of independent players sharing one algorithm."""

    kind = None

    def __init__(self, n_arms, player_ids=(0,), n_players=None, seeds=None, cfg=None):
        self.n_arms = int(n_arms)
        self.player_ids = np.asarray(player_ids, dtype=int)
        self.n_players = int(n_players if n_players is not None else self.player_ids.max() + 1)
        if self.n_players > self.n_arms:
            raise ValueError("more players than CUs: initialization would collide")
        self.cfg = cfg or PolicyConfig(kind=self.kind)
        rows = len(self.player_ids)
        self._rows = np.arange(rows)
        self.y = np.zeros((rows, self.n_arms), dtype=np.int64)
        self.mu_hat = np.zeros((rows, self.n_arms))
        if seeds is None:
            seeds = self.player_ids
        self._uniforms = RowUniforms(seeds)
        self.n = 0
        self.ranks = None

    @property
    def rows(self):
        return len(self._rows)

    @property
    def reward_model(self):
        return self.cfg.reward_model

    def select(self, n):
        """Arms chosen by every row in subframe ``n``."""
        self.n = n
        if n <= self.n_arms:
            self.ranks = self._ranks(n)
            return init_selection(self.player_ids, n, self.n_arms)
        return self._choose(n)

    def _ranks(self, n):
        return None

    def _choose(self, n):
        raise NotImplementedError

    def update(self, arms, rewards):
        """Record the rewards the rows got from ``arms`` (collisions already zeroed)."""
        rows = self._rows
        y = self.y[rows, arms] + 1
        self.y[rows, arms] = y
        self.mu_hat[rows, arms] = update_mean(self.mu_hat[rows, arms], y, rewards)

    def step(self, arms, rewards, n_next, collided=None):
        """Observe the last subframe, then return the choices for ``n_next``."""
        rewards = np.asarray(rewards, dtype=float)
        if collided is not None:
            rewards = np.where(collided, 0.0, rewards)
        self.update(arms, rewards)
        return self.select(n_next)

    def state(self, row=0):
        p = np.full(self.n_arms, 1.0 / self.n_arms)
        return PolicyState(
            player_id=int(self.player_ids[row]),
            n=self.n,
            y=self.y[row].copy(),
            mu_hat=self.mu_hat[row].copy(),
            w=np.ones(self.n_arms),
            p=p,
            rank=None if self.ranks is None else int(self.ranks[row]),
        )


class UCB1(Policy):
    """Every player plays plain UCB1 on its own rewards."""

    kind = "ucb1"

    def _choose(self, n):
        return select_ucb1(self.mu_hat, self.y, n)


class MPUCB1(UCB1):
    kind = "mp_ucb1"


class DLF(Policy):
    """Rotating-rank policy: lowest LCB inside the top-K UCB1 set."""

    kind = "dlf"

    def _ranks(self, n):
        return assign_rank(self.player_ids, n, self.n_players)

    def _choose(self, n):
        self.ranks = self._ranks(n)
        return select_dlf(self.mu_hat, self.y, n, self.ranks)


class KthUCB1(DLF):
    """Rotating-rank kth-UCB1 with decaying uniform exploration of the top-K set."""

    kind = "kth_ucb1"

    def _choose(self, n):
        self.ranks = self._ranks(n)
        return select_kth_ucb1(self.mu_hat, self.y, n, self.ranks, self.cfg.beta,
                               self._uniforms(n))


class Exp3(Policy):
    """Independent Exp3 learners with Bernoulli rewards.

    Weights are kept as logarithms and rescaled by their maximum before use;
    probabilities depend only on weight ratios, so this is the same
    distribution without overflow over long horizons.
    """

    kind = "exp3"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.log_w = np.zeros((self.rows, self.n_arms))
        self.p = np.full((self.rows, self.n_arms), 1.0 / self.n_arms)

    @property
    def weights(self):
        return np.exp(self.log_w - self.log_w.max(axis=1, keepdims=True))

    def select(self, n):
        self.n = n
        self.p = exp3_probabilities(self.weights, self.cfg.alpha)
        return sample_arm(self.p, self._uniforms(n)[:, 0])

    def update(self, arms, rewards):
        rows = self._rows
        self.y[rows, arms] += 1
        pc = self.p[rows, arms]
        self.log_w[rows, arms] += self.cfg.alpha * np.asarray(rewards) / (self.n_arms * pc)

    def state(self, row=0):
        s = super().state(row)
        s.w = self.weights[row]
        s.p = self.p[row].copy()
        return s


POLICIES = {cls.kind: cls for cls in (UCB1, MPUCB1, DLF, KthUCB1, Exp3)}


def make_policy(cfg, n_arms, player_ids, n_players=None, seeds=None):
    return POLICIES[cfg.kind](n_arms, player_ids, n_players=n_players, seeds=seeds, cfg=cfg)
