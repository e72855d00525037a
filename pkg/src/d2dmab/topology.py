"""Cell geometry, large-scale attenuation and per-subframe fast fading.

Shadowing is quasi-static (one draw per link per topology); fast fading is
a unit-mean exponential power multiplier redrawn every subframe. Fading is
generated in fixed blocks of ``FADING_BLOCK`` subframes, each block keyed by
``(seed, block index)``, so the gains of subframe ``n`` are a pure function
of the fading seed and ``n`` regardless of how a caller walks through time.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import seeding

FADING_BLOCK = 1024
DEFAULT_MIN_DISTANCE = 3.0


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Topology:
    """Positions (meters) of the BS, the CUs and the D2D pairs."""

    cell_radius: float
    bs_position: np.ndarray
    cu_positions: np.ndarray
    d2d_tx_positions: np.ndarray
    d2d_rx_positions: np.ndarray
    seed: int
    d2d_range: float = 50.0

    def __post_init__(self):
        for name in ("bs_position", "cu_positions", "d2d_tx_positions", "d2d_rx_positions"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.cu_positions.ndim != 2 or self.d2d_tx_positions.ndim != 2:
            raise ValueError("position lists must be (count, 2) arrays")
        if self.d2d_tx_positions.shape != self.d2d_rx_positions.shape:
            raise ValueError("every D2D transmitter needs exactly one receiver")
        if not 1 <= self.n_d2d <= self.n_cu:
            raise ValueError(
                f"need n_cu >= n_d2d >= 1, got n_cu={self.n_cu}, n_d2d={self.n_d2d}")

    @property
    def n_cu(self):
        return len(self.cu_positions)

    @property
    def n_d2d(self):
        return len(self.d2d_tx_positions)

    def distances(self):
        """Link lengths: (cu->bs, d2d_tx->bs, d2d_tx->d2d_rx, cu->d2d_rx)."""
        bs = self.bs_position
        cu_bs = np.linalg.norm(self.cu_positions - bs, axis=1)
        d2d_bs = np.linalg.norm(self.d2d_tx_positions - bs, axis=1)
        d2d = np.linalg.norm(self.d2d_rx_positions - self.d2d_tx_positions, axis=1)
        cu_d2d = np.linalg.norm(
            self.cu_positions[:, None, :] - self.d2d_rx_positions[None, :, :], axis=2)
        return cu_bs, d2d_bs, d2d, cu_d2d

    def to_dict(self):
        return {
            "cell_radius": self.cell_radius,
            "bs_position": self.bs_position.tolist(),
            "cu_positions": self.cu_positions.tolist(),
            "d2d_tx_positions": self.d2d_tx_positions.tolist(),
            "d2d_rx_positions": self.d2d_rx_positions.tolist(),
            "seed": self.seed,
            "d2d_range": self.d2d_range,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def save_topology(topology, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(topology.to_dict(), f, indent=2)
        f.write("\n")


def load_topology(path):
    with open(path, encoding="utf-8") as f:
        return Topology.from_dict(json.load(f))


def _uniform_disc(rng, count, radius):
    # inverse-CDF radius keeps the density uniform over area
    r = radius * np.sqrt(rng.random(count))
    theta = 2.0 * np.pi * rng.random(count)
    return np.column_stack((r * np.cos(theta), r * np.sin(theta)))


def generate_topology(n_cu, n_d2d, cell_radius=250.0, d2d_range=50.0, seed=0):
    """Drop CUs and D2D transmitters uniformly in the cell, receivers near their transmitter."""
    if n_d2d < 1 or n_cu < n_d2d:
        raise ValueError(
            f"need n_cu >= n_d2d >= 1 (collision-free initialization), "
            f"got n_cu={n_cu}, n_d2d={n_d2d}")
    if cell_radius <= 0 or d2d_range <= 0:
        raise ValueError("cell_radius and d2d_range must be positive")
    rng = seeding.stream(seed, seeding.TOPOLOGY)
    cu = _uniform_disc(rng, n_cu, cell_radius)
    tx = _uniform_disc(rng, n_d2d, cell_radius)
    rx = tx + _uniform_disc(rng, n_d2d, d2d_range)
    return Topology(
        cell_radius=float(cell_radius),
        bs_position=np.zeros(2),
        cu_positions=cu,
        d2d_tx_positions=tx,
        d2d_rx_positions=rx,
        seed=int(seed),
        d2d_range=float(d2d_range),
    )


def path_loss_db(distance, min_distance=DEFAULT_MIN_DISTANCE):
    """Macrocell path loss ``128.1 + 37.6 log10(d_km)`` for ``distance`` in meters.

    Distances below ``min_distance`` are clamped to it. Works elementwise on
    arrays.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("path loss needs strictly positive distances")
    d = np.maximum(d, min_distance)
    pl = 128.1 + 37.6 * np.log10(d / 1000.0)
    return float(pl) if pl.ndim == 0 else pl


def noise_power(bandwidth, noise_figure, density=-174.0):
    """Thermal noise power in watts over ``bandwidth`` Hz.

    ``noise_figure`` is in dB and ``density`` in dBm/Hz.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    dbm = density + 10.0 * math.log10(bandwidth) + noise_figure
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class LargeScaleGains:
    """Linear path-loss-plus-shadowing power gains, fixed for a topology."""

    cu_bs: np.ndarray     # (n_cu,)
    d2d_bs: np.ndarray    # (n_d2d,)
    d2d: np.ndarray       # (n_d2d,)
    cu_d2d: np.ndarray    # (n_cu, n_d2d)
    shadowing_std_db: float = 8.0

    def __post_init__(self):
        for name in ("cu_bs", "d2d_bs", "d2d", "cu_d2d"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_cu(self):
        return len(self.cu_bs)

    @property
    def n_d2d(self):
        return len(self.d2d)

    @property
    def n_links(self):
        return self.n_cu + 2 * self.n_d2d + self.n_cu * self.n_d2d


def draw_large_scale(topology, shadowing_std_db=8.0, min_distance=DEFAULT_MIN_DISTANCE):
    """Path loss plus log-normal shadowing, one shadowing draw per link.

    Shadowing comes from the topology's own stream, so the same topology
    always yields the same gains.
    """
    if shadowing_std_db < 0:
        raise ValueError("shadowing_std_db must be non-negative")
    rng = seeding.stream(topology.seed, seeding.SHADOWING)
    gains = []
    for dist in topology.distances():
        pl = path_loss_db(dist, min_distance)
        shadow = rng.normal(0.0, 1.0, size=np.shape(dist)) * shadowing_std_db
        gains.append(10.0 ** (-(pl + shadow) / 10.0))
    cu_bs, d2d_bs, d2d, cu_d2d = gains
    return LargeScaleGains(cu_bs, d2d_bs, d2d, cu_d2d, float(shadowing_std_db))


@dataclass(frozen=True)
class ChannelDraw:
    """Instantaneous power gains.

    For a single subframe the arrays have the shapes of ``LargeScaleGains``
    and ``n`` is an int; for a block of subframes every array gains a
    leading time axis and ``n`` is the array of subframe indices.
    """

    g_cB: np.ndarray
    g_dB: np.ndarray
    g_d: np.ndarray
    g_cd: np.ndarray
    n: object


def fading_block(seed, block, n_links):
    """Unit-mean exponential multipliers for subframes ``[block*B, (block+1)*B)``."""
    rng = seeding.stream(seed, seeding.FADING, block)
    return rng.standard_exponential((FADING_BLOCK, n_links))


def _split_links(large, mult):
    # link order: cu->bs, d2d_tx->bs, d2d_tx->rx, cu->d2d_rx (row-major)
    nc, nd = large.n_cu, large.n_d2d
    lead = mult.shape[:-1]
    a = nc
    b = a + nd
    c = b + nd
    return (
        large.cu_bs * mult[..., :a],
        large.d2d_bs * mult[..., a:b],
        large.d2d * mult[..., b:c],
        large.cu_d2d * mult[..., c:].reshape(lead + (nc, nd)),
    )


def draw_channels(large, seed, start, stop, fading=True):
    """Gains for subframes ``start <= n < stop`` as one block ``ChannelDraw``."""
    if start < 0 or stop < start:
        raise ValueError("need 0 <= start <= stop")
    n = np.arange(start, stop)
    if not fading:
        mult = np.ones((len(n), large.n_links))
    else:
        parts = []
        for block in range(start // FADING_BLOCK, (stop - 1) // FADING_BLOCK + 1 if stop > start else 0):
            lo = max(start, block * FADING_BLOCK) - block * FADING_BLOCK
            hi = min(stop, (block + 1) * FADING_BLOCK) - block * FADING_BLOCK
            parts.append(fading_block(seed, block, large.n_links)[lo:hi])
        mult = np.concatenate(parts) if parts else np.empty((0, large.n_links))
    return ChannelDraw(*_split_links(large, mult), n=n)


def draw_channel(topology, large, n, seed, fading=True):
    """Gains of subframe ``n`` for fading seed ``seed``.

    ``topology`` is only used to check that ``large`` belongs to it.
    """
    if n < 0:
        raise ValueError("subframe index must be non-negative")
    if (large.n_cu, large.n_d2d) != (topology.n_cu, topology.n_d2d):
        raise ValueError("large-scale gains do not match the topology")
    block = draw_channels(large, seed, n, n + 1, fading)
    return ChannelDraw(block.g_cB[0], block.g_dB[0], block.g_d[0], block.g_cd[0], int(n))
