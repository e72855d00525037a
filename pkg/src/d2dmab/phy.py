"""BS-side arbitration, SINR-constrained D2D power control and rewards.

All functions work elementwise on numpy arrays so the same code serves a
single link, one subframe, or a whole block of subframes. Player and CU
indices are 0-based.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .topology import noise_power


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def linear_to_db(x):
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class PhyConfig:
    """Link-level constants in SI units (watts, hertz, bits/s, linear ratios)."""

    p_c: float          # CU transmit power
    p_max: float        # UE power cap
    gamma_tgt: float    # CU SINR threshold, linear
    bandwidth: float
    noise_bs: float
    noise_d2d: float
    r_norm: float       # throughput mapped to reward 1
    r_prime: float      # Bernoulli reward threshold

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"PhyConfig.{name} must be positive and finite, got {value}")
        if self.r_norm < self.r_prime:
            raise ValueError("PhyConfig.r_norm must be >= r_prime")

    @classmethod
    def from_units(cls, p_c_mw=250.0, p_max_mw=200.0, gamma_tgt_db=10.0,
                   bandwidth=180e3, noise_figure_bs_db=5.0, noise_figure_d2d_db=9.0,
                   noise_density_dbm=-174.0, sinr_cap_db=40.0, r_prime=64e3):
        """Build from configuration-file units; defaults reproduce the reference setup."""
        return cls(
            p_c=p_c_mw * 1e-3,
            p_max=p_max_mw * 1e-3,
            gamma_tgt=db_to_linear(gamma_tgt_db),
            bandwidth=bandwidth,
            noise_bs=noise_power(bandwidth, noise_figure_bs_db, noise_density_dbm),
            noise_d2d=noise_power(bandwidth, noise_figure_d2d_db, noise_density_dbm),
            r_norm=bandwidth * math.log2(1.0 + db_to_linear(sinr_cap_db)),
            r_prime=r_prime,
        )

    @property
    def r_tgt(self):
        """CU throughput when its SINR sits exactly at the threshold."""
        return self.bandwidth * math.log2(1.0 + self.gamma_tgt)


@dataclass
class SubframeOutcome:
    """What happened in one subframe, one entry per player."""

    n: int
    selections: np.ndarray
    collided: np.ndarray
    p_d: np.ndarray
    cu_sinr: np.ndarray     # SINR of the CU each player selected
    r_d: np.ndarray
    reward: np.ndarray


def resolve_collisions(selections, n_cu=None):
    """Flag every player whose CU was also picked by another player.

    Works over the last axis, so a batch of independent subframes or runs
    can be resolved at once.
    """
    sel = np.asarray(selections)
    if n_cu is not None and sel.size and (sel.min() < 0 or sel.max() >= n_cu):
        raise ValueError(f"selections must lie in [0, {n_cu}), got {sel}")
    same = sel[..., :, None] == sel[..., None, :]
    return same.sum(axis=-1) > 1


def cu_sinr(g_cB, g_dB, p_d, cfg):
    """SINR at the BS of a CU whose block is reused with D2D power ``p_d``."""
    return cfg.p_c * g_cB / (cfg.noise_bs + p_d * g_dB)


def cu_throughput(sinr, cfg):
    return cfg.bandwidth * np.log2(1.0 + sinr)


def allocate_power(g_cB, g_dB, cfg, collided=False, max_nudges=64):
    """Largest D2D power keeping the reused CU at or above ``gamma_tgt``, capped at ``p_max``.

    Zero on collision or when the CU's interference-free SNR does not exceed
    the threshold. Where rounding leaves the CU a hair below the threshold,
    the power is backed off by 1, 2, 4, ... ulps until it is not, so the
    protection holds exactly in floating point.
    """
    g_cB = np.asarray(g_cB, dtype=float)
    g_dB = np.asarray(g_dB, dtype=float)
    p = cfg.p_c * g_cB / (cfg.gamma_tgt * g_dB) - cfg.noise_bs / g_dB
    p = np.minimum(np.maximum(p, 0.0), cfg.p_max)
    p = np.where(collided, 0.0, p)
    g_cB, g_dB = np.broadcast_arrays(g_cB, g_dB)
    g_cB, g_dB = np.broadcast_to(g_cB, p.shape), np.broadcast_to(g_dB, p.shape)
    # only the few entries rounding put below the threshold are revisited
    idx = np.flatnonzero((p > 0) & (cu_sinr(g_cB, g_dB, p, cfg) < cfg.gamma_tgt))
    if idx.size:
        flat = p.reshape(-1)
        gc, gd = g_cB.reshape(-1)[idx], g_dB.reshape(-1)[idx]
        q = flat[idx]
        step = np.spacing(q)
        for _ in range(max_nudges):
            low = (q > 0) & (cu_sinr(gc, gd, q, cfg) < cfg.gamma_tgt)
            if not low.any():
                break
            q = np.where(low, np.maximum(q - step, 0.0), q)
            step = step * 2.0
        else:
            q = np.where(low, 0.0, q)
        flat[idx] = q
        p = flat.reshape(p.shape)
    return float(p) if p.ndim == 0 else p


def d2d_throughput(g_d, g_cd, p_d, cfg):
    """Shannon rate of a D2D link interfered by the CU it shares a block with."""
    sinr = p_d * g_d / (cfg.noise_d2d + cfg.p_c * g_cd)
    return cfg.bandwidth * np.log2(1.0 + sinr)


def reward_normalized(r_d, cfg):
    return np.minimum(np.asarray(r_d, dtype=float) / cfg.r_norm, 1.0)


def reward_bernoulli(r_d, cfg):
    return (np.asarray(r_d, dtype=float) >= cfg.r_prime).astype(float)


REWARD_MODELS = {
    "normalized": reward_normalized,
    "bernoulli": reward_bernoulli,
}


def reward(r_d, cfg, model):
    try:
        fn = REWARD_MODELS[model]
    except KeyError:
        raise ValueError(f"unknown reward model {model!r}") from None
    return fn(r_d, cfg)


def link_tables(g_cB, g_dB, g_d, g_cd, cfg):
    """Power and throughput of every (player, CU) pair as that CU's sole D2D reuser.

    Gains may carry leading (run, subframe) axes; the results have shape
    ``(..., n_d2d, n_cu)``.
    """
    p = allocate_power(g_cB[..., None, :], g_dB[..., :, None], cfg)
    r = d2d_throughput(g_d[..., :, None], np.swapaxes(g_cd, -1, -2), p, cfg)
    return p, r
