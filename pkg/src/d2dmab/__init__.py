"""Bandit-based power and resource-block allocation for D2D pairs underlaying a macrocell."""

__version__ = "0.1.0"

from .harness import (  # noqa: E402
    ExperimentConfig,
    PhyParams,
    run_batch,
    run_experiment,
    run_simulation,
    run_subframe,
)
from .phy import PhyConfig  # noqa: E402
from .policies import PolicyConfig, make_policy  # noqa: E402
from .topology import draw_channel, draw_large_scale, generate_topology  # noqa: E402

__all__ = [
    "ExperimentConfig",
    "PhyConfig",
    "PhyParams",
    "PolicyConfig",
    "draw_channel",
    "draw_large_scale",
    "generate_topology",
    "make_policy",
    "run_batch",
    "run_experiment",
    "run_simulation",
    "run_subframe",
]
