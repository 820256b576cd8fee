"""Load-balancing evaluation for redundant distributed-storage allocations.

The package builds d-choice storage designs (replicated or XOR-coded),
samples demand vectors as uniform spacings, solves the optimal demand-split
problem (minimize the maximum node load), and estimates the robustness
probability and the load-imbalance factor, together with their closed-form
asymptotic predictors and stability conditions.
"""

__version__ = "0.1.0"

from .spacings import (
    RandomStream,
    SpacingSample,
    sample_uniform_spacings,
)
from .allocation import (
    Allocation,
    AllocationMatrices,
    build_block_design,
    build_clustering,
    build_cyclic,
    build_cyclic_xor,
    build_single_choice,
    to_matrices,
)
from .loadsolver import LoadSplit, min_max_load, min_max_load_flow
from .metrics import MetricEstimate, estimate_I, estimate_P_sigma, exact_p_sigma_k3

__all__ = [
    "__version__",
    "RandomStream",
    "SpacingSample",
    "sample_uniform_spacings",
    "Allocation",
    "AllocationMatrices",
    "build_single_choice",
    "build_clustering",
    "build_cyclic",
    "build_block_design",
    "build_cyclic_xor",
    "to_matrices",
    "LoadSplit",
    "min_max_load",
    "min_max_load_flow",
    "MetricEstimate",
    "estimate_P_sigma",
    "estimate_I",
    "exact_p_sigma_k3",
]
