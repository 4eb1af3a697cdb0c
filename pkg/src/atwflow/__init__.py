"""Grid simulator and verification harness for multiphase minimizing movements of curvature flow."""

from .energy import EnergyBreakdown, ForcingField, UnaryCosts, compile_unaries, evaluate_F, evaluate_FH, sigma
from .flow import ChainRecord, Trajectory, extract_gmm, holder_modulus, run_chain, run_chains, sup_displacement
from .grid import (
    GridSpec,
    LabelField,
    Neighborhood,
    SignedField,
    convex_hull_mask,
    hausdorff_distance,
    min_pairwise_distance,
    partition_perimeter,
    phase_perimeter,
    signed_distance,
    symmetric_difference_volume,
)
from .solver import StepResult, solve_binary, solve_exhaustive, solve_multilabel

__version__ = "0.1.0"
