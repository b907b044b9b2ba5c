"""Nested Operator Inference for polynomial reduced-order models."""

from .features import ModelForm, Term, condensed_product, feature_matrix, monomial_indices, num_monomials
from .fom import CubicHeatConfig, cubic_heat_snapshots, cubic_heat_solve, fom_inner_product_weight, linear_parametric_fom
from .nested import TrainingConfig, TrainingLog, expand_operators, select_candidate, train_nested, weight_grid
from .pod import PodBasis, SnapshotSet, compute_pod, project
from .regression import RomOperators, assemble, opinf_solve, solve_regularized, time_derivatives
from .rom import RomSolution, effectivity, integrate, reconstruction_error, rollout, zeta

__version__ = "0.1.0"

__all__ = [
    "ModelForm", "Term", "condensed_product", "feature_matrix", "monomial_indices", "num_monomials",
    "CubicHeatConfig", "cubic_heat_snapshots", "cubic_heat_solve", "fom_inner_product_weight",
    "linear_parametric_fom",
    "TrainingConfig", "TrainingLog", "expand_operators", "select_candidate", "train_nested", "weight_grid",
    "PodBasis", "SnapshotSet", "compute_pod", "project",
    "RomOperators", "assemble", "opinf_solve", "solve_regularized", "time_derivatives",
    "RomSolution", "effectivity", "integrate", "reconstruction_error", "rollout", "zeta",
]
