"""Finite-difference lab for compressible viscoelastic (Oldroyd-type) flow."""

from .fields import (
    Boundary,
    Field,
    GridSpec,
    NormSpec,
    ScalarField,
    TensorField,
    VectorField,
    integrate,
    lq_norm,
    spacetime_norm,
    w1q_norm,
    w2q_norm,
)
from .dynamics import (
    FlowState,
    MaterialParams,
    PerturbState,
    Scheme,
    TimeStepperConfig,
    advance,
    rhs_full,
    rhs_perturb,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "Boundary", "Field", "GridSpec", "NormSpec", "ScalarField", "TensorField", "VectorField",
    "integrate", "lq_norm", "spacetime_norm", "w1q_norm", "w2q_norm",
    "FlowState", "MaterialParams", "PerturbState", "Scheme", "TimeStepperConfig",
    "advance", "rhs_full", "rhs_perturb", "simulate",
]
