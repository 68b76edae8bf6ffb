"""Trajectory-learning molecular dynamics engine for protein-ligand binding."""

__version__ = "0.1.0"

from .autodiff import (  # noqa: F401
    Adam,
    GradientError,
    ParamSet,
    SGD,
    ShapeError,
    Tensor,
    backward,
    elementwise,
    grad,
    grad_check,
    mean_agg,
    mlp,
    no_grad,
    optimizer_step,
)
