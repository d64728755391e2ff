"""Numerical toolkit for the fractional Laplacian."""

from .core import (
    Constant,
    Field,
    FracParams,
    Grid,
    HolderClass,
    Plane,
    QuadSpec,
    RadialPower,
    ShellTable,
    Sphere,
    Zero,
    holder_class,
    parse_exterior,
    read_grid,
    validate_params,
    write_grid,
)
from .errors import FraclapError
from .harness import (
    Domain,
    auxiliary_max,
    blowup_step,
    decay_certificate,
    g0_field,
    refined_vs_global_experiment,
    regularity_ratio,
    tail_mass,
)
from .kernels import bulk_solution_g0, normalization_constant, poisson_kernel, riesz_kernel
from .laplacian import evaluate, evaluate_many, rescale_field
from .norms import Region, dini_modulus, full_norm, holder_seminorm, lnl_seminorm
from .potentials import decompose, extension_field, poisson_extend, potential_field, potential_gradient, potential_w

__version__ = "0.1.0"
