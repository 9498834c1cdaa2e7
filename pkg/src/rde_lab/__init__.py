"""Recursive distributional equations, recursive tree processes and endogeny
on finite state spaces."""

from .measure_core import (
    Measure,
    SimplexAtomMeasure,
    StateSpace,
    TensorMeasure,
    canonicalize,
    diag_measure,
    diagonal_mass,
    first_moment,
    marginal,
    moment_measure,
    product,
    symmetry_check,
    tv_distance,
)
from .rde_model import (
    NoiseAtom,
    RdeSpec,
    apply_g,
    apply_T,
    apply_Tn,
    build_spec,
    bundled,
    check_g,
    iterate_T,
    load_spec,
)

__version__ = "0.1.0"
