"""Riemann solutions for three-phase Corey flow: wave-curve construction,
bifurcation-locus atlas, viscous-profile admissibility, and a direct
finite-difference cross-check.
"""

from .model import (  # noqa: F401
    DEFAULT_PARAMS,
    DomainError,
    ModelParams,
    NamedStates,
    classical_inequalities,
    eigen,
    eigen_fields,
    eigenvalues,
    flux,
    hessian,
    jacobian,
    named_states,
    state,
)

from . import hugoniot, loci, profiles, rarefaction, riemann  # noqa: F401

__version__ = "0.1.0"
