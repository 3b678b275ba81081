"""Orbit growth, partial flags and shadows for discrete subgroups of SL_d(R).

Modules
-------
core
    Cartan and Iwasawa projections, root data, linear forms on a_theta.
orbit
    Generator sets and enumeration of word-length balls.
growth
    Poincare series, critical and directional exponents, limit cones.
flags
    Partial flags, attractors, shadows and their multiplicity.
conformal
    Patterson approximants, shadow-lemma and conical-mass probes, Hopf data.
typea
    Closed-form bounds in type A.
cli
    Command-line front end.
"""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
