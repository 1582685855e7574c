"""Numerical experiments on long-time behaviour of linear kinetic equations.

Modules: ``stable`` (stable laws), ``histories`` (collision histories),
``gaussians`` (phase-space Gaussians), ``metrics`` (norms, heat benchmark, rate
fits), ``spectral`` (Fourier solvers for kinetic Fokker-Planck), ``bgk`` and
``nlfp`` (Wild-sum and particle solvers), ``concentration`` (bound checks) and
``cli``.
"""
from .errors import (AliasingDetected, ConfigInvalid, DegenerateFit, GridTooCoarse, InvalidStability,
                     KinlabError, OutOfTableRange, QuadratureNotConverged, RegimeViolated,
                     SingularTarget)

__all__ = ["AliasingDetected", "ConfigInvalid", "DegenerateFit", "GridTooCoarse", "InvalidStability",
           "KinlabError", "OutOfTableRange", "QuadratureNotConverged", "RegimeViolated", "SingularTarget"]
