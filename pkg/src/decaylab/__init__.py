"""Numerical toolkit for Fourier decay of self-conformal measures."""
__version__ = "0.1.0"

from .errors import DecayLabError, ValidationError  # noqa: E402
from .ifs_core import IFS, cantor, find_uni_quadruple, gauss24, induce, uniform, validate_ifs  # noqa: E402
from .measure import decay_exponent, fourier_cylinder, fourier_mc, self_conformal  # noqa: E402

__all__ = [
    "__version__", "DecayLabError", "ValidationError", "IFS", "cantor", "gauss24", "uniform",
    "validate_ifs", "induce", "find_uni_quadruple", "self_conformal", "fourier_cylinder",
    "fourier_mc", "decay_exponent",
]
