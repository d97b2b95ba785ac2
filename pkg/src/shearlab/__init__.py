"""Numerical laboratory for the linearized 2D Euler dynamics around monotone
shear flows in a periodic channel: singular resolvent solves, spectral-measure
construction, oscillatory time evolution, a direct time-stepping oracle,
large-time asymptotics, and weighted-norm measurements."""

__version__ = "0.1.0"

from . import errors
from .profiles import FourierConvention, ShearProfile, b_inverse, make_profile

__all__ = [
    "errors",
    "FourierConvention",
    "ShearProfile",
    "b_inverse",
    "make_profile",
    "__version__",
]
