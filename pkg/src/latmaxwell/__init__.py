"""Spectral tools for the discrete anisotropic Maxwell operator on the 3-torus."""

from .errors import LatMaxwellError
from .model import MaterialParams, derive_params

__all__ = ["LatMaxwellError", "MaterialParams", "derive_params"]
__version__ = "0.1.0"
