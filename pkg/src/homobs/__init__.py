"""Homogeneous finite-time observers for linear plants: design, verification and simulation."""
from .design import (FILTERING, PRESCRIBED, Homogenization, ObserverDesign, Plant,
                     design_observer, solve_homogenization)
from .dilation import Dilation, hom_norm, make_dilation
from .errors import ObserverError

__all__ = [
    "FILTERING", "PRESCRIBED", "Dilation", "Homogenization", "ObserverDesign",
    "ObserverError", "Plant", "design_observer", "hom_norm", "make_dilation",
    "solve_homogenization",
]
__version__ = "0.1.0"
