"""Symmetric deformable image registration with fuzzy alpha-cut distances.

Images are fuzzy sets (memberships in [0, 1]); two cubic B-spline fields,
one per direction, are optimized jointly by stochastic gradient descent on
an average-minimal-distance objective with an inverse-consistency penalty.
"""
from .bspline import BSplineField, refine
from .config import LevelConfig, RegistrationConfig, parse_config, preset
from .engine import inverse_inconsistency_report, register, sgdm_step
from .image import FuzzyImage, GridDomain
from .objective import TransformPair

__all__ = [
    "BSplineField", "FuzzyImage", "GridDomain", "LevelConfig", "RegistrationConfig", "TransformPair",
    "inverse_inconsistency_report", "parse_config", "preset", "refine", "register", "sgdm_step",
]
__version__ = "0.1.0"
