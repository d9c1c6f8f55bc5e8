"""Decay-rate calculus for quantified Tauberian theorems."""

__version__ = "0.1.0"

from . import contour_engine, counterexample, rate_algebra, rate_catalog, semigroup_lab  # noqa: E402
from .rate_algebra import RateSpec, RateSpecError, parse_short, right_inverse  # noqa: E402

__all__ = ["contour_engine", "counterexample", "rate_algebra", "rate_catalog", "semigroup_lab",
           "RateSpec", "RateSpecError", "parse_short", "right_inverse", "__version__"]
