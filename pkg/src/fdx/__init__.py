"""Numerical lab for the convergence rate of fast-diffusion flows toward their separable profiles."""

__version__ = "0.1.0"

from .grid import GridSpec, Field, DualField, build_grid
from .functionals import Functionals
from .profiles import Profile, build_profile
from .spectrum import Spectrum, EigenPair, weighted_spectrum
from .flow import Trajectory, evolve_rescaled, evolve_original, estimate_extinction_time, normalize_phase
from .experiments import ExperimentConfig, ExperimentResult, RateFit

__all__ = [
    "__version__",
    "GridSpec",
    "Field",
    "DualField",
    "build_grid",
    "Functionals",
    "Profile",
    "build_profile",
    "Spectrum",
    "EigenPair",
    "weighted_spectrum",
    "Trajectory",
    "evolve_rescaled",
    "evolve_original",
    "estimate_extinction_time",
    "normalize_phase",
    "ExperimentConfig",
    "ExperimentResult",
    "RateFit",
]
