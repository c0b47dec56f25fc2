"""steinfit: parameter estimation for unnormalized densities by discriminative
likelihood (Stein density-ratio fitting), with asymptotic inference, baselines
and a Monte Carlo harness."""

from .dle import DleOpts, DleResult, dle_profile, estimate_dle
from .errors import SteinfitError
from .features import make_feature, stein_feature, stein_feature_matrix
from .models import make_model
from .sdre import SolverOpts, solve_sdre, solve_sdre_dual

__version__ = "0.1.0"

__all__ = [
    "DleOpts",
    "DleResult",
    "SolverOpts",
    "SteinfitError",
    "__version__",
    "dle_profile",
    "estimate_dle",
    "make_feature",
    "make_model",
    "solve_sdre",
    "solve_sdre_dual",
    "stein_feature",
    "stein_feature_matrix",
]
