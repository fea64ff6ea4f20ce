"""Robust clustering of event sequences with contaminated events.

A mixture of temporal point processes fitted by a weighted EM algorithm in
which every inter-event interval is weighted by an influence-function score
of its compensator increment.
"""
__version__ = "0.1.0"

from .em import FitConfig, FitResult, MixtureState, fit, fit_unweighted  # noqa: E402
from .influence import RhoPair, phi_prime, phi_prime_scaled  # noqa: E402
from .intensity import BasisSpec, EventSequence, HorizonSpec  # noqa: E402
from .simulate import benchmark_design  # noqa: E402

__all__ = [
    "BasisSpec", "EventSequence", "FitConfig", "FitResult", "HorizonSpec", "MixtureState",
    "RhoPair", "fit", "fit_unweighted", "benchmark_design", "phi_prime", "phi_prime_scaled",
]
