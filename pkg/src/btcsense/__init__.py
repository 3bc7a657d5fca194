"""Precision limits for frequency estimation in monitored boundary time crystals.

Computes global quantum-Fisher-information rates from Liouvillian spectra,
signal Fisher information from simulated photodetection / homodyne records at
arbitrary detector efficiency, inefficiency bounds, and finite-size critical
scaling exponents, for the driven collective-decay (superradiant) spin model.
"""

__version__ = "0.1.0"

from .spin import (
    SpinSector,
    SpinOperators,
    build_spin_operators,
    maximally_mixed,
    dark_state,
)
from .liouvillian import (
    Liouvillian,
    LiouvillianSpectrum,
    SuperspinSet,
    build_liouvillian,
    steady_state,
    spectral_decomposition,
    build_superspin,
    extreme_limit_generator,
    extreme_limit_eigenvalues,
)

__all__ = [
    "__version__",
    "SpinSector",
    "SpinOperators",
    "build_spin_operators",
    "maximally_mixed",
    "dark_state",
    "Liouvillian",
    "LiouvillianSpectrum",
    "SuperspinSet",
    "build_liouvillian",
    "steady_state",
    "spectral_decomposition",
    "build_superspin",
    "extreme_limit_generator",
    "extreme_limit_eigenvalues",
]
