"""Random walk and Brownian loop soups, their occupation fields and geometry."""

__version__ = "0.1.0"

from .lattice import (  # noqa: E402
    LatticeDomain,
    build_domain,
    green_function,
    killing_from_mass,
    precision_matrix,
    rectangle,
    transition_kernel,
)
from .loops import RootedLoop, UnrootedLoop, enumerate_loops, total_mass, truncation_tail  # noqa: E402
from .soup import sample_soups, thin_to_massive  # noqa: E402

__all__ = [
    "__version__",
    "LatticeDomain",
    "build_domain",
    "green_function",
    "killing_from_mass",
    "precision_matrix",
    "rectangle",
    "transition_kernel",
    "RootedLoop",
    "UnrootedLoop",
    "enumerate_loops",
    "total_mass",
    "truncation_tail",
    "sample_soups",
    "thin_to_massive",
]
