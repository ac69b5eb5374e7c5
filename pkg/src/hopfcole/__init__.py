"""Log-sum-exp layers as exact Hopf-Cole solutions."""

from .core import (HJNetwork, Metric, SupportSet, build_network, hopf_cole_solution, hopf_lax,
                   identity_residual, lse_forward)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "HJNetwork", "Metric", "SupportSet", "build_network", "hopf_cole_solution", "hopf_lax",
    "identity_residual", "lse_forward", "__version__",
]
