"""Markov renewal models of tick-by-tick prices."""

from .laws import EmpiricalKernelLaw, ExponentialLaw, GammaLaw, MixtureLaw, WeibullLaw
from .model import MrpModel, ReturnChainSpec, load_model, macroscopic_variance

__all__ = [
    "EmpiricalKernelLaw",
    "ExponentialLaw",
    "GammaLaw",
    "MixtureLaw",
    "WeibullLaw",
    "MrpModel",
    "ReturnChainSpec",
    "load_model",
    "macroscopic_variance",
]
