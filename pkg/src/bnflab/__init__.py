"""Truncated Birkhoff normal forms and spectral NLS experiments.

The package is organized bottom-up:

    spaces        weighted sequence spaces, states, convolution
    hamiltonians  sparse polynomial Hamiltonians and majorant norms
    lie           Poisson brackets, Lie series, Hamiltonian flows
    frequencies   perturbed frequency vectors and Diophantine checks
    smalldiv      small-divisor combinatorics and the homological equation
    constants     the explicit constants ledger
    engine        the iterative normal-form construction
    simulator     split-step spectral integrator and drift toys
    cli           batch experiment runner
"""

from .spaces import FourierState, WeightProfile, algebra_constant, convolve
from .hamiltonians import (
    HamiltonianBuilder,
    MajorantHamiltonian,
    MultiIndex,
    NormParams,
    coefficient_c,
    lower_norm,
    upper_norm,
)

__all__ = [
    "FourierState",
    "WeightProfile",
    "algebra_constant",
    "convolve",
    "MultiIndex",
    "MajorantHamiltonian",
    "HamiltonianBuilder",
    "NormParams",
    "coefficient_c",
    "upper_norm",
    "lower_norm",
]

__version__ = "0.1.0"
