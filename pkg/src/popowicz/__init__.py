"""Numerical laboratory for the coupled Camassa-Holm/Degasperis-Procesi system."""

from popowicz.spectral import (
    Field,
    Grid,
    HelmholtzKernel,
    dealias,
    derivative,
    helmholtz_forward,
    helmholtz_inverse,
    kernel_derivative_convolve,
    kernel_for,
)

__version__ = "0.1.0"

__all__ = [
    "Field",
    "Grid",
    "HelmholtzKernel",
    "dealias",
    "derivative",
    "helmholtz_forward",
    "helmholtz_inverse",
    "kernel_derivative_convolve",
    "kernel_for",
    "__version__",
]
