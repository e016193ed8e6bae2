"""Homogenization of thermoelasticity with evolving periodic microstructure.

Finite element solvers for the eps-periodic problem and its two-scale
limit, corrector-based error norms and a convergence-study driver.
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.0.0"

__all__ = ["__version__"]
