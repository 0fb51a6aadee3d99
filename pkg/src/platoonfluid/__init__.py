"""Stochastic fluid model of CAV platooning at a two-link highway bottleneck."""

from .model import HighwayParams, State, nominal_throughput

__version__ = "0.1.0"

__all__ = ["HighwayParams", "State", "nominal_throughput", "__version__"]
