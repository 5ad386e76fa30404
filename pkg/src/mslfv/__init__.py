"""Spatial Lambda-Fleming-Viot simulation with fluctuating population size,
reaction-diffusion limits and Wright-Malecot identity predictions."""
__version__ = "0.1.0"

from .model import (  # noqa: F401
    UNIFORM,
    ConfigurationError,
    GrowthSpec,
    ModelParams,
    PopulationField,
    TypeLedger,
    ball,
    default_n_max,
    growth_eval,
    local_mean,
    validate_assumptions,
)

__all__ = [
    "UNIFORM", "ConfigurationError", "GrowthSpec", "ModelParams", "PopulationField", "TypeLedger",
    "ball", "default_n_max", "growth_eval", "local_mean", "validate_assumptions", "__version__",
]
