"""ARSV option markets: simulation, volatility filtering and quadratic hedging."""
from ._backend import BACKEND
from .model import (
    DEFAULT_PARAMS,
    MarketPath,
    MarketPaths,
    ModelParams,
    ParameterError,
    StationaryMoments,
    acf_squared_approx,
    acf_squared_exact,
    conditional_price_moments,
    gaussian_cumulant,
    simulate_paths,
    stationary_moments,
)

__version__ = "0.1.0"
