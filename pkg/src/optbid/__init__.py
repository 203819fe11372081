"""Optimal constant and proportion-based bidding for point-process ad models."""

from .model import (
    FIRST_PRICE,
    SECOND_PRICE,
    AuctionRule,
    Channel,
    Constant,
    Discrete,
    IntensityProfile,
    ModelError,
    PolicyTable,
    Purchase,
    SimEstimate,
    SocialDiscount,
    SocialPopulation,
    Subscription,
    Uniform,
)
from .solver import SolveMethod, SolveReport, SolverError
from .montecarlo import SimConfig, SimulationError

__version__ = "0.1.0"

__all__ = [
    "FIRST_PRICE", "SECOND_PRICE", "AuctionRule", "Channel", "Constant", "Discrete",
    "IntensityProfile", "ModelError", "PolicyTable", "Purchase", "SimEstimate",
    "SocialDiscount", "SocialPopulation", "Subscription", "Uniform", "SolveMethod",
    "SolveReport", "SolverError", "SimConfig", "SimulationError",
]
