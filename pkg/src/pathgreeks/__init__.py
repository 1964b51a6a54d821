"""Monte Carlo Greeks for path-dependent contracts via functional derivatives."""
from .pathcore import DiscretePath, bump, concatenate, flat_extension
from .funcderiv import DerivativeConfig, classify, lie_bracket
from .models import BlackScholes, LocalVol, QVFeedbackVol, bachelier, cev, simulate, simulate_from_prefix
from .payoffs import (
    Contract,
    asian_forward_start,
    average_price,
    european_call,
    make_contract,
    vko_call,
)
from .greeks import (
    AllocationFunction,
    McEstimate,
    MonteCarloConfig,
    WeightSpec,
    estimate_greeks,
    strong_correction,
    vega_surface,
)
from .estimator import WeightedGreeks

__version__ = "0.1.0"

__all__ = [
    "DiscretePath",
    "bump",
    "concatenate",
    "flat_extension",
    "DerivativeConfig",
    "classify",
    "lie_bracket",
    "BlackScholes",
    "LocalVol",
    "QVFeedbackVol",
    "bachelier",
    "cev",
    "simulate",
    "simulate_from_prefix",
    "Contract",
    "asian_forward_start",
    "average_price",
    "european_call",
    "make_contract",
    "vko_call",
    "AllocationFunction",
    "McEstimate",
    "MonteCarloConfig",
    "WeightSpec",
    "estimate_greeks",
    "strong_correction",
    "vega_surface",
    "WeightedGreeks",
]
