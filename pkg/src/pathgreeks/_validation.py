"""Input checks shared by the estimator front end and the CLI."""
from __future__ import annotations

import math

import numpy as np

from .models import SimulatedBatch
from .payoffs import Contract


def check_positive(value, name: str) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a finite positive number, got {value}")
    return value


def check_batch(batch) -> SimulatedBatch:
    """Reject anything that is not a consistent, finite simulated batch."""
    if not isinstance(batch, SimulatedBatch):
        raise TypeError(f"expected a SimulatedBatch, got {type(batch).__name__}")
    n, cols = batch.paths.shape
    if n < 2:
        raise ValueError(f"need at least 2 paths, got {n}")
    for name, arr, width in (
        ("brownian", batch.brownian, cols - 1),
        ("tangent", batch.tangent, cols),
        ("sigma", batch.sigma, cols - 1),
        ("dsigma", batch.dsigma, cols - 1),
    ):
        if arr.shape != (n, width):
            raise ValueError(f"{name} has shape {arr.shape}, expected {(n, width)}")
    if not (np.all(np.isfinite(batch.paths)) and np.all(np.isfinite(batch.tangent))):
        raise ValueError("batch contains non-finite path or tangent values")
    return batch


def check_contract_horizon(contract: Contract, batch: SimulatedBatch) -> None:
    if batch.horizon < contract.maturity * (1 - 1e-9):
        raise ValueError(f"batch horizon {batch.horizon} is shorter than maturity {contract.maturity}")
