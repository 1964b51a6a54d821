"""Estimator-style front end: fit Greeks on a simulated batch."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_batch, check_contract_horizon
from .greeks import _FORWARD_GREEK, GREEKS, _affine_fit, McEstimate, WeightSpec, delta_weight, gamma_weight, vega_weight


class WeightedGreeks(TransformerMixin, BaseEstimator):
    """Weighted-expectation Greeks of one contract.

    Parameters
    ----------
    contract : Contract
    model : VolatilityModel
        Needed for Vega only.
    greeks : tuple of str
        Subset of ``("price", "delta", "gamma", "vega")``.
    spec : WeightSpec, optional
        Delta weight; weakly when omitted.
    direction : callable, optional
        Vega direction ``u(t, x)``; ``None`` means ``u = 1``.
    control_variate : bool
        Use the forward as an affine control variate.

    Attributes
    ----------
    estimates_ : dict of McEstimate
    price_, delta_, gamma_, vega_ : float
        Point estimates for the requested Greeks.
    """

    def __init__(self, contract=None, model=None, greeks=("price", "delta"), spec=None,
                 direction=None, control_variate=False):
        self.contract = contract
        self.model = model
        self.greeks = greeks
        self.spec = spec
        self.direction = direction
        self.control_variate = control_variate

    def _validate(self, X):
        if self.contract is None:
            raise ValueError("contract is required")
        unknown = set(self.greeks) - set(GREEKS)
        if unknown:
            raise ValueError(f"unknown greeks {sorted(unknown)}")
        if "vega" in self.greeks and self.model is None:
            raise ValueError("vega needs the model")
        X = check_batch(X)
        check_contract_horizon(self.contract, X)
        return X

    def transform(self, X):
        """Per-path samples, one column per requested Greek.

        The control-variate slope, when used, is the one found in ``fit``.
        """
        check_is_fitted(self, "estimates_")
        X = self._validate(X)
        return self._samples(X, self.cv_slope_)

    def _samples(self, X, slope):
        g = self.contract.evaluate(X.paths, X.grid_step)
        xT = X.paths[:, -1]
        cols = []
        for name in self.greeks:
            if name == "price":
                cols.append(g)
                continue
            if name == "delta":
                w = delta_weight(X, self.spec or WeightSpec.weakly(), self.contract)
            elif name == "gamma":
                w = gamma_weight(X)
            else:
                w = vega_weight(X, self.model, self.direction)
            if slope is None:
                cols.append(g * w)
            else:
                a, b = slope
                cols.append((g - a - b * xT) * w + b * _FORWARD_GREEK[name])
        return np.column_stack(cols)

    def fit(self, X, y=None):
        X = self._validate(X)
        if self.control_variate:
            g = self.contract.evaluate(X.paths, X.grid_step)
            self.cv_slope_ = _affine_fit(g, X.paths[:, -1])
        else:
            self.cv_slope_ = None
        samples = self._samples(X, self.cv_slope_)
        self.estimates_ = {
            name: McEstimate.from_samples(samples[:, k], X.master_seed, name)
            for k, name in enumerate(self.greeks)
        }
        for name, est in self.estimates_.items():
            setattr(self, f"{name}_", est.mean)
        self.n_paths_ = X.n_paths
        return self
