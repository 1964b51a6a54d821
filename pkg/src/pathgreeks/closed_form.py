"""Black-Scholes closed forms (zero rates) used as oracles."""
from __future__ import annotations


import numpy as np
from scipy.stats import norm


def _d1(x, K, sigma, tau):
    return (np.log(x / K) + 0.5 * sigma * sigma * tau) / (sigma * np.sqrt(tau))


def call_price(x, K, sigma, tau):
    d1 = _d1(x, K, sigma, tau)
    return x * norm.cdf(d1) - K * norm.cdf(d1 - sigma * np.sqrt(tau))


def call_delta(x, K, sigma, tau):
    return norm.cdf(_d1(x, K, sigma, tau))


def call_gamma(x, K, sigma, tau):
    return norm.pdf(_d1(x, K, sigma, tau)) / (x * sigma * np.sqrt(tau))


def call_vega_variance(x, K, sigma, tau):
    """Derivative of the price with respect to ``sigma**2``."""
    return x * norm.pdf(_d1(x, K, sigma, tau)) * np.sqrt(tau) / (2 * sigma)


def call_delta_functional(K, sigma, maturity):
    """``(t, history) -> delta`` along simulated paths, for diagnostics."""

    def fn(t, history):
        tau = maturity - t
        if tau <= 0:
            raise ValueError("delta at maturity is not defined")
        return call_delta(history[:, -1], K, sigma, tau)

    return fn


__all__ = ["call_price", "call_delta", "call_gamma", "call_vega_variance", "call_delta_functional"]
