"""Contract functionals ``g`` on paths over ``[0, T]``.

Payoffs are evaluated at the maturity grid index, so values beyond ``T``
(a flat extension, say) are ignored. Every contract evaluates a whole batch
of paths at once; calling the contract on a ``DiscretePath`` goes through
the same code with one row.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pathcore import DiscretePath, log_path, quadratic_variation

BatchPayoff = Callable[[np.ndarray, float], np.ndarray]


def grid_index(t: float, dt: float, what: str = "time") -> int:
    """Nearest grid index of ``t``; warns when ``t`` is off the grid."""
    k = int(round(t / dt))
    if not math.isclose(k * dt, t, rel_tol=1e-9, abs_tol=1e-12):
        warnings.warn(f"{what} {t} is not on the grid (step {dt}); snapped to {k * dt}", stacklevel=3)
    return k


@dataclass(frozen=True, eq=False)
class Contract:
    """A payoff functional with a label, a maturity and optional monitoring dates."""

    label: str
    maturity: float
    batch_payoff: BatchPayoff
    monitoring: tuple[float, ...] | None = None
    params: dict = field(default_factory=dict)
    path_payoff: Callable[[DiscretePath], float] | None = None

    def evaluate(self, paths: np.ndarray, dt: float) -> np.ndarray:
        """Payoff for each row of ``paths`` (shape ``(n, >= T/dt + 1)``)."""
        paths = np.atleast_2d(paths)
        n_mat = grid_index(self.maturity, dt, "maturity")
        if paths.shape[1] < n_mat + 1:
            raise ValueError(
                f"paths cover {(paths.shape[1] - 1) * dt} years, contract needs {self.maturity}"
            )
        return self.batch_payoff(paths[:, : n_mat + 1], dt)

    def __call__(self, path: DiscretePath) -> float:
        if self.path_payoff is not None:
            return float(self.path_payoff(path))
        return float(self.evaluate(path.values[None, :], path.grid_step)[0])

    def __repr__(self):
        return f"Contract({self.label!r}, maturity={self.maturity}, params={self.params})"


def european_call(K: float, maturity: float = 1.0) -> Contract:
    if not K > 0:
        raise ValueError(f"strike must be > 0, got {K}")
    return Contract(
        "european_call",
        maturity,
        lambda x, dt: np.maximum(x[:, -1] - K, 0.0),
        params={"strike": K},
    )


def forward(maturity: float = 1.0) -> Contract:
    """``g = x_T``: Delta 1, Gamma and Vega 0 under any driftless model."""
    return Contract("forward", maturity, lambda x, dt: x[:, -1].copy())


def constant(c: float = 1.0, maturity: float = 1.0) -> Contract:
    return Contract("constant", maturity, lambda x, dt: np.full(x.shape[0], float(c)), params={"value": c})


def _log_qv(x: np.ndarray) -> np.ndarray:
    if np.any(x <= 0):
        raise ValueError("log quadratic variation needs strictly positive paths")
    return np.sum(np.diff(np.log(x), axis=1) ** 2, axis=1)


def vko_call(K: float, H: float, maturity: float = 1.0) -> Contract:
    """Call knocked out once the realized QV of the log-price reaches ``H``.

    ``H = math.inf`` disables the barrier.
    """
    if not K > 0 or not H > 0:
        raise ValueError(f"strike and barrier must be > 0, got K={K}, H={H}")

    def batch(x, dt):
        alive = _log_qv(x) < H
        return np.where(alive, np.maximum(x[:, -1] - K, 0.0), 0.0)

    def single(path: DiscretePath) -> float:
        n = grid_index(maturity, path.grid_step, "maturity")
        p = path if n == path.n_steps else path.restrict(n)
        qv = quadratic_variation(log_path(p))
        return max(p.terminal - K, 0.0) if qv < H else 0.0

    return Contract("vko_call", maturity, batch, params={"strike": K, "barrier": H}, path_payoff=single)


def _trapezoid_rows(x: np.ndarray, dt: float) -> np.ndarray:
    if x.shape[1] < 2:
        return np.zeros(x.shape[0])
    return dt * (np.sum(x[:, 1:-1], axis=1) + 0.5 * (x[:, 0] + x[:, -1]))


def asian_forward_start(t1: float, maturity: float = 1.0) -> Contract:
    """Floating-strike call on the average over ``[t1, T]``: ``(x_T - avg)^+``."""
    if not 0 < t1 < maturity:
        raise ValueError(f"need 0 < t1 < T, got t1={t1}, T={maturity}")

    def batch(x, dt):
        k1 = grid_index(t1, dt, "t1")
        window = (x.shape[1] - 1 - k1) * dt
        avg = _trapezoid_rows(x[:, k1:], dt) / window
        return np.maximum(x[:, -1] - avg, 0.0)

    return Contract("asian_forward_start", maturity, batch, params={"t1": t1})


def average_price(strike: float | None = None, maturity: float = 1.0, rule: str = "left") -> Contract:
    """Fixed-strike average ``(1/T) int_0^T x dt``, optionally ``(avg - K)^+``.

    Without a strike the payoff is the (linear) average itself. The default
    left-point rule gives every grid value before ``T`` the same weight, so
    the Lie bracket of the linear average is exactly ``1/T`` at every grid
    time; ``rule="trapezoid"`` halves it at ``t = 0``.
    """
    if rule not in ("left", "trapezoid"):
        raise ValueError(f"unknown rule {rule!r}")

    def batch(x, dt):
        if rule == "left":
            integral = dt * np.sum(x[:, :-1], axis=1)
        else:
            integral = _trapezoid_rows(x, dt)
        avg = integral / maturity
        return avg if strike is None else np.maximum(avg - strike, 0.0)

    params = {"rule": rule} if strike is None else {"strike": strike, "rule": rule}
    return Contract("average_price", maturity, batch, params=params)


def discretely_monitored(
    phi: Callable[..., np.ndarray],
    times: Sequence[float],
    maturity: float | None = None,
    label: str = "discretely_monitored",
) -> Contract:
    """``g = phi(y_{t_1}, ..., y_{t_n})``; ``phi`` takes one array per date."""
    times = tuple(float(t) for t in times)
    if not times:
        raise ValueError("discretely monitored contract needs at least one monitoring time")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError(f"monitoring times must be strictly increasing, got {times}")
    T = times[-1] if maturity is None else maturity
    if times[0] <= 0 or times[-1] > T:
        raise ValueError(f"monitoring times must lie in (0, {T}]")

    def batch(x, dt):
        cols = [x[:, grid_index(t, dt, "monitoring time")] for t in times]
        return np.asarray(phi(*cols), dtype=float) * np.ones(x.shape[0])

    return Contract(label, T, batch, monitoring=times)


def two_date_call(K: float, t1: float, maturity: float = 1.0) -> Contract:
    """``((y_{t1} + y_T) / 2 - K)^+``."""
    c = discretely_monitored(
        lambda a, b: np.maximum(0.5 * (a + b) - K, 0.0), (t1, maturity), maturity, "two_date_call"
    )
    c.params.update(strike=K, t1=t1)
    return c


REGISTRY = {
    "european_call": lambda p, T: european_call(float(p["strike"]), T),
    "vko_call": lambda p, T: vko_call(float(p["strike"]), float(p.get("barrier", math.inf)), T),
    "asian_forward_start": lambda p, T: asian_forward_start(float(p["t1"]), T),
    "average_price": lambda p, T: average_price(
        float(p["strike"]) if "strike" in p else None, T, p.get("rule", "left")
    ),
    "two_date_call": lambda p, T: two_date_call(float(p["strike"]), float(p["t1"]), T),
    "forward": lambda p, T: forward(T),
    "constant": lambda p, T: constant(float(p.get("value", 1.0)), T),
}


def make_contract(label: str, params: dict, maturity: float) -> Contract:
    """Build a registered contract by label."""
    try:
        factory = REGISTRY[label]
    except KeyError:
        raise KeyError(f"unknown contract {label!r}; known: {sorted(REGISTRY)}") from None
    try:
        return factory(params, maturity)
    except KeyError as exc:
        raise KeyError(f"contract {label!r} is missing parameter {exc.args[0]!r}") from None
