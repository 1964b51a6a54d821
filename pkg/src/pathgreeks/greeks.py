"""Weighted-expectation Greeks, the strong path-dependence correction and FD oracles.

All Greeks are written as ``E[g(X) * W]`` with a payoff-independent weight
``W`` built from the tangent process ``z``, the volatility along the path
and the same Brownian increments that drove the simulation:

* Delta: ``pi = sum a_i z_i / sigma_i dw_i``.
* Gamma: ``xi_{s,T} = pi_s^2 - (dsigma_s / sigma_s) pi_s - 1 / ((T - s) sigma_s^2)``.
* Vega: ``1/2 sum_k u(t_k, x_k) shape(t_k, x_k) xi_{t_k,T} dt``.

Per-path samples from all blocks are concatenated in path order before any
reduction, so results do not depend on how blocks were spread over threads.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .funcderiv import DEFAULT_CONFIG, DerivativeConfig, bracket_corners, lie_bracket
from .models import (
    SimulatedBatch,
    VolatilityModel,
    map_blocks,
    simulate,
    simulate_from_prefix,
)
from .pathcore import DiscretePath, PathFunctional, bump
from .payoffs import Contract
from .rng import DEFAULT_BLOCK_SIZE, derive_seed

GREEKS = ("price", "delta", "gamma", "vega")


class WeightConstraintError(ValueError):
    """An allocation function violates the unit-integral constraints."""


class NonFiniteEstimate(ArithmeticError):
    """An estimator produced NaN or infinity."""


@dataclass(frozen=True)
class MonteCarloConfig:
    """Path count, grid and seed of one Monte Carlo run."""

    n_paths: int
    n_steps: int
    seed: int
    block_size: int = DEFAULT_BLOCK_SIZE
    threads: int = 1

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError(f"n_paths must be >= 2, got {self.n_paths}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.block_size < 1 or self.threads < 1:
            raise ValueError("block_size and threads must be >= 1")


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo mean with its standard error (``ddof=1``)."""

    mean: float
    std_error: float
    n_paths: int
    seed: int
    label: str = ""
    notes: str = ""

    @classmethod
    def from_samples(cls, samples, seed: int, label: str = "", notes: str = "") -> "McEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        if n < 2:
            raise ValueError(f"need at least 2 samples, got {n}")
        with np.errstate(invalid="ignore", over="ignore"):
            mean = float(np.mean(samples))
            se = float(np.std(samples, ddof=1) / math.sqrt(n))
        if not (math.isfinite(mean) and math.isfinite(se)):
            raise NonFiniteEstimate(f"{label or 'estimate'} is not finite (mean={mean}, se={se})")
        return cls(mean, se, n, int(seed), label, notes)

    def z_score(self, target: float, target_se: float = 0.0) -> float:
        """Distance to ``target`` in combined standard errors.

        Gaps at round-off level count as zero, so a degenerate estimate
        (all samples equal) is not rejected for its last few bits.
        """
        gap = abs(self.mean - target)
        if gap <= 1e-12 * max(1.0, abs(self.mean), abs(target)):
            return 0.0
        scale = math.hypot(self.std_error, target_se)
        return gap / scale if scale > 0 else math.inf

    def relative_se(self) -> float:
        return self.std_error / abs(self.mean) if self.mean else math.inf


# Allocation functions --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AllocationFunction:
    """Piecewise-constant ``a(t)`` with one value per grid step.

    Parameters
    ----------
    values : array_like
        ``values[i]`` is ``a`` on ``[t_i, t_{i+1})``, in 1/years.
    grid_step : float
        Width of each step.
    """

    values: np.ndarray
    grid_step: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size == 0 or not np.all(np.isfinite(v)):
            raise ValueError("allocation values must be finite and non-empty")
        if not self.grid_step > 0:
            raise ValueError("grid_step must be > 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_steps(self) -> int:
        return self.values.size

    def integral(self, t: float) -> float:
        """``int_0^t a`` as an exact step sum; ``t`` must be a grid time."""
        k = _exact_index(t, self.grid_step)
        return math.fsum(self.values[:k]) * self.grid_step

    @classmethod
    def uniform(cls, until: float, n_steps: int, horizon: float) -> "AllocationFunction":
        """``a = 1/until`` on ``[0, until)``, zero afterwards."""
        dt = horizon / n_steps
        k = _exact_index(until, dt)
        v = np.zeros(n_steps)
        v[:k] = 1.0 / until
        return cls(v, dt)

    @classmethod
    def from_callable(
        cls, fn: Callable[[np.ndarray], np.ndarray], n_steps: int, horizon: float
    ) -> "AllocationFunction":
        """Sample ``fn`` at step midpoints."""
        dt = horizon / n_steps
        mid = (np.arange(n_steps) + 0.5) * dt
        return cls(np.asarray(fn(mid), dtype=float) * np.ones(n_steps), dt)


def _exact_index(t: float, dt: float) -> int:
    k = int(round(t / dt))
    if not math.isclose(k * dt, t, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"time {t} is not on the grid with step {dt}")
    return k


@dataclass(frozen=True)
class WeightSpec:
    """Which allocation function enters the Delta weight.

    Use the constructors :meth:`weakly`, :meth:`discrete` and :meth:`delayed`.
    """

    kind: str = "weakly"
    allocation: AllocationFunction | None = None
    t1: float | None = None

    @classmethod
    def weakly(cls) -> "WeightSpec":
        return cls("weakly")

    @classmethod
    def discrete(cls, a: AllocationFunction) -> "WeightSpec":
        return cls("discrete", a)

    @classmethod
    def delayed(cls, a: AllocationFunction, t1: float) -> "WeightSpec":
        return cls("delayed", a, float(t1))

    def allocation_for(self, batch: SimulatedBatch, contract: Contract | None = None, tol: float = 1e-12):
        """Per-step allocation values on the batch grid, after validation."""
        N = batch.n_steps
        if self.kind == "weakly":
            v = np.zeros(N)
            v[batch.start_index :] = 1.0 / (batch.horizon - batch.start_time)
            return v
        if self.kind not in ("discrete", "delayed"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        a = self.allocation
        if a is None:
            raise ValueError(f"{self.kind} weight needs an allocation function")
        if a.n_steps != N or not math.isclose(a.grid_step, batch.grid_step, rel_tol=1e-12):
            raise ValueError("allocation grid does not match the simulation grid")
        if batch.start_index != 0:
            raise ValueError(f"{self.kind} weights are defined for simulations started at time 0")
        if self.kind == "discrete":
            times = contract.monitoring if contract is not None else None
            if not times:
                raise ValueError("discrete weight needs a contract with monitoring times")
            for t in times:
                total = a.integral(t)
                if abs(total - 1.0) > tol:
                    raise WeightConstraintError(
                        f"allocation violates int_0^{t:g} a dt = 1 (got {total:.15g})"
                    )
        else:
            total = a.integral(self.t1)
            if abs(total - 1.0) > tol:
                raise WeightConstraintError(
                    f"allocation violates int_0^t1 a dt = 1 with t1={self.t1:g} (got {total:.15g})"
                )
            k1 = _exact_index(self.t1, a.grid_step)
            if np.any(a.values[k1:] != 0):
                raise WeightConstraintError(f"allocation violates a = 0 on [t1, T] with t1={self.t1:g}")
        return np.asarray(a.values)


# Weights -----------------------------------------------------------------------


def _check_sigma(batch: SimulatedBatch, active: np.ndarray | None = None) -> np.ndarray:
    m = batch.start_index
    sig = batch.sigma[:, m:]
    if np.any(np.isnan(sig)):
        raise ValueError("volatility coefficients are missing from this batch")
    mask = sig <= 0
    if active is not None:
        mask &= active[m:][None, :] != 0
    if mask.any():
        row, col = np.argwhere(mask)[0]
        raise ValueError(f"sigma(X_t) <= 0 on path {batch.first_path + row} at step {m + col}")
    return sig


def weight_increments(batch: SimulatedBatch) -> np.ndarray:
    """``z_i / sigma_i * dw_i`` for steps from the start index on."""
    m = batch.start_index
    sig = _check_sigma(batch)
    return batch.tangent[:, m:-1] / sig * batch.brownian[:, m:]


def delta_weight(
    batch: SimulatedBatch, spec: WeightSpec | None = None, contract: Contract | None = None
) -> np.ndarray:
    """Per-path Delta weight ``pi`` (left-point sum over the simulated increments)."""
    spec = spec or WeightSpec.weakly()
    a = spec.allocation_for(batch, contract)
    m = batch.start_index
    sig = _check_sigma(batch, a)
    active = a[m:] != 0
    terms = np.zeros((batch.n_paths, batch.n_steps - m))
    terms[:, active] = batch.tangent[:, m:-1][:, active] / sig[:, active] * batch.brownian[:, m:][:, active]
    return terms @ a[m:]


def gamma_weights(batch: SimulatedBatch) -> np.ndarray:
    """``xi_{t_k,T}`` for every step ``k`` from the start index, shape ``(n, N - m)``.

    Column ``j`` belongs to time ``t_{m+j}`` and is normalised by the tangent
    at that time, i.e. the conditional Gamma weight for a restart there.
    """
    m = batch.start_index
    N = batch.n_steps
    inc = weight_increments(batch)
    eta = np.concatenate([np.zeros((batch.n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)
    tail = eta[:, -1:] - eta[:, :-1]
    tau = (N - np.arange(m, N)) * batch.grid_step
    z = batch.tangent[:, m:-1]
    sig = batch.sigma[:, m:]
    pi = tail / (tau * z)
    return pi * pi - (batch.dsigma[:, m:] / sig) * pi - 1.0 / (tau * sig * sig)


def gamma_weight(batch: SimulatedBatch) -> np.ndarray:
    """``xi_{s,T}`` at the batch start time ``s``."""
    m = batch.start_index
    inc = weight_increments(batch)
    tau = batch.horizon - batch.start_time
    pi = inc.sum(axis=1) / tau
    sig = batch.sigma[:, m]
    return pi * pi - (batch.dsigma[:, m] / sig) * pi - 1.0 / (tau * sig * sig)


def _direction_values(u, t: np.ndarray, x: np.ndarray) -> np.ndarray:
    if u is None:
        return np.ones_like(x)
    vals = np.asarray(u(t, x), dtype=float) * np.ones_like(x)
    if not np.all(np.isfinite(vals)):
        raise ValueError("vega direction u is not finite on visited states")
    return vals


def vega_weight(batch: SimulatedBatch, model: VolatilityModel, u=None) -> np.ndarray:
    """``1/2 sum_k u(t_k, x_k) shape(t_k, x_k) xi_{t_k,T} dt`` per path.

    ``u=None`` means ``u = 1``. ``shape`` is the model's variance shape, so
    for Black-Scholes ``u = 1`` differentiates with respect to ``sigma_bar**2``.
    """
    if model.kind == "path_dependent":
        raise ValueError("vega weights are only defined for local volatility models")
    m = batch.start_index
    xi = gamma_weights(batch)
    t = np.broadcast_to(batch.times[m:-1], xi.shape)
    x = batch.paths[:, m:-1]
    scale = _direction_values(u, t, x) * model.variance_shape(t, x)
    return 0.5 * batch.grid_step * np.sum(scale * xi, axis=1)


# Estimation --------------------------------------------------------------------


def _affine_fit(g: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Least-squares ``g ~ a + b x``; ``b = 0`` when ``x`` is constant."""
    xc = x - x.mean()
    var = float(np.dot(xc, xc))
    b = float(np.dot(xc, g - g.mean()) / var) if var > 0 else 0.0
    return float(g.mean() - b * x.mean()), b


# E[x_T W] for each weight: the Greeks of the forward contract
_FORWARD_GREEK = {"delta": 1.0, "gamma": 0.0, "vega": 0.0}


def weighted_samples(
    payoff: np.ndarray,
    weight: np.ndarray,
    greek: str,
    terminal: np.ndarray | None = None,
    control_variate: bool = False,
) -> np.ndarray:
    """Per-path samples whose mean estimates ``E[g W]``.

    With ``control_variate`` the payoff is replaced by its residual after an
    affine fit on ``x_T``; the forward's known Greek is added back, so the
    mean is unchanged in expectation and the variance drops.
    """
    if not control_variate:
        return payoff * weight
    if terminal is None:
        raise ValueError("control variate needs terminal values")
    a, b = _affine_fit(payoff, terminal)
    return (payoff - a - b * terminal) * weight + b * _FORWARD_GREEK[greek]


def _payoff(batch: SimulatedBatch, contract: Contract) -> np.ndarray:
    return contract.evaluate(batch.paths, batch.grid_step)


def _check_window(batch: SimulatedBatch) -> None:
    if batch.start_index >= batch.n_steps:
        raise ValueError("no time left between the start and the horizon")


def delta(
    batch: SimulatedBatch,
    contract: Contract,
    spec: WeightSpec | None = None,
    control_variate: bool = False,
) -> McEstimate:
    """Delta ``E[g pi]`` on a simulated batch."""
    _check_window(batch)
    g = _payoff(batch, contract)
    w = delta_weight(batch, spec, contract)
    s = weighted_samples(g, w, "delta", batch.paths[:, -1], control_variate)
    return McEstimate.from_samples(s, batch.master_seed, "delta")


def gamma(batch: SimulatedBatch, contract: Contract, control_variate: bool = False) -> McEstimate:
    """Gamma ``E[g xi_{s,T}]`` at the batch start time."""
    _check_window(batch)
    g = _payoff(batch, contract)
    s = weighted_samples(g, gamma_weight(batch), "gamma", batch.paths[:, -1], control_variate)
    return McEstimate.from_samples(s, batch.master_seed, "gamma")


def vega_directional(
    batch: SimulatedBatch,
    contract: Contract,
    model: VolatilityModel,
    u=None,
    control_variate: bool = False,
) -> McEstimate:
    """Directional Vega along ``u(t, x)`` (``None`` for ``u = 1``)."""
    _check_window(batch)
    g = _payoff(batch, contract)
    w = vega_weight(batch, model, u)
    s = weighted_samples(g, w, "vega", batch.paths[:, -1], control_variate)
    return McEstimate.from_samples(s, batch.master_seed, "vega")


def delta_at(
    prefix: DiscretePath,
    contract: Contract,
    model: VolatilityModel,
    mc: MonteCarloConfig,
    control_variate: bool = False,
) -> McEstimate:
    """Delta at a path prefix ending at ``s < T``.

    The tangent restarts at 1 at the prefix end, so ``z(prefix) = 1`` and the
    estimate is ``E[g int_s^T z / sigma dw] / (T - s)``. ``mc.n_steps`` counts
    steps over the whole ``[0, T]`` grid.
    """
    T = contract.maturity
    if prefix.time >= T - 1e-12 * T:
        raise ValueError("delta_at needs a prefix ending before maturity (zero window)")
    run = estimate_greeks(model, contract, prefix, mc, ("delta",), control_variate=control_variate)
    return run.estimates["delta"]


# Streaming driver ----------------------------------------------------------------


@dataclass
class GreekRun:
    """Estimates of one streamed run with the per-path samples behind them."""

    estimates: dict[str, McEstimate]
    samples: dict[str, np.ndarray] = field(repr=False)
    seed: int = 0


def _block_samples(batch, contract, model, greeks, spec, u):
    out = {"payoff": _payoff(batch, contract), "terminal": batch.paths[:, -1].copy()}
    if "delta" in greeks:
        out["delta"] = delta_weight(batch, spec, contract)
    if "gamma" in greeks:
        out["gamma"] = gamma_weight(batch)
    if "vega" in greeks:
        out["vega"] = vega_weight(batch, model, u)
    return out


def estimate_greeks(
    model: VolatilityModel,
    contract: Contract,
    start: float | DiscretePath,
    mc: MonteCarloConfig,
    greeks: Sequence[str] = ("price", "delta"),
    spec: WeightSpec | None = None,
    u=None,
    control_variate: bool = False,
) -> GreekRun:
    """Simulate block by block and estimate the requested Greeks.

    ``start`` is either ``x0`` or a path prefix to continue.
    """
    unknown = set(greeks) - set(GREEKS)
    if unknown:
        raise ValueError(f"unknown greeks {sorted(unknown)}; choose from {GREEKS}")
    if ("gamma" in greeks or "vega" in greeks) and not (spec is None or spec.kind == "weakly"):
        raise ValueError("gamma and vega use the weakly weight; pass spec only for delta")
    blocks = map_blocks(
        lambda b: _block_samples(b, contract, model, greeks, spec, u),
        model,
        start,
        contract.maturity,
        mc.n_steps,
        mc.n_paths,
        mc.seed,
        mc.block_size,
        mc.threads,
    )
    cols = {k: np.concatenate([b[k] for b in blocks]) for k in blocks[0]}
    g, xT = cols["payoff"], cols["terminal"]
    samples, estimates = {}, {}
    for name in greeks:
        if name == "price":
            s = g
        else:
            s = weighted_samples(g, cols[name], name, xT, control_variate)
        samples[name] = s
        note = "control_variate" if control_variate and name != "price" else ""
        estimates[name] = McEstimate.from_samples(s, mc.seed, name, note)
    return GreekRun(estimates, samples, mc.seed)


def convergence_table(samples: np.ndarray, n_points: int = 20, min_paths: int = 100) -> list[tuple[int, float, float]]:
    """Running ``(n, mean, std_error)`` at log-spaced path counts."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    lo = min(max(2, min_paths), n)
    counts = np.unique(np.round(np.geomspace(lo, n, n_points)).astype(int))
    c1 = np.cumsum(samples)
    c2 = np.cumsum(samples * samples)
    rows = []
    for k in counts:
        mean = c1[k - 1] / k
        var = max(c2[k - 1] - k * mean * mean, 0.0) / (k - 1)
        rows.append((int(k), float(mean), float(math.sqrt(var / k))))
    return rows


# Vega surface ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VegaSurface:
    """Binned estimate of the Vega density ``m(t, x)``.

    ``m[k, b]`` is per unit of the variance parameter, per unit of price and
    per year, and already includes the model's variance shape, so
    ``sum u * m * width * dt_probe`` approximates the Vega along ``u``.
    """

    times: np.ndarray
    edges: np.ndarray
    m_raw: np.ndarray
    occupancy: np.ndarray
    time_step: float
    min_occupancy: int = 50

    @property
    def empty(self) -> np.ndarray:
        return self.occupancy < self.min_occupancy

    @property
    def m(self) -> np.ndarray:
        """Surface with sparse cells set to NaN."""
        return np.where(self.empty, np.nan, self.m_raw)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def integrate(self, u=None, include_sparse: bool = True) -> float:
        """``sum_{t, cells} u * m * width * dt`` (``u`` at cell midpoints)."""
        m = self.m_raw if include_sparse else np.nan_to_num(self.m)
        mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        t, x = np.meshgrid(self.times, mid, indexing="ij")
        uu = _direction_values(u, t, x)
        return float(np.sum(uu * m * self.widths[None, :]) * self.time_step)

    def write_csv(self, file: str | Path) -> None:
        with open(file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x_low", "x_high", "m", "occupancy"])
            m = self.m
            for k, t in enumerate(self.times):
                for b in range(self.edges.size - 1):
                    w.writerow(
                        [repr(float(t)), repr(float(self.edges[b])), repr(float(self.edges[b + 1])),
                         repr(float(m[k, b])), int(self.occupancy[k, b])]
                    )


def _surface_edges(bins, x: np.ndarray) -> np.ndarray:
    if np.isscalar(bins):
        n = int(bins)
        if n < 1:
            raise ValueError("need at least one bin")
        lo, hi = float(x.min()), float(x.max())
        pad = 1e-9 * max(1.0, abs(lo), abs(hi))
        edges = np.linspace(lo - pad, hi + pad, n + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("bin edges must be a 1-d array with at least two entries")
    if np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing (zero-width bins are not allowed)")
    if x.min() < edges[0] or x.max() >= edges[-1]:
        raise ValueError(
            f"bins [{edges[0]}, {edges[-1]}) do not cover the simulated range [{x.min()}, {x.max()}]"
        )
    return edges


def vega_surface(
    batch: SimulatedBatch,
    contract: Contract,
    model: VolatilityModel,
    bins=40,
    time_stride: int = 1,
    min_occupancy: int = 50,
) -> VegaSurface:
    """Bin ``1/2 g xi_{t,T} shape(t, x_t)`` by the price level at probe times.

    ``bins`` is a bin count (edges span the visited range) or explicit edges.
    Probe times are every ``time_stride``-th grid time from the start.
    """
    if model.kind == "path_dependent":
        raise ValueError("vega surface is only defined for local volatility models")
    if time_stride < 1:
        raise ValueError("time_stride must be >= 1")
    _check_window(batch)
    m0 = batch.start_index
    g = _payoff(batch, contract)
    xi = gamma_weights(batch)[:, ::time_stride]
    cols = np.arange(m0, batch.n_steps)[::time_stride]
    x = batch.paths[:, cols]
    t = batch.times[cols]
    edges = _surface_edges(bins, x)
    contrib = 0.5 * g[:, None] * xi * model.variance_shape(np.broadcast_to(t, x.shape), x)
    n_bins = edges.size - 1
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    sums = np.zeros((cols.size, n_bins))
    occ = np.zeros((cols.size, n_bins), dtype=int)
    for k in range(cols.size):
        sums[k] = np.bincount(idx[:, k], weights=contrib[:, k], minlength=n_bins)
        occ[k] = np.bincount(idx[:, k], minlength=n_bins)
    m = sums / (batch.n_paths * np.diff(edges)[None, :])
    return VegaSurface(t, edges, m, occ, time_stride * batch.grid_step, min_occupancy)


# Nested Monte Carlo ----------------------------------------------------------------


class InnerPrice:
    """Price functional ``f(Y_t) = E[g | prefix Y_t]`` by inner Monte Carlo.

    Every call reuses the same seed, so evaluations at nearby prefixes share
    their random numbers. A prefix that reaches maturity is priced by the
    payoff itself.
    """

    def __init__(self, model: VolatilityModel, contract: Contract, mc: MonteCarloConfig):
        self.model = model
        self.contract = contract
        self.mc = mc

    def samples(self, path: DiscretePath, seed: int | None = None) -> np.ndarray:
        T = self.contract.maturity
        if path.n_steps >= self.mc.n_steps:
            return np.array([self.contract(path)])
        b = simulate_from_prefix(
            self.model, path, T, self.mc.n_steps, self.mc.n_paths,
            self.mc.seed if seed is None else seed, self.mc.block_size,
        )
        return self.contract.evaluate(b.paths, b.grid_step)

    def __call__(self, path: DiscretePath) -> float:
        return float(np.mean(self.samples(path)))


def _corner_brackets(f_samples, prefix, cfg):
    """Bracket estimate and its SE from per-sample corner values."""
    c = bracket_corners(prefix, cfg)
    vals = [f_samples(c.bump_then_extend[0]), f_samples(c.extend_then_bump[0]),
            f_samples(c.bump_then_extend[1]), f_samples(c.extend_then_bump[1])]
    per = c.combine(*vals)
    se = float(np.std(per, ddof=1) / math.sqrt(per.size)) if per.size > 1 else 0.0
    return float(np.mean(per)), se


def strong_correction(
    model: VolatilityModel,
    contract: Contract,
    x0: float,
    outer: MonteCarloConfig,
    inner: MonteCarloConfig,
    cfg: DerivativeConfig = DEFAULT_CONFIG,
    s_stride: int = 10,
    price_functional: PathFunctional | None = None,
    se_fraction: float = 0.5,
    max_budget: float = 5e9,
) -> McEstimate:
    """Path-dependence correction ``E[(1/T) int_0^T (T - s) L f(X_s) z_s ds]``.

    ``L f`` at each outer path and node ``s`` is the Lie bracket of the price
    functional: an inner Monte Carlo from the four corner prefixes sharing
    one seed, or ``price_functional`` when given. Nodes are every
    ``s_stride``-th grid time; the ``s`` integral is a trapezoid rule with the
    integrand vanishing at ``s = T``. Total Delta is the weakly Delta plus
    this correction. Inner brackets whose standard error exceeds
    ``se_fraction * |bracket|`` are counted in ``notes``.
    """
    T = contract.maturity
    N = outer.n_steps
    if inner.n_steps != N:
        raise ValueError("inner and outer runs must share the time grid")
    if s_stride < 1:
        raise ValueError("s_stride must be >= 1")
    nodes = [k for k in range(0, N, s_stride) if k + cfg.dt_steps < N]
    if not nodes:
        raise ValueError("no correction nodes fit before maturity; reduce s_stride or dt_steps")
    if price_functional is None:
        cost = float(outer.n_paths) * len(nodes) * 4 * inner.n_paths * N
        if cost > max_budget:
            raise ValueError(f"nested budget {cost:.3g} path-steps exceeds max_budget {max_budget:.3g}")
    dt = T / N
    s_nodes = np.array([k * dt for k in nodes] + [T])
    # trapezoid weights over the nodes, the s = T end contributes zero
    gaps = np.diff(s_nodes)
    w = np.zeros(s_nodes.size)
    w[:-1] += 0.5 * gaps
    w[1:] += 0.5 * gaps
    w = w[:-1]

    batch = simulate(model, x0, T, N, outer.n_paths, outer.seed, outer.block_size, outer.threads)
    values = np.zeros(outer.n_paths)
    flagged = 0
    for j in range(outer.n_paths):
        total = 0.0
        for wk, k in zip(w, nodes):
            prefix = DiscretePath(dt, batch.paths[j, : k + 1])
            if price_functional is not None:
                br = lie_bracket(price_functional, prefix, cfg)
            else:
                seed = derive_seed(inner.seed, j, k)
                fn = InnerPrice(model, contract, inner)
                br, se = _corner_brackets(lambda p: fn.samples(p, seed), prefix, cfg)
                if se > se_fraction * abs(br) and se > 0:
                    flagged += 1
            total += wk * (T - k * dt) * br * batch.tangent[j, k]
        values[j] = total / T
    notes = f"flagged_inner={flagged}" if price_functional is None else "synthetic_price"
    return McEstimate.from_samples(values, outer.seed, "strong_correction", notes)


# Finite differences -------------------------------------------------------------------


def _payoffs(model, contract, x0, mc):
    blocks = map_blocks(
        lambda b: contract.evaluate(b.paths, b.grid_step),
        model, x0, contract.maturity, mc.n_steps, mc.n_paths, mc.seed, mc.block_size, mc.threads,
    )
    return np.concatenate(blocks)


def fd_greek(
    model: VolatilityModel,
    contract: Contract,
    which: str,
    bump_size: float,
    x0: float,
    mc: MonteCarloConfig,
) -> McEstimate:
    """Central finite difference with common random numbers.

    ``which`` is ``"delta"`` or ``"gamma"`` (bumps of ``x0``) or
    ``"vega_sigma2"`` (bump of the model's variance parameter).
    """
    if not bump_size > 0:
        raise ValueError(f"bump must be > 0, got {bump_size}")
    b = bump_size
    if which == "delta":
        s = (_payoffs(model, contract, x0 + b, mc) - _payoffs(model, contract, x0 - b, mc)) / (2 * b)
    elif which == "gamma":
        up = _payoffs(model, contract, x0 + b, mc)
        mid = _payoffs(model, contract, x0, mc)
        dn = _payoffs(model, contract, x0 - b, mc)
        s = (up - 2 * mid + dn) / (b * b)
    elif which == "vega_sigma2":
        up = _payoffs(model.bump_variance(b), contract, x0, mc)
        dn = _payoffs(model.bump_variance(-b), contract, x0, mc)
        s = (up - dn) / (2 * b)
    else:
        raise ValueError(f"unknown finite-difference greek {which!r}")
    return McEstimate.from_samples(s, mc.seed, f"fd_{which}")


# Martingale diagnostic ---------------------------------------------------------------


@dataclass(frozen=True)
class MartingaleReport:
    times: tuple[float, ...]
    estimates: tuple[McEstimate, ...]

    @property
    def max_deviation(self) -> float:
        """Largest pairwise gap in combined standard errors."""
        worst = 0.0
        for i, a in enumerate(self.estimates):
            for b in self.estimates[i + 1 :]:
                worst = max(worst, a.z_score(b.mean, b.std_error))
        return worst


def martingale_diagnostic(
    model: VolatilityModel,
    contract: Contract,
    x0: float,
    times: Iterable[float],
    mc: MonteCarloConfig,
    delta_fn: Callable[[float, np.ndarray], np.ndarray] | None = None,
    inner: MonteCarloConfig | None = None,
    bump_size: float | None = None,
) -> MartingaleReport:
    """Estimate ``E[Delta_x f(X_t) z_t]`` at each probe time.

    ``delta_fn(t, history)`` returns the Delta for every row of the path
    history up to ``t``. Without it the Delta is a nested central difference
    of the inner price with common random numbers.
    """
    T = contract.maturity
    times = tuple(float(t) for t in times)
    if any(not 0 <= t < T for t in times):
        raise ValueError("probe times must lie in [0, T)")
    if delta_fn is None and inner is None:
        raise ValueError("give either delta_fn or an inner Monte Carlo config")
    batch = simulate(model, x0, T, mc.n_steps, mc.n_paths, mc.seed, mc.block_size, mc.threads)
    dt = batch.grid_step
    out = []
    for t in times:
        k = _exact_index(t, dt)
        hist = batch.paths[:, : k + 1]
        if delta_fn is not None:
            d = np.asarray(delta_fn(t, hist), dtype=float)
        else:
            fn = InnerPrice(model, contract, inner)
            d = np.empty(batch.n_paths)
            for j in range(batch.n_paths):
                prefix = DiscretePath(dt, hist[j])
                h = bump_size or DEFAULT_CONFIG.bump_size(prefix)
                seed = derive_seed(inner.seed, j, k)
                up = fn.samples(bump(prefix, h), seed).mean()
                dn = fn.samples(bump(prefix, -h), seed).mean()
                d[j] = (up - dn) / (2 * h)
        out.append(McEstimate.from_samples(d * batch.tangent[:, k], mc.seed, f"martingale_t={t:g}"))
    return MartingaleReport(times, tuple(out))


# CSV ---------------------------------------------------------------------------------


def write_estimates_csv(estimates: Iterable[McEstimate], file: str | Path) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "mean", "std_error", "n_paths", "seed"])
        for e in estimates:
            w.writerow([e.label, repr(e.mean), repr(e.std_error), e.n_paths, e.seed])


def write_convergence_csv(samples: Mapping[str, np.ndarray], file: str | Path, n_points: int = 20) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "n_paths", "mean", "std_error"])
        for label, s in samples.items():
            for n, mean, se in convergence_table(s, n_points):
                w.writerow([label, n, repr(mean), repr(se)])
