"""Driftless volatility models ``dx = sigma(X) dw`` and their tangent process.

Every model exposes the volatility as a path functional (``sigma(path)``)
and a vectorized form used by the simulator (``coefficients``). The tangent
process is built in exponential form,
``z_t = exp{sum dsigma dw - 1/2 sum dsigma^2 dt}``, so it stays positive and is
exact for Black-Scholes.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence, TypeVar

import numpy as np

from .pathcore import DiscretePath, log_path, quadratic_variation
from .rng import DEFAULT_BLOCK_SIZE, block_generator, block_ranges

T = TypeVar("T")


class SimulationError(ArithmeticError):
    """Non-finite state met while stepping a path."""

    def __init__(self, path_index: int, step: int, message: str = "non-finite value"):
        super().__init__(f"{message} on path {path_index} at step {step}")
        self.path_index = path_index
        self.step = step


class VolatilityModel:
    """Base class: subclasses define ``sigma`` and ``coefficients``.

    ``kind`` is ``"black_scholes"``, ``"local_vol"`` or ``"path_dependent"``.
    """

    kind = "path_dependent"

    def sigma(self, path: DiscretePath) -> float:
        raise NotImplementedError

    def dsigma_dx(self, path: DiscretePath) -> float:
        """Space functional derivative of ``sigma``; central bump by default."""
        from .funcderiv import space_derivative

        return space_derivative(self.sigma, path)

    def coefficients(self, step: int, history: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """``(sigma, dsigma_dx)`` for every row of ``history`` at grid index ``step``.

        ``history`` has shape ``(n_paths, step + 1)``. The default loops over
        paths through the functional interface.
        """
        sig = np.empty(history.shape[0])
        dsig = np.empty(history.shape[0])
        for k, row in enumerate(history):
            p = DiscretePath(dt, row)
            sig[k] = self.sigma(p)
            dsig[k] = self.dsigma_dx(p)
        return sig, dsig

    def variance_shape(self, t: float, x: np.ndarray) -> np.ndarray:
        """How local variance responds to a unit move of the variance parameter.

        A Vega direction ``u`` perturbs local variance by ``eps * u * shape``.
        """
        return np.ones_like(np.asarray(x, dtype=float))

    def bump_variance(self, eps: float) -> "VolatilityModel":
        raise NotImplementedError(f"{type(self).__name__} has no variance parameter to bump")


@dataclass(frozen=True)
class BlackScholes(VolatilityModel):
    """``sigma(Y_t) = sigma_bar * y_t``; stepped exactly in log space."""

    sigma_bar: float
    kind = "black_scholes"

    def __post_init__(self):
        if self.sigma_bar < 0:
            raise ValueError(f"sigma_bar must be >= 0, got {self.sigma_bar}")

    def sigma(self, path):
        return self.sigma_bar * path.terminal

    def dsigma_dx(self, path):
        return self.sigma_bar

    def coefficients(self, step, history, dt):
        x = history[:, -1]
        return self.sigma_bar * x, np.full_like(x, self.sigma_bar)

    def variance_shape(self, t, x):
        return np.asarray(x, dtype=float) ** 2

    def bump_variance(self, eps):
        return BlackScholes(math.sqrt(self.sigma_bar**2 + eps))


class LocalVol(VolatilityModel):
    """``sigma(Y_t) = fn(t, y_t)`` with ``fn`` vectorized in ``x``.

    ``dfn`` is the analytic ``d fn / dx``; without it a central difference
    with the same relative bump as the functional derivatives is used.
    ``shape`` is the variance shape used for Vega directions (default 1,
    i.e. absolute local variance).
    """

    kind = "local_vol"

    def __init__(self, fn, dfn=None, shape=None, name: str = "local_vol"):
        self.fn = fn
        self.dfn = dfn
        self.shape = shape
        self.name = name

    def __repr__(self):
        return f"LocalVol({self.name})"

    def _d(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.dfn is not None:
            return np.asarray(self.dfn(t, x), dtype=float) * np.ones_like(x)
        h = 1e-4 * np.maximum(1.0, np.abs(x))
        return (np.asarray(self.fn(t, x + h)) - np.asarray(self.fn(t, x - h))) / (2 * h)

    def sigma(self, path):
        return float(self.fn(path.time, path.terminal))

    def dsigma_dx(self, path):
        return float(self._d(path.time, path.terminal))

    def coefficients(self, step, history, dt):
        t = step * dt
        x = history[:, -1]
        return np.asarray(self.fn(t, x), dtype=float) * np.ones_like(x), self._d(t, x)

    def variance_shape(self, t, x):
        if self.shape is None:
            return np.ones_like(np.asarray(x, dtype=float))
        return np.asarray(self.shape(t, x), dtype=float) * np.ones_like(x)

    def bump_variance(self, eps):
        fn, shape = self.fn, self.variance_shape
        return LocalVol(
            lambda t, x: np.sqrt(np.asarray(fn(t, x)) ** 2 + eps * shape(t, x)),
            shape=self.shape,
            name=f"{self.name}+{eps:g}",
        )


def bachelier(sigma: float) -> LocalVol:
    """Normal model ``dx = sigma dw``; its tangent process is identically 1."""
    return LocalVol(lambda t, x: sigma * np.ones_like(x), lambda t, x: 0.0, name=f"bachelier({sigma})")


def cev(sigma: float, beta: float) -> LocalVol:
    """``sigma(x) = sigma * x**beta``; Vega directions bump ``sigma**2``."""
    return LocalVol(
        lambda t, x: sigma * np.power(x, beta),
        lambda t, x: sigma * beta * np.power(x, beta - 1.0),
        shape=lambda t, x: np.power(x, 2 * beta),
        name=f"cev({sigma},{beta})",
    )


class PathDependentVol(VolatilityModel):
    """Volatility given directly as path functionals."""

    kind = "path_dependent"

    def __init__(self, sigma_fn, dsigma_fn=None, name: str = "path_dependent"):
        self._sigma = sigma_fn
        self._dsigma = dsigma_fn
        self.name = name

    def sigma(self, path):
        return float(self._sigma(path))

    def dsigma_dx(self, path):
        if self._dsigma is None:
            return super().dsigma_dx(path)
        return float(self._dsigma(path))


@dataclass(frozen=True)
class QVFeedbackVol(VolatilityModel):
    """``sigma(Y_t) = sigma_bar * (1 + alpha * QV(log Y_t)) * y_t``.

    A terminal bump adds ``log(1 + h/y)^2`` to the log-QV, which is second
    order in ``h``, so ``Delta_x sigma = sigma_bar * (1 + alpha * QV)``.
    """

    sigma_bar: float
    alpha: float
    kind = "path_dependent"

    def sigma(self, path):
        qv = quadratic_variation(log_path(path))
        return self.sigma_bar * (1 + self.alpha * qv) * path.terminal

    def dsigma_dx(self, path):
        return self.sigma_bar * (1 + self.alpha * quadratic_variation(log_path(path)))

    def coefficients(self, step, history, dt):
        if history.shape[1] > 1:
            qv = np.sum(np.diff(np.log(history), axis=1) ** 2, axis=1)
        else:
            qv = np.zeros(history.shape[0])
        level = self.sigma_bar * (1 + self.alpha * qv)
        return level * history[:, -1], level


# Simulation ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimulatedBatch:
    """Simulated paths with the Brownian increments and tangent process.

    ``paths`` and ``tangent`` have shape ``(n_paths, n_steps + 1)``;
    ``brownian``, ``sigma`` and ``dsigma`` have shape ``(n_paths, n_steps)``
    and hold the left-point values on each step. Steps before
    ``start_index`` belong to a fixed prefix: their increments are zero,
    their coefficients NaN, and the tangent is 1 up to and including the
    start.
    """

    paths: np.ndarray
    brownian: np.ndarray
    tangent: np.ndarray
    sigma: np.ndarray
    dsigma: np.ndarray
    grid_step: float
    master_seed: int
    start_index: int = 0
    first_path: int = 0

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def n_steps(self) -> int:
        return self.paths.shape[1] - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.grid_step

    @property
    def start_time(self) -> float:
        return self.start_index * self.grid_step

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.grid_step

    def path(self, i: int) -> DiscretePath:
        return DiscretePath(self.grid_step, self.paths[i])

    def tangent_path(self, i: int) -> DiscretePath:
        return DiscretePath(self.grid_step, self.tangent[i])

    def brownian_path(self, i: int) -> np.ndarray:
        """Cumulative Brownian motion ``w`` on the grid for path ``i``."""
        return np.concatenate([[0.0], np.cumsum(self.brownian[i])])


def concat_batches(batches: Sequence[SimulatedBatch]) -> SimulatedBatch:
    first = batches[0]
    if len(batches) == 1:
        return first
    return SimulatedBatch(
        paths=np.concatenate([b.paths for b in batches]),
        brownian=np.concatenate([b.brownian for b in batches]),
        tangent=np.concatenate([b.tangent for b in batches]),
        sigma=np.concatenate([b.sigma for b in batches]),
        dsigma=np.concatenate([b.dsigma for b in batches]),
        grid_step=first.grid_step,
        master_seed=first.master_seed,
        start_index=first.start_index,
        first_path=first.first_path,
    )


def _grid_step(horizon: float, n_steps: int) -> float:
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    return horizon / n_steps


def _simulate_block(model, prefix, dt, n_steps, first, last, seed) -> SimulatedBatch:
    m = prefix.size - 1
    count = last - first
    rng = block_generator(seed, first)
    dw_fresh = rng.standard_normal((count, n_steps - m)) * math.sqrt(dt)

    paths = np.empty((count, n_steps + 1))
    paths[:, : m + 1] = prefix
    dw = np.zeros((count, n_steps))
    dw[:, m:] = dw_fresh
    sig = np.full((count, n_steps), np.nan)
    dsig = np.full((count, n_steps), np.nan)
    log_z = np.zeros((count, n_steps + 1))

    if isinstance(model, BlackScholes):
        s = model.sigma_bar
        incr = s * dw_fresh - 0.5 * s * s * dt
        cum = np.cumsum(incr, axis=1)
        paths[:, m + 1 :] = prefix[-1] * np.exp(cum)
        log_z[:, m + 1 :] = cum
        sig[:, m:] = s * paths[:, m:-1]
        dsig[:, m:] = s
    else:
        # overflow is caught below and reported with its path and step
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(m, n_steps):
                s_i, d_i = model.coefficients(i, paths[:, : i + 1], dt)
                sig[:, i] = s_i
                dsig[:, i] = d_i
                paths[:, i + 1] = paths[:, i] + s_i * dw[:, i]
                log_z[:, i + 1] = log_z[:, i] + d_i * dw[:, i] - 0.5 * d_i * d_i * dt
                bad = ~(np.isfinite(paths[:, i + 1]) & np.isfinite(log_z[:, i + 1]))
                if bad.any():
                    raise SimulationError(first + int(np.flatnonzero(bad)[0]), i + 1)

    bad = ~np.isfinite(paths)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise SimulationError(first + int(row), int(col))
    return SimulatedBatch(
        paths=paths,
        brownian=dw,
        tangent=np.exp(log_z),
        sigma=sig,
        dsigma=dsig,
        grid_step=dt,
        master_seed=seed,
        start_index=m,
        first_path=first,
    )


def map_blocks(
    fn: Callable[[SimulatedBatch], T],
    model: VolatilityModel,
    prefix: DiscretePath | float,
    horizon: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> list[T]:
    """Simulate block by block and return ``fn(block)`` in block order.

    Only ``threads`` blocks are alive at a time, so memory stays bounded for
    large path counts.
    """
    results = []
    for _, out in _iter_blocks(fn, model, prefix, horizon, n_steps, n_paths, seed, block_size, threads):
        results.append(out)
    return results


def _iter_blocks(fn, model, prefix, horizon, n_steps, n_paths, seed, block_size, threads) -> Iterator:
    dt = _grid_step(horizon, n_steps)
    if isinstance(prefix, DiscretePath):
        if not math.isclose(prefix.grid_step, dt, rel_tol=1e-12):
            raise ValueError(f"prefix grid_step {prefix.grid_step} does not match horizon/n_steps = {dt}")
        if prefix.n_steps >= n_steps:
            raise ValueError("prefix must end strictly before the horizon")
        start = prefix.values
    else:
        if not prefix > 0:
            raise ValueError(f"x0 must be > 0, got {prefix}")
        start = np.array([float(prefix)])
    ranges = block_ranges(n_paths, block_size)

    def work(r):
        block = _simulate_block(model, start, dt, n_steps, r[0], r[1], seed)
        return block if fn is None else fn(block)

    if threads <= 1:
        for r in ranges:
            yield r, work(r)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for k in range(0, len(ranges), threads):
            wave = ranges[k : k + threads]
            yield from zip(wave, pool.map(work, wave))


def simulate(
    model: VolatilityModel,
    x0: float,
    horizon: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> SimulatedBatch:
    """Simulate ``n_paths`` paths of ``dx = sigma(X) dw`` from ``x0``.

    Bit-identical for fixed ``(seed, n_paths, n_steps, block_size)`` whatever
    the thread count.
    """
    blocks = map_blocks(None, model, x0, horizon, n_steps, n_paths, seed, block_size, threads)
    return concat_batches(blocks)


def simulate_from_prefix(
    model: VolatilityModel,
    prefix: DiscretePath,
    horizon: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> SimulatedBatch:
    """Continue ``prefix`` to ``horizon`` with fresh noise.

    ``n_steps`` counts the whole grid on ``[0, horizon]``; the prefix must sit
    on that grid. The tangent process restarts at 1 at the prefix end. A
    bumped prefix continues from its bumped terminal value.
    """
    blocks = map_blocks(None, model, prefix, horizon, n_steps, n_paths, seed, block_size, threads)
    return concat_batches(blocks)


# CSV -----------------------------------------------------------------------


def dump_batch_csv(batch: SimulatedBatch, file: str | Path) -> None:
    """One row per path: index, grid_step, x_0..x_N, dw_1..dw_N, z_0..z_N."""
    n = batch.n_steps
    header = (
        ["path", "grid_step"]
        + [f"x_{i}" for i in range(n + 1)]
        + [f"dw_{i + 1}" for i in range(n)]
        + [f"z_{i}" for i in range(n + 1)]
    )
    with open(file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(batch.n_paths):
            row = [str(batch.first_path + k), repr(batch.grid_step)]
            row += [repr(float(v)) for v in batch.paths[k]]
            row += [repr(float(v)) for v in batch.brownian[k]]
            row += [repr(float(v)) for v in batch.tangent[k]]
            writer.writerow(row)


def load_batch_csv(file: str | Path, master_seed: int = 0) -> SimulatedBatch:
    """Read back paths, increments and tangent written by ``dump_batch_csv``.

    Volatility coefficients are not stored and come back as NaN.
    """
    with open(file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    n = sum(1 for h in header if h.startswith("dw_"))
    data = np.array([[float(v) for v in r[2:]] for r in rows])
    dt = float(rows[0][1])
    paths = data[:, : n + 1]
    dw = data[:, n + 1 : 2 * n + 1]
    z = data[:, 2 * n + 1 :]
    nan = np.full(dw.shape, np.nan)
    return SimulatedBatch(paths, dw, z, nan, nan.copy(), dt, master_seed, 0, int(rows[0][0]))
