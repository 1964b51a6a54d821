"""Discrete paths on a uniform grid and the basic path operations.

A path holds its values on ``0, dt, 2 dt, ...`` plus a left limit at the
final time, so that a bump of the terminal value can be represented
without an interior jump.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

PathFunctional = Callable[["DiscretePath"], float]


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """Cadlag path sampled on a uniform grid.

    Parameters
    ----------
    grid_step : float
        Spacing of the time grid in years.
    values : array_like
        ``values[i]`` is the path at time ``i * grid_step``.
    terminal_left_limit : float, optional
        Value just before the final time. Defaults to ``values[-1]``, i.e. a
        path that is continuous at its end.
    """

    grid_step: float
    values: np.ndarray
    terminal_left_limit: float = field(default=None)  # type: ignore[assignment]
    _jump: float | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size == 0:
            raise ValueError("path must have at least one value")
        if not self.grid_step > 0:
            raise ValueError(f"grid_step must be > 0, got {self.grid_step!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "grid_step", float(self.grid_step))
        left = values[-1] if self.terminal_left_limit is None else self.terminal_left_limit
        object.__setattr__(self, "terminal_left_limit", float(left))
        # exact bump offset, kept so that opposite bumps cancel bit for bit
        if self._jump is None:
            object.__setattr__(self, "_jump", float(values[-1] - left))

    @property
    def n_steps(self) -> int:
        return self.values.size - 1

    @property
    def time(self) -> float:
        """Final time of the path."""
        return self.n_steps * self.grid_step

    @property
    def terminal(self) -> float:
        return float(self.values[-1])

    @property
    def jump(self) -> float:
        """Terminal jump ``y_t - y_{t-}`` (zero unless bumped)."""
        return self._jump

    @property
    def is_bumped(self) -> bool:
        return self._jump != 0.0

    def left_limit_path(self) -> "DiscretePath":
        """The path ``Y_{t-}``: terminal value replaced by its left limit."""
        if not self.is_bumped:
            return self
        values = self.values.copy()
        values[-1] = self.terminal_left_limit
        return DiscretePath(self.grid_step, values)

    def restrict(self, n_steps: int) -> "DiscretePath":
        """Restriction to ``[0, n_steps * grid_step]``."""
        if not 0 <= n_steps <= self.n_steps:
            raise ValueError(f"cannot restrict a {self.n_steps}-step path to {n_steps} steps")
        if n_steps == self.n_steps:
            return self
        return DiscretePath(self.grid_step, self.values[: n_steps + 1])

    def increments(self) -> np.ndarray:
        """Increments with the terminal jump split out as its own term.

        For a continuous path this is ``np.diff(values)``. For a bumped path
        of at least two points the last grid increment is replaced by the
        continuous part followed by the jump.
        """
        return np.diff(self._jump_sequence())

    def _jump_sequence(self) -> np.ndarray:
        if not self.is_bumped or self.values.size < 2:
            return self.values
        return np.concatenate([self.values[:-1], [self.terminal_left_limit, self.values[-1]]])

    def __eq__(self, other):
        if not isinstance(other, DiscretePath):
            return NotImplemented
        return (
            self.grid_step == other.grid_step
            and self.terminal_left_limit == other.terminal_left_limit
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.grid_step, self.terminal_left_limit, self.values.tobytes()))

    def __repr__(self):
        return (
            f"DiscretePath(grid_step={self.grid_step!r}, values={self.values.tolist()!r}, "
            f"terminal_left_limit={self.terminal_left_limit!r})"
        )


def flat_extension(path: DiscretePath, extra_steps: int) -> DiscretePath:
    """Prolong ``path`` at its terminal value for ``extra_steps`` grid points."""
    if extra_steps < 0:
        raise ValueError(f"extra_steps must be >= 0, got {extra_steps}")
    if extra_steps == 0:
        return path
    tail = np.full(extra_steps, path.values[-1])
    return DiscretePath(path.grid_step, np.concatenate([path.values, tail]))


def bump(path: DiscretePath, h: float) -> DiscretePath:
    """Shift the terminal value by ``h``, keeping the left limit."""
    if h == 0:
        return path
    jump = path.jump + h
    values = path.values.copy()
    values[-1] = path.terminal_left_limit + jump if jump != 0 else path.terminal_left_limit
    return DiscretePath(path.grid_step, values, path.terminal_left_limit, jump)


def concatenate(prefix: DiscretePath, suffix: DiscretePath) -> DiscretePath:
    """Paste ``suffix`` after ``prefix``, shifted to join at the prefix end.

    The result equals ``prefix`` up to its final time ``t`` and
    ``y_t + (z_u - z_t)`` afterwards.
    """
    _check_same_grid(prefix, suffix)
    shifted = prefix.values[-1] + (suffix.values[1:] - suffix.values[0])
    return DiscretePath(prefix.grid_step, np.concatenate([prefix.values, shifted]))


def lambda_distance(a: DiscretePath, b: DiscretePath) -> float:
    """Sup-norm distance after flat extension plus the gap in horizons."""
    _check_same_grid(a, b)
    short, long_ = (a, b) if a.n_steps <= b.n_steps else (b, a)
    short = flat_extension(short, long_.n_steps - short.n_steps)
    sup = float(np.max(np.abs(short.values - long_.values)))
    return sup + abs(a.time - b.time)


def pathwise_integral(h: PathFunctional, path: DiscretePath) -> float:
    """Left-point sum of ``h(Y_{s-}) dy_s`` over the grid.

    The integrand at step ``i`` sees the path restricted to ``[0, t_i]``; at
    a terminal jump it sees the left-limit path.
    """
    dy = path.increments()
    total = 0.0
    for i in range(path.n_steps):
        total += h(path.restrict(i)) * dy[i]
    if dy.size > path.n_steps:
        # jump term: the integrand sees Y_{t-}
        total += h(path.left_limit_path()) * dy[-1]
    return total


def quadratic_variation(path: DiscretePath) -> float:
    """Sum of squared increments, with a terminal jump counted separately."""
    dy = path.increments()
    return float(np.dot(dy, dy))


def jump_factor(dy: float) -> float:
    """``(1 + dy) exp(-dy + dy^2 / 2)``, the exponential's factor for one jump."""
    if dy <= -1:
        raise ValueError(f"jump {dy} <= -1 would make the exponential non-positive")
    return (1.0 + dy) * math.exp(-dy + 0.5 * dy * dy)


def doleans_exponential(path: DiscretePath) -> float:
    """Pathwise stochastic exponential ``exp{y_t - y_0 - QV/2}`` times jump factors.

    Only the terminal slot can carry a jump.
    """
    dy = path.jump
    factor = jump_factor(dy) if dy != 0 else 1.0
    qv = quadratic_variation(path)
    return math.exp(path.values[-1] - path.values[0] - 0.5 * qv) * factor


# Common functionals ------------------------------------------------------


def terminal_value(path: DiscretePath) -> float:
    return float(path.values[-1])


def current_time(path: DiscretePath) -> float:
    return path.time


def time_integral(path: DiscretePath, rule: str = "left") -> float:
    """``int_0^t y_u du`` on the grid.

    ``rule="left"`` ignores the terminal value, so a terminal bump (a single
    instant) does not move the integral. ``rule="trapezoid"`` is second
    order on smooth paths.
    """
    v = path.values
    dt = path.grid_step
    if v.size < 2:
        return 0.0
    if rule == "left":
        return float(np.sum(v[:-1]) * dt)
    if rule == "trapezoid":
        return float(dt * (np.sum(v[1:-1]) + 0.5 * (v[0] + v[-1])))
    raise ValueError(f"unknown rule {rule!r}")


def double_time_integral(path: DiscretePath) -> float:
    """``int_0^t int_0^s y_u du ds`` with left-point sums at both levels."""
    v = path.values
    dt = path.grid_step
    if v.size < 2:
        return 0.0
    inner = np.concatenate([[0.0], np.cumsum(v[:-1]) * dt])
    return float(np.sum(inner[:-1]) * dt)


def log_path(path: DiscretePath) -> DiscretePath:
    """Elementwise logarithm of a positive path."""
    if np.any(path.values <= 0) or path.terminal_left_limit <= 0:
        raise ValueError("log of a path with non-positive values")
    return DiscretePath(path.grid_step, np.log(path.values), math.log(path.terminal_left_limit))


# CSV ---------------------------------------------------------------------


def path_to_row(path: DiscretePath) -> list[str]:
    """``grid_step`` then the values, formatted to round-trip exactly."""
    return [repr(path.grid_step)] + [repr(float(v)) for v in path.values]


def path_from_row(row: Iterable[str]) -> DiscretePath:
    items = [float(x) for x in row]
    if len(items) < 2:
        raise ValueError("a path row needs grid_step and at least one value")
    return DiscretePath(items[0], np.array(items[1:]))


def write_paths_csv(paths: Iterable[DiscretePath], file: str | Path) -> None:
    with open(file, "w", newline="") as fh:
        writer = csv.writer(fh)
        for p in paths:
            writer.writerow(path_to_row(p))


def read_paths_csv(file: str | Path) -> Iterator[DiscretePath]:
    with open(file, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                yield path_from_row(row)


def _check_same_grid(a: DiscretePath, b: DiscretePath) -> None:
    if a.grid_step != b.grid_step:
        raise ValueError(f"grid_step mismatch: {a.grid_step} vs {b.grid_step}")
