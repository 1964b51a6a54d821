"""Finite-difference functional derivatives and the Lie bracket of a functional.

Time derivatives use forward differences along the flat extension (the only
direction in which a path can be prolonged); space derivatives use central
differences of the terminal bump.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pathcore import DiscretePath, PathFunctional, bump, flat_extension


@dataclass(frozen=True)
class DerivativeConfig:
    """Bump sizes used to approximate the functional derivatives.

    ``h=None`` selects ``1e-4 * max(1, |y_t|)`` per path.
    """

    h: float | None = None
    dt_steps: int = 1
    relative_h: float = 1e-4

    def __post_init__(self):
        if self.h is not None and not self.h > 0:
            raise ValueError(f"h must be > 0, got {self.h}")
        if self.dt_steps < 1:
            raise ValueError(f"dt_steps must be >= 1, got {self.dt_steps}")

    def bump_size(self, path: DiscretePath) -> float:
        if self.h is not None:
            return self.h
        return self.relative_h * max(1.0, abs(path.terminal))

    def delta_t(self, path: DiscretePath) -> float:
        return self.dt_steps * path.grid_step


DEFAULT_CONFIG = DerivativeConfig()


def time_derivative(f: PathFunctional, path: DiscretePath, cfg: DerivativeConfig = DEFAULT_CONFIG) -> float:
    ext = flat_extension(path, cfg.dt_steps)
    return (f(ext) - f(path)) / cfg.delta_t(path)


def space_derivative(f: PathFunctional, path: DiscretePath, cfg: DerivativeConfig = DEFAULT_CONFIG) -> float:
    h = cfg.bump_size(path)
    return (f(bump(path, h)) - f(bump(path, -h))) / (2 * h)


def second_space_derivative(
    f: PathFunctional, path: DiscretePath, cfg: DerivativeConfig = DEFAULT_CONFIG
) -> float:
    h = cfg.bump_size(path)
    return (f(bump(path, h)) - 2 * f(path) + f(bump(path, -h))) / (h * h)


@dataclass(frozen=True)
class BracketCorners:
    """The four perturbed paths entering the two-evaluation bracket estimator.

    ``bump_then_extend[k]`` is ``(Y^{+-h})_{t, dt}`` and ``extend_then_bump[k]``
    is ``(Y_{t, dt})^{+-h}``, with ``k = 0`` for ``+h`` and ``k = 1`` for ``-h``.
    """

    bump_then_extend: tuple[DiscretePath, DiscretePath]
    extend_then_bump: tuple[DiscretePath, DiscretePath]
    h: float
    dt: float

    def combine(self, bt_plus, eb_plus, bt_minus, eb_minus):
        """Antisymmetrized bracket from functional values at the corners.

        Works elementwise, so per-sample arrays can be passed in.
        """
        return ((bt_plus - eb_plus) - (bt_minus - eb_minus)) / (2 * self.h * self.dt)


def bracket_corners(path: DiscretePath, cfg: DerivativeConfig = DEFAULT_CONFIG) -> BracketCorners:
    h = cfg.bump_size(path)
    ext = flat_extension(path, cfg.dt_steps)
    return BracketCorners(
        bump_then_extend=(
            flat_extension(bump(path, h), cfg.dt_steps),
            flat_extension(bump(path, -h), cfg.dt_steps),
        ),
        extend_then_bump=(bump(ext, h), bump(ext, -h)),
        h=h,
        dt=cfg.delta_t(path),
    )


def lie_bracket(
    f: PathFunctional,
    path: DiscretePath,
    cfg: DerivativeConfig = DEFAULT_CONFIG,
    mode: str = "limit",
) -> float:
    """Commutator ``Delta_x Delta_t f - Delta_t Delta_x f`` at ``path``.

    ``mode="limit"`` compares bump-then-extend with extend-then-bump directly;
    ``mode="nested"`` composes the one-sided derivative estimators. Both are
    antisymmetrized over ``+-h``.
    """
    if mode == "limit":
        c = bracket_corners(path, cfg)
        return float(
            c.combine(
                f(c.bump_then_extend[0]),
                f(c.extend_then_bump[0]),
                f(c.bump_then_extend[1]),
                f(c.extend_then_bump[1]),
            )
        )
    if mode == "nested":
        h = cfg.bump_size(path)
        d_x_of_d_t = (
            time_derivative(f, bump(path, h), cfg) - time_derivative(f, bump(path, -h), cfg)
        ) / (2 * h)
        fixed_h = DerivativeConfig(h=h, dt_steps=cfg.dt_steps)
        d_t_of_d_x = (
            space_derivative(f, flat_extension(path, cfg.dt_steps), fixed_h)
            - space_derivative(f, path, fixed_h)
        ) / cfg.delta_t(path)
        return float(d_x_of_d_t - d_t_of_d_x)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class PathDependenceClass:
    """Heuristic label from sampled Lie-bracket magnitudes.

    ``kind`` is one of ``"weakly"``, ``"path_independent"``,
    ``"discretely_monitored"``, ``"delayed"``, ``"strongly"``. ``times`` holds
    the monitoring dates for ``discretely_monitored`` and ``(t1,)`` for
    ``delayed``.
    """

    kind: str
    probe_times: tuple[float, ...]
    evidence: tuple[float, ...]
    times: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if len(self.evidence) != len(self.probe_times):
            raise ValueError("evidence must have one entry per probe time")

    @property
    def label(self) -> str:
        if self.kind == "delayed":
            return f"delayed({self.times[0]:.6g})"
        if self.kind == "discretely_monitored":
            return "discretely_monitored(" + ", ".join(f"{t:.6g}" for t in self.times) + ")"
        return self.kind

    def write_evidence_csv(self, file: str | Path) -> None:
        with open(file, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "abs_bracket"])
            for t, e in zip(self.probe_times, self.evidence):
                writer.writerow([repr(float(t)), repr(float(e))])


def classify(
    f: PathFunctional,
    probe_paths: Sequence[DiscretePath],
    probe_times: Iterable[float],
    cfg: DerivativeConfig = DEFAULT_CONFIG,
    tol: float = 1e-2,
) -> PathDependenceClass:
    """Label ``f`` by where its Lie bracket exceeds ``tol`` along probe paths.

    Evidence at each probe time is the largest ``|bracket|`` over the probe
    paths restricted to that time. The label is a heuristic: finitely many
    probes cannot decide the exact classes.
    """
    probe_paths = list(probe_paths)
    times = sorted(set(float(t) for t in probe_times))
    if not probe_paths or not times:
        raise ValueError("classify needs at least one probe path and one probe time")
    evidence = []
    for t in times:
        worst = 0.0
        for p in probe_paths:
            n = int(round(t / p.grid_step))
            if not math.isclose(n * p.grid_step, t, rel_tol=1e-9, abs_tol=1e-12) or n > p.n_steps:
                raise ValueError(f"probe time {t} is not a grid time within the path horizon")
            value = abs(lie_bracket(f, p.restrict(n), cfg))
            worst = max(worst, value)
        evidence.append(worst)

    exceeds = np.asarray(evidence) > tol
    hits = np.flatnonzero(exceeds)
    if hits.size == 0:
        kind, marked = "weakly", ()
    elif np.all(np.diff(hits) > 1) and hits.size < len(times):
        kind, marked = "discretely_monitored", tuple(times[i] for i in hits)
    elif hits[0] > 0:
        kind, marked = "delayed", (times[hits[0]],)
    else:
        kind, marked = "strongly", ()
    return PathDependenceClass(kind, tuple(times), tuple(evidence), marked)
