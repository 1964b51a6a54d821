"""Config-driven experiment runner.

Verbs: ``run``, ``classify``, ``dump-paths``. Exit status is 0 on success,
2 on a configuration or validation error, 3 on a numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import greeks as G
from .funcderiv import DerivativeConfig, classify as classify_functional
from .models import BlackScholes, QVFeedbackVol, VolatilityModel, bachelier, cev, dump_batch_csv, simulate
from .payoffs import Contract, make_contract
from .rng import derive_seed

log = logging.getLogger("pathgreeks")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Parsed experiment: model, contract, estimator requests and MC settings."""

    name: str
    model: VolatilityModel
    x0: float
    contract: Contract
    mc: G.MonteCarloConfig
    estimators: tuple[str, ...] = ("price", "delta")
    weight: G.WeightSpec = field(default_factory=G.WeightSpec.weakly)
    control_variate: bool = False
    fd: dict = field(default_factory=dict)
    surface: dict | None = None
    classify: dict | None = None
    dump: dict = field(default_factory=dict)
    output: Path = Path("out")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _model(sec: configparser.SectionProxy) -> VolatilityModel:
    kind = sec.get("kind", "black_scholes")
    sigma = sec.getfloat("sigma")
    if sigma is None:
        raise ConfigError("[model] needs sigma")
    if kind == "black_scholes":
        return BlackScholes(sigma)
    if kind == "bachelier":
        return bachelier(sigma)
    if kind == "cev":
        return cev(sigma, sec.getfloat("beta", 1.0))
    if kind == "qv_feedback":
        return QVFeedbackVol(sigma, sec.getfloat("alpha", 0.0))
    raise ConfigError(f"unknown model kind {kind!r}")


def _allocation(sec, n_steps: int, horizon: float, until: float) -> G.AllocationFunction:
    kind = sec.get("allocation", "uniform")
    if kind == "uniform":
        return G.AllocationFunction.uniform(until, n_steps, horizon)
    if kind == "linear":
        return G.AllocationFunction.from_callable(
            lambda t: np.where(t < until, 2 * t / until**2, 0.0), n_steps, horizon
        )
    if kind == "constant":
        value = sec.getfloat("allocation_value")
        if value is None:
            raise ConfigError("allocation = constant needs allocation_value")
        return G.AllocationFunction.from_callable(
            lambda t: np.where(t < until, value, 0.0), n_steps, horizon
        )
    raise ConfigError(f"unknown allocation {kind!r}")


def load_config(path: str | Path, out: str | None = None, seed: int | None = None,
                threads: int | None = None) -> ExperimentConfig:
    """Parse an INI experiment file; command-line overrides win."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise ConfigError(f"cannot read config {path}")
    for s in ("model", "contract", "mc"):
        if not cp.has_section(s):
            raise ConfigError(f"config is missing section [{s}]")
    try:
        model = _model(cp["model"])
        x0 = cp["model"].getfloat("x0", 100.0)
        c = dict(cp["contract"])
        label = c.pop("label", None)
        if label is None:
            raise ConfigError("[contract] needs label")
        maturity = float(c.pop("maturity", 1.0))
        contract = make_contract(label, c, maturity)
        m = cp["mc"]
        mc = G.MonteCarloConfig(
            n_paths=m.getint("n_paths"),
            n_steps=m.getint("n_steps"),
            seed=m.getint("seed", 0) if seed is None else seed,
            block_size=m.getint("block_size", G.DEFAULT_BLOCK_SIZE),
            threads=threads or m.getint("threads", 1),
        )
        gs = cp["greeks"] if cp.has_section("greeks") else cp["DEFAULT"]
        estimators = tuple(e.strip() for e in gs.get("estimators", "price, delta").split(",") if e.strip())
        unknown = set(estimators) - set(G.GREEKS)
        if unknown:
            raise ConfigError(f"unknown estimators {sorted(unknown)}")
        wkind = gs.get("weight", "weakly")
        if wkind == "weakly":
            weight = G.WeightSpec.weakly()
        elif wkind == "delayed":
            t1 = gs.getfloat("t1")
            if t1 is None:
                raise ConfigError("delayed weight needs t1")
            weight = G.WeightSpec.delayed(_allocation(gs, mc.n_steps, maturity, t1), t1)
        elif wkind == "discrete":
            if not contract.monitoring:
                raise ConfigError("discrete weight needs a discretely monitored contract")
            weight = G.WeightSpec.discrete(_allocation(gs, mc.n_steps, maturity, contract.monitoring[0]))
        else:
            raise ConfigError(f"unknown weight {wkind!r}")
        fd = {}
        for key in ("fd_delta", "fd_gamma", "fd_vega_sigma2"):
            if gs.get(key):
                fd[key[3:]] = float(gs.get(key))
        surface = None
        if cp.has_section("vega_surface"):
            v = cp["vega_surface"]
            surface = {
                "bins": v.getint("bins", 40),
                "time_stride": v.getint("time_stride", 1),
                "min_occupancy": v.getint("min_occupancy", 50),
                "n_paths": v.getint("n_paths", min(mc.n_paths, 20000)),
            }
        cl = None
        if cp.has_section("classify"):
            k = cp["classify"]
            cl = {
                "probe_times": _floats(k.get("probe_times", "")),
                "probe_paths": k.getint("probe_paths", 4),
                "inner_paths": k.getint("inner_paths", 512),
                "tol": k.getfloat("tol", 1e-2),
                "h": k.getfloat("h", fallback=None),
                "dt_steps": k.getint("dt_steps", 1),
            }
        dump = {"n_paths": cp.getint("dump", "n_paths", fallback=min(mc.n_paths, 100))}
        out_dir = Path(out) if out else Path(cp.get("output", "dir", fallback="out"))
        control_variate = gs.getboolean("control_variate", False)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    return ExperimentConfig(
        name=Path(path).stem, model=model, x0=x0, contract=contract, mc=mc,
        estimators=estimators, weight=weight, control_variate=control_variate, fd=fd,
        surface=surface, classify=cl, dump=dump, output=out_dir,
    )


def _print_table(rows) -> None:
    print(f"{'label':<20}{'mean':>16}{'std_error':>14}{'n_paths':>10}{'seed':>22}")
    for e in rows:
        print(f"{e.label:<20}{e.mean:>16.6g}{e.std_error:>14.4g}{e.n_paths:>10d}{e.seed:>22d}")


def cmd_run(cfg: ExperimentConfig) -> int:
    cfg.output.mkdir(parents=True, exist_ok=True)
    est = list(cfg.estimators)
    run = G.estimate_greeks(
        cfg.model, cfg.contract, cfg.x0, cfg.mc, est, cfg.weight, control_variate=cfg.control_variate
    )
    rows = [run.estimates[k] for k in est]
    for which, b in cfg.fd.items():
        rows.append(G.fd_greek(cfg.model, cfg.contract, which, b, cfg.x0, cfg.mc))
    G.write_estimates_csv(rows, cfg.output / "results.csv")
    G.write_convergence_csv(run.samples, cfg.output / "convergence.csv")
    if cfg.surface is not None:
        s = cfg.surface
        batch = simulate(cfg.model, cfg.x0, cfg.contract.maturity, cfg.mc.n_steps, s["n_paths"],
                         cfg.mc.seed, cfg.mc.block_size, cfg.mc.threads)
        surf = G.vega_surface(batch, cfg.contract, cfg.model, s["bins"], s["time_stride"], s["min_occupancy"])
        surf.write_csv(cfg.output / "vega_surface.csv")
    for e in rows:
        if not (math.isfinite(e.mean) and math.isfinite(e.std_error)):
            raise G.NonFiniteEstimate(f"{e.label} is not finite")
    _print_table(rows)
    return EXIT_OK


def cmd_classify(cfg: ExperimentConfig) -> int:
    if cfg.classify is None or not cfg.classify["probe_times"]:
        raise ConfigError("classify needs a [classify] section with probe_times")
    k = cfg.classify
    cfg.output.mkdir(parents=True, exist_ok=True)
    T = cfg.contract.maturity
    probes = simulate(cfg.model, cfg.x0, T, cfg.mc.n_steps, k["probe_paths"], cfg.mc.seed)
    inner = G.MonteCarloConfig(k["inner_paths"], cfg.mc.n_steps, derive_seed(cfg.mc.seed, 1), cfg.mc.block_size)
    f = G.InnerPrice(cfg.model, cfg.contract, inner)
    dcfg = DerivativeConfig(h=k["h"], dt_steps=k["dt_steps"])
    result = classify_functional(f, [probes.path(i) for i in range(probes.n_paths)],
                                 k["probe_times"], dcfg, k["tol"])
    result.write_evidence_csv(cfg.output / "evidence.csv")
    (cfg.output / "label.txt").write_text(result.label + "\n")
    print(result.label)
    return EXIT_OK


def cmd_dump(cfg: ExperimentConfig) -> int:
    cfg.output.mkdir(parents=True, exist_ok=True)
    batch = simulate(cfg.model, cfg.x0, cfg.contract.maturity, cfg.mc.n_steps, cfg.dump["n_paths"],
                     cfg.mc.seed, cfg.mc.block_size, cfg.mc.threads)
    dump_batch_csv(batch, cfg.output / "paths.csv")
    print(f"wrote {batch.n_paths} paths to {cfg.output / 'paths.csv'}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "classify": cmd_classify, "dump-paths": cmd_dump}


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``vko_table2``."""
    return Path(str(resources.files("pathgreeks") / "configs" / f"{name}.ini"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathgreeks", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True,
                   help="INI file, or the name of a bundled config (e.g. vko_table2)")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--seed-override", type=int, help="replace the configured seed")
    p.add_argument("--threads", type=int, help="worker threads for simulation")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    path = Path(args.config)
    if not path.exists() and not path.suffix:
        path = bundled_config(args.config)
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(path, args.out, args.seed_override, args.threads)
        log.info("loaded %s: %s under %r", path, cfg.contract, cfg.model)
        return COMMANDS[args.verb](cfg)
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
