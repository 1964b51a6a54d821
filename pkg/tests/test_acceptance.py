"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Reference values for the two contract tables are Monte Carlo estimates with quoted SEs;
agreement is measured in combined standard errors.
"""
import filecmp

import numpy as np
import pytest

from pathgreeks import closed_form
from pathgreeks.cli import main as cli_main
from pathgreeks.funcderiv import DEFAULT_CONFIG, lie_bracket
from pathgreeks.greeks import (
    AllocationFunction,
    MonteCarloConfig,
    WeightSpec,
    delta_weight,
    estimate_greeks,
    gamma_weight,
    martingale_diagnostic,
    strong_correction,
)
from pathgreeks.models import BlackScholes, simulate
from pathgreeks.pathcore import (
    DiscretePath,
    double_time_integral,
    pathwise_integral,
    quadratic_variation,
    terminal_value,
    time_integral,
)
from pathgreeks.payoffs import asian_forward_start, average_price, european_call, vko_call


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        return ok

    return emit


def _z(est, ref, ref_se):
    return est.z_score(ref, ref_se)


def test_criterion_1_vko_table(report):
    model = BlackScholes(0.25)
    mc = MonteCarloConfig(200_000, 52, 20240601)
    run = estimate_greeks(model, vko_call(100, 0.06), 100.0, mc, ("price", "delta", "gamma"))
    ref = {"price": (4.2128, 0.11432), "delta": (0.2166, 0.00833), "gamma": (0.00469, 0.000527)}
    parts, ok = [], True
    for name, (value, se) in ref.items():
        e = run.estimates[name]
        z = _z(e, value, se)
        ok &= z < 4 and e.std_error <= se
        parts.append(f"{name} {e.mean:.5g}+-{e.std_error:.2g} vs {value} ({z:.2f} SE)")
    assert report(1, "VKO call table", ok, "; ".join(parts))


def test_criterion_2_asian_table(report):
    model = BlackScholes(0.2)
    n_steps = 500
    spec = WeightSpec.delayed(AllocationFunction.uniform(0.2, n_steps, 1.0), 0.2)
    mc = MonteCarloConfig(200_000, n_steps, 20240602)
    run = estimate_greeks(model, asian_forward_start(0.2), 100.0, mc, ("price", "delta"), spec)
    ref = {"price": (3.5200, 0.0199), "delta": (0.0352, 0.00259)}
    parts, ok = [], True
    for name, (value, se) in ref.items():
        e = run.estimates[name]
        z = _z(e, value, se)
        good = z < 4 and e.std_error <= se
        ok &= good
        parts.append(f"{name} {e.mean:.5g}+-{e.std_error:.2g} vs {value} ({z:.2f} SE, {'ok' if good else 'off'})")
    assert report(2, "forward-start Asian table", ok, "; ".join(parts))


def test_criterion_3_closed_form_oracles(report):
    x0 = K = 100.0
    s, T = 0.25, 1.0
    mc = MonteCarloConfig(1_000_000, 50, 303)
    run = estimate_greeks(BlackScholes(s), european_call(K), x0, mc, ("delta", "gamma", "vega"),
                          control_variate=True)
    d, g, v = (run.estimates[k] for k in ("delta", "gamma", "vega"))
    d_ref = closed_form.call_delta(x0, K, s, T)
    g_ref = closed_form.call_gamma(x0, K, s, T)
    v_ref = closed_form.call_vega_variance(x0, K, s, T)
    checks = [
        d.z_score(d_ref) < 3,
        g.z_score(g_ref) < 3,
        abs(v.mean / v_ref - 1) < 0.03,
        all(e.relative_se() < 0.01 for e in (d, g, v)),
    ]
    detail = (
        f"delta {d.mean:.5f} vs {d_ref:.5f} ({d.z_score(d_ref):.2f} SE); "
        f"gamma {g.mean:.6f} vs {g_ref:.6f} ({g.z_score(g_ref):.2f} SE); "
        f"vega {v.mean:.3f} vs {v_ref:.3f} ({100 * (v.mean / v_ref - 1):+.2f}%); "
        f"rel SE {d.relative_se():.2%}/{g.relative_se():.2%}/{v.relative_se():.2%}"
    )
    assert report(3, "Black-Scholes closed forms", all(checks), detail)


def test_criterion_4_pathwise_identities(report):
    x0, s, T = 100.0, 0.25, 1.0
    b = simulate(BlackScholes(s), x0, T, 50, 2000, seed=404)
    w = b.brownian.sum(axis=1)

    def rel(a, ref):
        scale = np.maximum(np.abs(ref), np.abs(ref).mean())
        return float(np.max(np.abs(a - ref) / scale))

    pi_err = rel(delta_weight(b), w / (x0 * s * T))
    z_err = rel(b.tangent, b.paths / x0)
    xi_ref = (w * w / (s * T) - w - 1 / s) / (x0 * x0 * s * T)
    xi_err = rel(gamma_weight(b), xi_ref)
    ito_err = 0.0
    for i in range(b.n_paths):
        p = b.path(i)
        lhs = p.terminal**2 - p.values[0] ** 2 - 2 * pathwise_integral(terminal_value, p)
        qv = quadratic_variation(p)
        ito_err = max(ito_err, abs(lhs - qv) / qv)
    errs = {"pi": pi_err, "z": z_err, "xi": xi_err, "ito": ito_err}
    ok = all(e <= 1e-10 for e in errs.values())
    assert report(4, "pathwise identities", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


def test_criterion_5_lie_bracket_values(report):
    rng = np.random.default_rng(505)
    paths = []
    for _ in range(10):
        w = np.concatenate([[0], np.cumsum(rng.standard_normal(100))]) * 0.1
        paths.append(DiscretePath(0.01, 100 * np.exp(0.25 * w)))
    one = max(abs(lie_bracket(time_integral, p, DEFAULT_CONFIG) - 1) for p in paths)
    zero = max(abs(lie_bracket(double_time_integral, p, DEFAULT_CONFIG)) for p in paths)
    polys = [
        lambda q: q.terminal**2,
        lambda q: q.time * q.terminal**3 / 1e4,
        lambda q: time_integral(q) * q.terminal / 100,
        lambda q: time_integral(q) ** 2 / 100,
        lambda q: double_time_integral(q) + q.time**2 * q.terminal,
    ]
    gap = max(
        abs(lie_bracket(f, p, mode="limit") - lie_bracket(f, p, mode="nested")) for f in polys for p in paths
    )
    ok = one <= 1e-3 and zero <= 1e-3 and gap <= 1e-6
    detail = f"|L(int y)-1| {one:.1e}, |L(int int y)| {zero:.1e}, estimator gap {gap:.1e}"
    assert report(5, "Lie bracket known values", ok, detail)


def test_criterion_6_martingale_diagnostic(report):
    mc = MonteCarloConfig(200_000, 100, 606)
    rep = martingale_diagnostic(BlackScholes(0.25), european_call(100), 100.0, [0, 0.25, 0.5, 0.75], mc,
                                delta_fn=closed_form.call_delta_functional(100, 0.25, 1.0))
    target = closed_form.call_delta(100, 100, 0.25, 1.0)
    zs = [e.z_score(target) for e in rep.estimates]
    ok = all(z < 3 for z in zs)
    detail = ", ".join(f"t={t:g}: {e.mean:.5f} ({z:.2f} SE)" for t, e, z in zip(rep.times, rep.estimates, zs))
    assert report(6, "martingale diagnostic", ok, detail + f"; max pairwise {rep.max_deviation:.2f}")


def test_criterion_7_strong_correction(report):
    bs = BlackScholes(0.25)
    euro = strong_correction(bs, european_call(100), 100.0, MonteCarloConfig(50, 50, 701),
                             MonteCarloConfig(256, 50, 702), s_stride=5)
    synth = strong_correction(bs, european_call(100), 100.0, MonteCarloConfig(4000, 50, 703),
                              MonteCarloConfig(2, 50, 704), s_stride=5, price_functional=time_integral)
    avg = average_price()
    corr = strong_correction(bs, avg, 100.0, MonteCarloConfig(1000, 100, 705), MonteCarloConfig(8, 100, 706),
                             s_stride=10)
    weak = estimate_greeks(bs, avg, 100.0, MonteCarloConfig(1_000_000, 100, 707), ("delta",)).estimates["delta"]
    total = weak.mean + corr.mean
    ok = euro.z_score(0.0) < 3 and synth.z_score(0.5) < 3 and abs(total - 1) < 0.02
    detail = (
        f"european {euro.mean:.2e}+-{euro.std_error:.1e}; synthetic {synth.mean:.4f}+-{synth.std_error:.1e}; "
        f"average: weakly {weak.mean:.4f} + correction {corr.mean:.4f} = {total:.4f}"
    )
    assert report(7, "strong-correction oracles", ok, detail)


def test_criterion_8_variance_minimization(report):
    n_steps = 500
    b = simulate(BlackScholes(0.2), 100.0, 1.0, n_steps, 100_000, seed=808)
    c = asian_forward_start(0.2)
    flat = AllocationFunction.uniform(0.2, n_steps, 1.0)
    ramp = AllocationFunction.from_callable(lambda t: np.where(t < 0.2, 2 * t / 0.04, 0.0), n_steps, 1.0)
    v_flat = delta_weight(b, WeightSpec.delayed(flat, 0.2), c).var(ddof=1)
    v_ramp = delta_weight(b, WeightSpec.delayed(ramp, 0.2), c).var(ddof=1)
    ok = v_flat < v_ramp
    assert report(8, "variance minimization", ok, f"var(pi) flat {v_flat:.4e} < ramp {v_ramp:.4e}")


def test_criterion_9_determinism(tmp_path, report):
    outs = []
    for t in (1, 4, 8):
        out = tmp_path / f"threads{t}"
        assert cli_main(["run", "--config", "vko_table2", "--out", str(out), "--threads", str(t)]) == 0
        outs.append(out)
    names = ("results.csv", "convergence.csv", "vega_surface.csv")
    same = all(filecmp.cmp(outs[0] / n, o / n, shallow=False) for n in names for o in outs[1:])
    assert report(9, "determinism across threads", same, f"{', '.join(names)} identical for 1/4/8 threads: {same}")
