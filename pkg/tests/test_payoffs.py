import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pathgreeks import closed_form
from pathgreeks.models import BlackScholes, simulate
from pathgreeks.pathcore import DiscretePath, flat_extension
from pathgreeks.payoffs import (
    asian_forward_start,
    average_price,
    constant,
    discretely_monitored,
    european_call,
    forward,
    make_contract,
    two_date_call,
    vko_call,
)

positive_paths = arrays(np.float64, st.integers(2, 40), elements=st.floats(1.0, 500.0))


def path(values, T=1.0):
    values = np.asarray(values, dtype=float)
    return DiscretePath(T / (values.size - 1), values)


def test_european_call_examples():
    c = european_call(100)
    assert c(path([100, 110])) == 10
    assert c(path([100, 90])) == 0
    with pytest.raises(ValueError):
        european_call(0)


def test_european_call_prices_bs():
    b = simulate(BlackScholes(0.25), 100.0, 1.0, 1, 400_000, seed=1)
    g = european_call(100).evaluate(b.paths, b.grid_step)
    se = g.std(ddof=1) / math.sqrt(g.size)
    assert abs(g.mean() - closed_form.call_price(100, 100, 0.25, 1.0)) < 3 * se


def test_vko_call_examples():
    c = vko_call(90, 0.06)
    assert c(path([100, 100, 100])) == 10
    with pytest.raises(ValueError):
        c(path([100, -1, 100]))
    with pytest.raises(ValueError):
        c.evaluate(np.array([[100.0, 0.0, 100.0]]), 0.5)
    with pytest.raises(ValueError):
        vko_call(100, 0)


@given(positive_paths)
def test_vko_with_infinite_barrier_is_european(v):
    p = path(v)
    assert vko_call(100, math.inf)(p) == european_call(100)(p)


def test_vko_knocks_out_on_realized_variance():
    p = path([100, 130, 90, 125])
    assert vko_call(100, 0.06)(p) == 0.0
    assert vko_call(100, 10.0)(p) == 25.0


def test_vko_scalar_and_batch_agree():
    b = simulate(BlackScholes(0.25), 100.0, 1.0, 52, 200, seed=2)
    c = vko_call(100, 0.06)
    batch = c.evaluate(b.paths, b.grid_step)
    single = np.array([c(b.path(i)) for i in range(b.n_paths)])
    np.testing.assert_allclose(batch, single, rtol=1e-12)


def test_asian_examples():
    c = asian_forward_start(0.5)
    assert c(path(np.full(11, 100.0))) == 0.0
    ramp = np.linspace(100, 110, 11)
    # average of the ramp on [0.5, 1] is 107.5
    assert c(path(ramp)) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        asian_forward_start(0.0)
    with pytest.raises(ValueError):
        asian_forward_start(1.0)


def test_asian_ramp_from_the_start():
    # t1 close to 0: the average covers almost the whole ramp
    ramp = np.linspace(100, 110, 1001)
    assert asian_forward_start(1e-3)(path(ramp)) == pytest.approx(5.0, abs=0.01)


def test_asian_snaps_t1_with_warning():
    c = asian_forward_start(0.33)
    with pytest.warns(UserWarning, match="snapped"):
        c(path(np.linspace(100, 110, 11)))


def even_grid(v):
    """Path with an even number of steps, so t = 0.5 is a grid time."""
    return path(v if v.size % 2 == 1 else np.concatenate([v, v[-1:]]))


@given(positive_paths, st.integers(1, 5))
def test_asian_invariant_under_extension_beyond_maturity(v, k):
    c = asian_forward_start(0.5)
    p = even_grid(v)
    assert c(flat_extension(p, k)) == c(p)


def test_paths_shorter_than_maturity_rejected():
    with pytest.raises(ValueError):
        european_call(100).evaluate(np.ones((2, 3)), 0.1)


def test_discretely_monitored_examples():
    ident = discretely_monitored(lambda y: y, [1.0])
    assert ident(path([100, 105, 99])) == 99
    mx = discretely_monitored(np.maximum, [0.5, 1.0])
    assert mx(path([100, 120, 90])) == 120
    with pytest.raises(ValueError):
        discretely_monitored(lambda: 0, [])
    with pytest.raises(ValueError):
        discretely_monitored(np.maximum, [0.5, 0.5])
    assert mx.monitoring == (0.5, 1.0)


def test_two_date_call_against_quadrature():
    K, s, t1, x0 = 100.0, 0.25, 0.5, 100.0
    b = simulate(BlackScholes(s), x0, 1.0, 2, 400_000, seed=3)
    g = two_date_call(K, t1).evaluate(b.paths, b.grid_step)
    # two independent Gaussian increments of the log-price
    z, w = np.polynomial.hermite_e.hermegauss(80)
    w = w / w.sum()
    y1 = x0 * np.exp(s * math.sqrt(t1) * z - 0.5 * s * s * t1)
    y2 = y1[:, None] * np.exp(s * math.sqrt(1 - t1) * z[None, :] - 0.5 * s * s * (1 - t1))
    exact = np.sum(w[:, None] * w[None, :] * np.maximum(0.5 * (y1[:, None] + y2) - K, 0))
    assert abs(g.mean() - exact) < 3 * g.std(ddof=1) / math.sqrt(g.size)


@given(positive_paths, st.floats(0.1, 10.0))
def test_positive_homogeneity(v, lam):
    p, scaled = path(v), path(lam * v)
    assert european_call(lam * 100)(scaled) == pytest.approx(lam * european_call(100)(p), rel=1e-12, abs=1e-12)
    asian = asian_forward_start(0.5)
    assert asian(even_grid(lam * v)) == pytest.approx(lam * asian(even_grid(v)), rel=1e-9, abs=1e-9)


def test_average_price_rules():
    p = path([1.0, 2.0, 3.0])
    assert average_price()(p) == pytest.approx(1.5)
    assert average_price(rule="trapezoid")(p) == pytest.approx(2.0)
    assert average_price(strike=1.8)(p) == 0.0
    with pytest.raises(ValueError):
        average_price(rule="simpson")


def test_forward_and_constant():
    p = path([100.0, 97.0])
    assert forward()(p) == 97.0
    assert constant(3.0)(p) == 3.0


def test_registry():
    c = make_contract("vko_call", {"strike": "100", "barrier": "0.06"}, 1.0)
    assert c.params == {"strike": 100.0, "barrier": 0.06}
    assert make_contract("vko_call", {"strike": "100"}, 1.0).params["barrier"] == math.inf
    with pytest.raises(KeyError, match="unknown contract"):
        make_contract("digital", {}, 1.0)
    with pytest.raises(KeyError, match="strike"):
        make_contract("european_call", {}, 1.0)


def test_on_grid_times_do_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        asian_forward_start(0.2)(path(np.linspace(100, 101, 501)))
