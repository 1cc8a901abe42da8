import math

import pytest
from hypothesis import given, strategies as st

from shortfall.model import (
    Frictions,
    InvalidParameterError,
    MarketParams,
    calibrate,
    stock_price,
)


def test_calibrate_example():
    spec = calibrate(MarketParams(S0=1.0, sigma=0.2, kappa=0.02, T=1.0), 4)
    assert spec.delta == pytest.approx(0.1, abs=1e-15)
    assert spec.a_n == pytest.approx(1.0 - math.exp(-0.1), abs=1e-15)
    assert spec.a_n == pytest.approx(0.0951626, abs=1e-7)
    assert spec.b_n == pytest.approx(0.1051709, abs=1e-7)


def test_probability_formula():
    p = MarketParams(sigma=0.3, kappa=0.05, T=2.0)
    spec = calibrate(p, 7)
    expected = 1.0 / (math.exp((0.3 - 2 * 0.05 / 0.3) * math.sqrt(2.0 / 7)) + 1.0)
    assert spec.p_n == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("n", [1, 2, 5, 64, 1000])
def test_half_probability_when_kappa_is_half_variance(n):
    sigma = 0.35
    spec = calibrate(MarketParams(sigma=sigma, kappa=sigma**2 / 2), n)
    assert spec.p_n == pytest.approx(0.5, abs=1e-15)


@given(
    sigma=st.floats(0.05, 2.0),
    kappa=st.floats(-0.5, 0.5),
    T=st.floats(0.01, 10.0),
    n=st.integers(1, 10_000),
)
def test_lattice_invariants(sigma, kappa, T, n):
    spec = calibrate(MarketParams(sigma=sigma, kappa=kappa, T=T), n)
    assert (1.0 + spec.b_n) * (1.0 - spec.a_n) == pytest.approx(1.0, abs=1e-12)
    assert 0.0 < spec.a_n < 1.0
    assert spec.a_n < spec.b_n
    assert 0.0 < spec.p_n < 1.0


def test_rate_of_a_and_b():
    p = MarketParams(sigma=0.25, T=1.5)
    target = 0.25 * math.sqrt(1.5)
    for n in (10**4, 10**6):
        spec = calibrate(p, n)
        assert spec.a_n * math.sqrt(n) == pytest.approx(target, rel=0.01)
        assert spec.b_n * math.sqrt(n) == pytest.approx(target, rel=0.01)


@pytest.mark.parametrize("kappa", [-0.3, 0.0, 0.1, 0.5])
def test_probability_tends_to_half_monotonically(kappa):
    p = MarketParams(sigma=0.2, kappa=kappa)
    gaps = [abs(calibrate(p, n).p_n - 0.5) for n in (1, 4, 16, 64, 256, 1024, 10**6)]
    assert all(g1 >= g2 for g1, g2 in zip(gaps, gaps[1:]))
    assert gaps[-1] < 2e-3


def test_stock_price_examples():
    params = MarketParams(S0=1.0, sigma=0.2, T=1.0)
    spec = calibrate(params, 4)
    assert stock_price(spec, params, 0, 0) == 1.0
    assert stock_price(spec, params, 2, 1) == pytest.approx(1.0, abs=1e-15)
    assert stock_price(spec, params, 3, 3) == pytest.approx(1.3498588, abs=1e-7)


def test_stock_price_recombines():
    params = MarketParams(S0=2.5, sigma=0.4, T=1.0)
    spec = calibrate(params, 6)
    # up then down equals down then up: only the up-count enters
    s = params.S0
    for z in (1, -1, -1, 1, 1):
        s *= spec.up if z > 0 else spec.down
    assert s == pytest.approx(stock_price(spec, params, 5, 3), rel=1e-14)


@pytest.mark.parametrize("k, j", [(-1, 0), (3, 4), (5, 0), (2, -1)])
def test_stock_price_out_of_range(k, j):
    params = MarketParams()
    with pytest.raises(IndexError):
        stock_price(calibrate(params, 4), params, k, j)


@pytest.mark.parametrize(
    "kwargs", [dict(S0=0.0), dict(sigma=0.0), dict(T=-1.0), dict(sigma=-0.1), dict(kappa=math.nan)]
)
def test_invalid_market(kwargs):
    with pytest.raises(InvalidParameterError):
        MarketParams(**kwargs)


def test_invalid_steps():
    with pytest.raises(InvalidParameterError):
        calibrate(MarketParams(), 0)


@pytest.mark.parametrize("lam, mu", [(-0.01, 0.0), (0.0, 1.0), (0.0, -0.1)])
def test_invalid_frictions(lam, mu):
    with pytest.raises(InvalidParameterError):
        Frictions(lam, mu)


def test_zero_frictions_allowed():
    assert Frictions(0.0, 0.0).lam == 0.0
