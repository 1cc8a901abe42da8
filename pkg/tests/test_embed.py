import itertools
import math

import numpy as np
import pytest

from shortfall.dp import GridSpec, PolicyTree, solve
from shortfall.embed import (
    CrossingRecord,
    DriverPath,
    IncompleteRecordError,
    SimConfig,
    convergence_diagnostics,
    extract_crossings,
    gaussian_draws,
    lift_strategy,
    shortfall_bracket,
    sign_law_test,
    simulate_driver,
    simulate_records,
)
from shortfall.friction import InconsistentPricesError
from shortfall.model import Frictions, InvalidParameterError, MarketParams, calibrate
from shortfall.payoff import PayoffSpec, zero_payoff

from conftest import BENCH

SMALL = GridSpec(n_u=33, n_v=65, w_candidates=33)


def test_ramp_crossings():
    n, T, sigma = 4, 1.0, 0.2
    params = MarketParams(S0=1.3, sigma=sigma, kappa=0.0, T=T)
    h = math.sqrt(T / n)
    slope = 2.1
    times = np.linspace(0.0, 4.0, 4001)
    path = DriverPath(times, math.log(1.3) / sigma + slope * times, sigma)
    rec = extract_crossings(path, n, params)
    exact = np.arange(n + 1) * h / slope
    dt = times[1]
    assert rec.completed
    assert rec.signs == (1,) * n
    assert np.all(rec.theta >= exact - 1e-12)
    assert np.all(rec.theta - exact < dt + 1e-12)
    np.testing.assert_allclose(rec.prices, 1.3 * np.exp(sigma * h * np.arange(n + 1)), rtol=1e-14)


def test_falling_ramp_is_incomplete_past_horizon():
    params = MarketParams(T=1.0)
    times = np.linspace(0.0, 1.0, 101)
    path = DriverPath(times, -0.6 * times, 0.2)
    rec = extract_crossings(path, 4, params)
    assert not rec.completed
    assert rec.signs == (-1,)
    assert len(rec.theta) == 2


def test_driver_starts_at_log_price_and_exponentiates():
    params = MarketParams(S0=1.7, sigma=0.3, kappa=0.02)
    path = simulate_driver(params, SimConfig(fine_steps=500, paths=1), 3)
    assert path.prices[0] == pytest.approx(1.7, rel=1e-15)
    np.testing.assert_allclose(np.log(path.prices), 0.3 * path.wstar, rtol=1e-14)


def test_driver_moments():
    params = MarketParams(S0=1.0, sigma=0.25, kappa=0.04, T=1.0)
    cfg = SimConfig(fine_steps=200, T_sim=1.0, paths=4000, seed=5)
    ends = np.array([simulate_driver(params, cfg, i).wstar[-1] for i in range(cfg.paths)])
    drift = params.kappa / params.sigma - params.sigma / 2
    se = 1.0 / math.sqrt(cfg.paths)
    assert abs(ends.mean() - drift) < 4 * se
    assert abs(ends.var(ddof=1) - 1.0) < 4 * math.sqrt(2.0 / cfg.paths)
    prices = np.exp(params.sigma * ends)
    assert abs(prices.mean() - math.exp(params.kappa)) < 4 * prices.std() / math.sqrt(cfg.paths)


def test_paths_keyed_by_seed_and_index():
    cfg = SimConfig(fine_steps=300, paths=5, seed=11)
    assert np.array_equal(gaussian_draws(cfg, 3), gaussian_draws(cfg, 3))
    assert not np.array_equal(gaussian_draws(cfg, 3), gaussian_draws(cfg, 4))
    assert not np.array_equal(gaussian_draws(cfg, 3), gaussian_draws(SimConfig(300, None, 5, 12), 3))
    batch = {i: rec for i, _, rec in simulate_records(BENCH, 2, cfg)}
    alone = next(simulate_records(BENCH, 2, SimConfig(300, None, 1, 11), start=3))[2]
    assert np.array_equal(batch[3].theta, alone.theta)


def test_resolution_guard():
    with pytest.raises(InvalidParameterError):
        next(simulate_records(BENCH, 16, SimConfig(fine_steps=800)))
    with pytest.raises(InvalidParameterError):
        SimConfig(seed=-1)
    with pytest.raises(InvalidParameterError):
        SimConfig(T_sim=0.5).horizon(BENCH)


def test_crossing_prices_sit_on_the_lattice():
    n = 8
    spec = calibrate(BENCH, n)
    for _, _, rec in simulate_records(BENCH, n, SimConfig(fine_steps=1600, paths=20, seed=2)):
        levels = np.concatenate(([0], np.cumsum(rec.signs)))
        np.testing.assert_allclose(rec.prices, BENCH.S0 * np.exp(spec.delta * levels), rtol=1e-14)
        assert np.all(np.diff(rec.theta) > 0)


# --------------------------------------------------------------------------
# lifting
# --------------------------------------------------------------------------


def _records(n, paths=30, seed=4):
    cfg = SimConfig(fine_steps=200 * n, paths=paths, seed=seed)
    return [rec for _, _, rec in simulate_records(BENCH, n, cfg) if rec.completed]


def test_lifted_wealth_equals_lattice_wealth():
    n = 6
    spec = calibrate(BENCH, n)
    fr = Frictions(0.01, 0.02)
    sol = solve(spec, BENCH, PayoffSpec("call"), fr, SMALL)
    tree = PolicyTree(sol, 0.04)
    for rec in _records(n):
        lifted = lift_strategy(tree, rec, 0.04, spec, fr)
        assert lifted.violations == 0


def test_zero_strategy_keeps_cash():
    n = 4
    spec = calibrate(BENCH, n)
    tree = {p: 0.0 for k in range(n) for p in itertools.product((1, -1), repeat=k)}
    for rec in _records(n, paths=10):
        lifted = lift_strategy(tree, rec, 0.3, spec, Frictions(0.01, 0.01))
        assert np.all(lifted.wealth == 0.3)


def test_lift_rejects_incomplete_and_off_lattice_records():
    n = 2
    spec = calibrate(BENCH, n)
    tree = {(): 0.1, (1,): 0.0, (-1,): 0.0}
    partial = CrossingRecord(2, np.array([0.0, 0.3]), np.array([0, 30]), (1,), np.array([1.0, 1.2]), False)
    with pytest.raises(IncompleteRecordError):
        lift_strategy(tree, partial, 0.1, spec, Frictions())
    bad = CrossingRecord(2, np.array([0.0, 0.3, 0.6]), np.array([0, 30, 60]), (1, 1),
                         np.array([1.0, 1.2, 1.3]), True)
    with pytest.raises(InconsistentPricesError):
        lift_strategy(tree, bad, 0.1, spec, Frictions())


# --------------------------------------------------------------------------
# estimators
# --------------------------------------------------------------------------


def test_null_claim_bracket_is_zero():
    spec = calibrate(BENCH, 4)
    sol = solve(spec, BENCH, zero_payoff(), Frictions(0.01, 0.01), SMALL)
    br = shortfall_bracket(sol, 0.1, SimConfig(fine_steps=800, paths=50, seed=3))
    assert br.R_n == br.lower == br.payoff_gap == br.upper_proxy == 0.0
    assert br.lift_violations == 0


def test_constant_claim_has_no_payoff_gap():
    d = convergence_diagnostics(BENCH, [4], SimConfig(fine_steps=800, paths=40, seed=3),
                                payoff=PayoffSpec("constant", amount=0.5))
    assert d.get(4, "sup_payoff_gap").estimate == 0.0


def test_bracket_counts_incomplete_records():
    spec = calibrate(BENCH, 8)
    sol = solve(spec, BENCH, PayoffSpec("call"), Frictions(0.01, 0.01), SMALL)
    br = shortfall_bracket(sol, 0.03, SimConfig(fine_steps=1600, T_sim=1.0, paths=60, seed=1))
    assert br.incomplete > 0
    assert br.n_effective + br.incomplete == 60
    assert br.lift_violations == 0
    assert br.lower >= 0.0
    assert br.upper_proxy >= br.R_n


def test_embedding_errors_shrink():
    d = convergence_diagnostics(BENCH, [4, 32], SimConfig(paths=150, seed=9), steps_per_move=100)
    for name in ("sup_price_gap", "max_theta_gap", "sup_payoff_gap"):
        assert d.get(32, name).estimate < d.get(4, name).estimate
    assert d.fine_steps == {4: 400, 32: 3200}
    with pytest.raises(KeyError):
        d.get(8, "sup_price_gap")


def test_sign_counts():
    t = sign_law_test(BENCH, 4, SimConfig(fine_steps=4000, paths=200, seed=0))
    assert (t.ups + t.downs) % 4 == 0
    assert 0.0 <= t.p_value <= 1.0
    assert t.p_n == calibrate(BENCH, 4).p_n


def test_martingale_driver_has_no_drift():
    params = MarketParams(sigma=0.2, kappa=0.02)
    cfg = SimConfig(fine_steps=100, T_sim=1.0, paths=10_000, seed=21)
    incr = np.array([simulate_driver(params, cfg, i).wstar[-1] for i in range(cfg.paths)])
    assert abs(incr.mean()) < 3.0 / math.sqrt(cfg.paths)
    assert abs(incr.var(ddof=1) - 1.0) < 0.05


def test_crossing_time_bias_vanishes_with_resolution():
    # the same Brownian path refined by doubling m: detection lag shrinks
    est = []
    for m in (400, 1600, 6400):
        d = convergence_diagnostics(BENCH, [4], SimConfig(fine_steps=m, paths=300, seed=5))
        est.append(d.get(4, "max_theta_gap").estimate)
    assert abs(est[2] - est[1]) < abs(est[1] - est[0]) + 0.01


def test_lifted_wealth_stays_solvent():
    n = 8
    spec = calibrate(BENCH, n)
    fr = Frictions(0.02, 0.02)
    sol = solve(spec, BENCH, PayoffSpec("call"), fr, SMALL)
    tree = PolicyTree(sol, 0.02)
    for rec in _records(n, paths=40, seed=6):
        lifted = lift_strategy(tree, rec, 0.02, spec, fr)
        assert np.all(lifted.wealth >= -1e-12)


@pytest.mark.slow
def test_bracket_consistent_and_shrinking():
    fr = Frictions(0.01, 0.01)
    widths = []
    for n in (4, 16):
        spec = calibrate(BENCH, n)
        sol = solve(spec, BENCH, PayoffSpec("call"), fr)
        br = shortfall_bracket(sol, 0.04, SimConfig(fine_steps=200 * n, paths=1000, seed=10))
        assert br.lift_violations == 0
        assert br.lower <= br.upper_proxy + 2.0 * math.hypot(br.lower_se, br.payoff_gap_se)
        widths.append(br.width)
    assert widths[1] < widths[0]
