"""Skorohod embedding of the binomial lattice into a simulated Black-Scholes market.

The driver is ``W*(t) = ln S(t) / sigma``, a Brownian motion with drift
``kappa/sigma - sigma/2`` started at ``ln(S0)/sigma``.  Successive exits of
``W*`` from bands of half-width ``h = sqrt(T/n)`` around the last crossing
level form a random walk with up-probability ``p_n``, so the lattice price
path is realised inside the continuous one and lattice strategies can be
replayed there at the crossing times.

Paths live on a fine grid of ``m`` steps over ``[0, T_sim]``; exits are
detected at grid times without bridge correction.  Crossing levels are kept
on the ideal lattice ``W*(0) + h * (sum of signs)``, so the recorded prices
are exactly the lattice prices of the sign sequence and detection overshoot
only shifts the crossing times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numba as nb
import numpy as np
from scipy import stats

from .dp import PolicyTree, Solution, snell_value
from .friction import crossing_wealth_path, discrete_wealth_path, wealth_step
from .model import Frictions, InvalidParameterError, LatticeSpec, MarketParams, calibrate
from .payoff import PayoffSpec

LIFT_TOL = 1e-10
MIN_STEPS_PER_MOVE = 100


class IncompleteRecordError(ValueError):
    """A strategy was lifted onto a path with fewer than n crossings."""


class LiftIdentityError(AssertionError):
    """Lifted and lattice wealth disagree beyond floating-point noise."""


@dataclass(frozen=True)
class SimConfig:
    fine_steps: int = 12_800  # grid steps over [0, T_sim]
    T_sim: Optional[float] = None  # default 4 T
    paths: int = 10_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.fine_steps < 1:
            raise InvalidParameterError("fine_steps must be positive")
        if self.paths < 1:
            raise InvalidParameterError("paths must be positive")
        if self.T_sim is not None and not self.T_sim > 0.0:
            raise InvalidParameterError("T_sim must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidParameterError("seed must be a 64-bit unsigned integer")

    def horizon(self, params: MarketParams) -> float:
        T_sim = 4.0 * params.T if self.T_sim is None else self.T_sim
        if T_sim < params.T:
            raise InvalidParameterError(f"T_sim={T_sim} is shorter than the maturity {params.T}")
        return T_sim

    def check_resolution(self, n: int) -> None:
        if self.fine_steps < MIN_STEPS_PER_MOVE * n:
            raise InvalidParameterError(
                f"fine_steps={self.fine_steps} is below {MIN_STEPS_PER_MOVE} per lattice step for n={n}"
            )

    def with_steps(self, fine_steps: int) -> "SimConfig":
        return SimConfig(fine_steps, self.T_sim, self.paths, self.seed)


@dataclass(frozen=True)
class DriverPath:
    times: np.ndarray
    wstar: np.ndarray
    sigma: float

    @property
    def prices(self) -> np.ndarray:
        return np.exp(self.sigma * self.wstar)


@dataclass(frozen=True)
class CrossingRecord:
    """Band crossings of one driver path.

    ``index[k]`` is the fine-grid index of theta_k; for an incomplete record
    the arrays stop at the last crossing found before the horizon.
    """

    n: int
    theta: np.ndarray
    index: np.ndarray
    signs: Tuple[int, ...]
    prices: np.ndarray
    completed: bool


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------


def gaussian_draws(config: SimConfig, path_index: int) -> np.ndarray:
    """Standard normal draws behind path ``path_index``, keyed by (seed, path_index)."""
    rng = np.random.default_rng([config.seed, int(path_index)])
    return rng.standard_normal(config.fine_steps)


def simulate_driver(params: MarketParams, config: SimConfig, path_index: int) -> DriverPath:
    """W* on the fine grid over [0, T_sim]."""
    T_sim = config.horizon(params)
    m = config.fine_steps
    dt = T_sim / m
    drift = params.kappa / params.sigma - 0.5 * params.sigma
    steps = drift * dt + math.sqrt(dt) * gaussian_draws(config, path_index)
    wstar = np.empty(m + 1)
    wstar[0] = math.log(params.S0) / params.sigma
    np.cumsum(steps, out=wstar[1:])
    wstar[1:] += wstar[0]
    times = np.linspace(0.0, T_sim, m + 1)
    return DriverPath(times=times, wstar=wstar, sigma=params.sigma)


@nb.njit(cache=True)
def _first_exits(w, h, n):
    index = np.full(n + 1, -1, dtype=np.int64)
    signs = np.zeros(n, dtype=np.int64)
    index[0] = 0
    base = w[0]
    found = 0
    for i in range(1, w.shape[0]):
        if found == n:
            break
        d = w[i] - base
        if d >= h or d <= -h:
            s = 1 if d > 0.0 else -1
            signs[found] = s
            found += 1
            index[found] = i
            base = w[0] + h * np.sum(signs[:found])
    return index, signs, found


def extract_crossings(path: DriverPath, n: int, params: MarketParams) -> CrossingRecord:
    """First exits of W* from the +-sqrt(T/n) bands, theta_0 = 0."""
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    h = math.sqrt(params.T / n)
    index, signs, found = _first_exits(path.wstar, h, n)
    index = index[: found + 1]
    signs_t = tuple(int(z) for z in signs[:found])
    levels = np.concatenate(([0], np.cumsum(signs[:found])))
    prices = params.S0 * np.exp(params.sigma * h * levels)
    return CrossingRecord(
        n=n,
        theta=path.times[index],
        index=index,
        signs=signs_t,
        prices=prices,
        completed=found == n,
    )


def simulate_records(params: MarketParams, n: int, config: SimConfig, start: int = 0):
    """Yield (path_index, driver path, record) for ``config.paths`` paths."""
    config.check_resolution(n)
    for i in range(start, start + config.paths):
        path = simulate_driver(params, config, i)
        yield i, path, extract_crossings(path, n, params)


# --------------------------------------------------------------------------
# strategy lift
# --------------------------------------------------------------------------


@dataclass
class LiftedWealth:
    wealth: np.ndarray  # continuous-model wealth at theta_0..theta_n
    lattice: np.ndarray  # lattice wealth on the same signs
    positions: np.ndarray  # pre-trade position value at each theta_k
    transfers: np.ndarray  # transfer in stock value at each theta_k, k < n

    @property
    def violations(self) -> int:
        gap = np.abs(self.wealth - self.lattice)
        return int(np.count_nonzero(gap > LIFT_TOL * (1.0 + np.abs(self.lattice))))


def lift_strategy(
    tree: Mapping[Tuple[int, ...], float],
    record: CrossingRecord,
    x: float,
    spec: LatticeSpec,
    frictions: Frictions,
    strict: bool = True,
) -> LiftedWealth:
    """Replay a lattice strategy at the crossing times of ``record``.

    The lattice strategy is read as share counts along ``record.signs``; the
    continuous strategy holds the same counts between crossings and trades at
    the observed crossing prices.  With ``strict`` a mismatch between the two
    wealth sequences raises ``LiftIdentityError``.
    """
    if not record.completed:
        raise IncompleteRecordError(f"record has {len(record.signs)} of {record.n} crossings")
    signs = record.signs
    lattice_prices = spec_prices(spec, record.prices[0], signs)
    shares = [0.0]
    lattice_w = []
    for k in range(record.n):
        w = float(tree[signs[:k]])
        lattice_w.append(w)
        shares.append(shares[-1] + w / lattice_prices[k])
    # trades of the lifted strategy, valued at the crossing prices
    gamma = np.array(shares)
    lifted_w = (gamma[1:] - gamma[:-1]) * record.prices[:-1]
    lifted = crossing_wealth_path(x, lifted_w, record.prices, spec, frictions)
    lattice = discrete_wealth_path(x, lattice_w, signs, spec, frictions)
    out = LiftedWealth(wealth=lifted.V, lattice=lattice.V, positions=lifted.v, transfers=lifted_w)
    if strict and out.violations:
        k = int(np.argmax(np.abs(out.wealth - out.lattice)))
        raise LiftIdentityError(
            f"lifted wealth {out.wealth[k]!r} != lattice wealth {out.lattice[k]!r} at crossing {k}"
        )
    return out


def spec_prices(spec: LatticeSpec, S0: float, signs: Sequence[int]) -> np.ndarray:
    levels = np.concatenate(([0], np.cumsum(np.asarray(signs, dtype=np.int64))))
    return S0 * np.exp(spec.delta * levels)


# --------------------------------------------------------------------------
# estimators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    n: int
    estimator: str
    estimate: float
    std_error: float
    n_effective: int

    def row(self) -> tuple:
        return (self.n, self.estimator, self.estimate, self.std_error, self.n_effective)


def _mean_se(values: Sequence[float]) -> Tuple[float, float]:
    # fsum is exactly rounded, so the result does not depend on path order
    vals = [float(v) for v in values]
    N = len(vals)
    if N == 0:
        return math.nan, math.nan
    mean = math.fsum(vals) / N
    if N == 1:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in vals) / (N - 1)
    return mean, math.sqrt(var / N)


def _fine_payoff(payoff: PayoffSpec, prices: np.ndarray) -> np.ndarray:
    return np.asarray(payoff.value(prices, np.maximum.accumulate(prices)), dtype=float)


def _lattice_index(times: np.ndarray, n: int, T: float) -> np.ndarray:
    # k with kT/n <= t < (k+1)T/n, and k = n at t = T
    return np.minimum(np.floor(times * n / T + 1e-12).astype(np.int64), n)


def _path_gaps(path: DriverPath, record: CrossingRecord, payoff: PayoffSpec, params: MarketParams):
    """sup_{t<=T} |S^n - S|, max_k |theta_k - kT/n| and sup_{t<=T} |Y - Y^n| on one path."""
    n, T = record.n, params.T
    last = int(np.searchsorted(path.times, T, side="right"))
    times = path.times[:last]
    prices = path.prices[:last]
    k = _lattice_index(times, n, T)
    lattice_prices = record.prices[k]
    price_gap = float(np.max(np.abs(lattice_prices - prices)))
    theta_gap = float(np.max(np.abs(record.theta[1:] - np.arange(1, n + 1) * T / n)))
    y = _fine_payoff(payoff, prices)
    y_lattice = _fine_payoff(payoff, record.prices)[k]
    payoff_gap = float(np.max(np.abs(y - y_lattice)))
    return price_gap, theta_gap, payoff_gap


@dataclass
class Diagnostics:
    estimates: List[Estimate]
    incomplete: dict  # n -> number of records dropped
    fine_steps: dict  # n -> grid resolution used

    def get(self, n: int, estimator: str) -> Estimate:
        for e in self.estimates:
            if e.n == n and e.estimator == estimator:
                return e
        raise KeyError((n, estimator))


def convergence_diagnostics(
    params: MarketParams,
    n_list: Sequence[int],
    config: SimConfig,
    payoff: PayoffSpec = PayoffSpec("call"),
    steps_per_move: Optional[int] = None,
) -> Diagnostics:
    """Monte Carlo estimates of the embedding errors for each n.

    With ``steps_per_move`` the fine grid is ``steps_per_move * n`` for each
    n (fixed resolution per lattice step); otherwise ``config.fine_steps``.
    """
    estimates: List[Estimate] = []
    incomplete = {}
    used = {}
    for n in n_list:
        cfg = config if steps_per_move is None else config.with_steps(steps_per_move * n)
        used[n] = cfg.fine_steps
        gaps: List[Tuple[float, float, float]] = []
        dropped = 0
        for _, path, rec in simulate_records(params, n, cfg):
            if not rec.completed:
                dropped += 1
                continue
            gaps.append(_path_gaps(path, rec, payoff, params))
        incomplete[n] = dropped
        for j, name in enumerate(("sup_price_gap", "max_theta_gap", "sup_payoff_gap")):
            mean, se = _mean_se([g[j] for g in gaps])
            estimates.append(Estimate(n, name, mean, se, len(gaps)))
    return Diagnostics(estimates, incomplete, used)


@dataclass
class SignTest:
    n: int
    p_n: float
    ups: int
    downs: int
    statistic: float
    p_value: float

    def passes(self, level: float = 0.01) -> bool:
        return self.p_value > level


def sign_law_test(params: MarketParams, n: int, config: SimConfig) -> SignTest:
    """Chi-square test of crossing-sign frequencies against p_n.

    Signs are pooled over all crossings of completed records; they are
    i.i.d. under the embedding, so the pooled counts are binomial.
    """
    p = calibrate(params, n).p_n
    ups = downs = 0
    for _, _, rec in simulate_records(params, n, config):
        if rec.completed:
            s = np.asarray(rec.signs)
            ups += int(np.count_nonzero(s > 0))
            downs += int(np.count_nonzero(s < 0))
    total = ups + downs
    stat, pval = stats.chisquare([ups, downs], f_exp=[p * total, (1.0 - p) * total])
    return SignTest(n, p, ups, downs, float(stat), float(pval))


# --------------------------------------------------------------------------
# shortfall bracket
# --------------------------------------------------------------------------


@dataclass
class Bracket:
    n: int
    x: float
    R_n: float
    lower: float
    lower_se: float
    lower_rule: str
    payoff_gap: float
    payoff_gap_se: float
    upper_proxy: float
    n_effective: int
    incomplete: int
    fine_steps: int
    lift_violations: int = 0
    heuristic: bool = True  # the upper proxy omits the density-ratio term

    @property
    def width(self) -> float:
        return self.upper_proxy - self.lower

    @property
    def consistent(self) -> bool:
        return self.lower <= self.upper_proxy


def _continuous_wealth(path: DriverPath, record: CrossingRecord, lifted: LiftedWealth,
                       frictions: Frictions, last: int) -> np.ndarray:
    """Liquidation wealth on the fine grid up to index ``last`` (exclusive).

    On (theta_k, theta_{k+1}] the portfolio holds the position bought at
    theta_k, marked at the current price; after theta_n it is all cash.
    """
    idx = np.arange(last)
    k = np.searchsorted(record.index, idx, side="left") - 1
    prices = path.prices[:last]
    V = np.full(last, lifted.wealth[-1])
    V[0] = lifted.wealth[0]
    live = (k >= 0) & (k < record.n)
    kk = k[live]
    rho = prices[live] / record.prices[kk]
    V[live] = wealth_step(lifted.wealth[kk], lifted.positions[kk], lifted.transfers[kk], rho, frictions)
    return V


def shortfall_bracket(
    sol: Solution,
    x: float,
    config: SimConfig,
    thresholds: Optional[Sequence[float]] = None,
    R_n: Optional[float] = None,
) -> Bracket:
    """Monte Carlo bracket around the continuous-model risk of the lifted optimal strategy.

    ``lower`` is the largest mean shortfall over a fixed family of stopping
    rules (each theta_k wedge T, and first times the payoff reaches each
    threshold, else T) under the lifted lattice-optimal strategy.
    ``upper_proxy`` adds the mean sup-distance between the continuous and
    the lattice payoff processes to R_n; it ignores the change-of-measure
    correction, so it is a heuristic, not a proven bound.
    """
    spec, params, payoff, fr = sol.spec, sol.params, sol.payoff, sol.frictions
    n = spec.n
    config.check_resolution(n)
    if R_n is None:
        R_n = sol.node_value(0, 0, float(x), 0.0)[0]
    if thresholds is None:
        scale = snell_value(payoff, spec, params)
        thresholds = [c * scale for c in (0.5, 1.0, 2.0, 4.0)] if scale > 0 else []
    tree = PolicyTree(sol, x)
    rules = [f"theta_{k}^T" for k in range(n + 1)] + [f"first Y>={q:.6g}" for q in thresholds]
    samples: List[List[float]] = [[] for _ in rules]
    gaps: List[float] = []
    dropped = 0
    violations = 0
    for _, path, rec in simulate_records(params, n, config):
        if not rec.completed:
            dropped += 1
            continue
        lifted = lift_strategy(tree, rec, x, spec, fr, strict=False)
        violations += lifted.violations
        last = int(np.searchsorted(path.times, params.T, side="right"))
        y = _fine_payoff(payoff, path.prices[:last])
        V = _continuous_wealth(path, rec, lifted, fr, last)
        short = np.maximum(y - V, 0.0)
        for k in range(n + 1):
            samples[k].append(float(short[min(int(rec.index[k]), last - 1)]))
        for j, q in enumerate(thresholds):
            hit = np.flatnonzero(y >= q)
            samples[n + 1 + j].append(float(short[hit[0] if hit.size else last - 1]))
        gaps.append(_path_gaps(path, rec, payoff, params)[2])
    means = [_mean_se(s) for s in samples]
    best = int(np.nanargmax([m for m, _ in means])) if samples[0] else 0
    gap, gap_se = _mean_se(gaps)
    lower, lower_se = means[best] if samples[0] else (math.nan, math.nan)
    return Bracket(
        n=n, x=float(x), R_n=float(R_n), lower=lower, lower_se=lower_se, lower_rule=rules[best],
        payoff_gap=gap, payoff_gap_se=gap_se, upper_proxy=float(R_n) + gap,
        n_effective=len(gaps), incomplete=dropped, fine_steps=config.fine_steps,
        lift_violations=violations,
    )
