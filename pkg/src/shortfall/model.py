"""Market parameters and the calibrated n-step binomial lattice."""
from __future__ import annotations

import math
from dataclasses import dataclass


class InvalidParameterError(ValueError):
    """Raised when a parameter is out of range."""


@dataclass(frozen=True)
class MarketParams:
    S0: float = 1.0  # initial stock price
    sigma: float = 0.2  # volatility per sqrt(year)
    kappa: float = 0.0  # drift parameter per year
    T: float = 1.0  # maturity in years

    def __post_init__(self) -> None:
        if not self.S0 > 0.0:
            raise InvalidParameterError(f"S0 must be positive, got {self.S0}")
        if not self.sigma > 0.0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.T > 0.0:
            raise InvalidParameterError(f"T must be positive, got {self.T}")
        if not math.isfinite(self.kappa):
            raise InvalidParameterError("kappa must be finite")


@dataclass(frozen=True)
class Frictions:
    lam: float = 0.0  # purchase cost rate
    mu: float = 0.0  # sale cost rate

    def __post_init__(self) -> None:
        if not self.lam >= 0.0 or not math.isfinite(self.lam):
            raise InvalidParameterError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.mu < 1.0:
            raise InvalidParameterError(f"mu must lie in [0, 1), got {self.mu}")


@dataclass(frozen=True)
class LatticeSpec:
    n: int
    T: float
    delta: float  # sigma * sqrt(T / n), the log-price step
    a_n: float  # down move is a factor (1 - a_n)
    b_n: float  # up move is a factor (1 + b_n)
    p_n: float  # physical probability of an up move

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def up(self) -> float:
        return 1.0 + self.b_n

    @property
    def down(self) -> float:
        return 1.0 - self.a_n


def calibrate(params: MarketParams, n: int) -> LatticeSpec:
    """Binomial lattice matched to ``params`` with ``n`` steps over ``[0, T]``."""
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise InvalidParameterError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    root = math.sqrt(params.T / n)
    delta = params.sigma * root
    a_n = -math.expm1(-delta)
    b_n = math.expm1(delta)
    drift = params.sigma - 2.0 * params.kappa / params.sigma
    try:
        p_n = 1.0 / (math.exp(drift * root) + 1.0)
    except OverflowError:
        p_n = 0.0
    if not 0.0 < p_n < 1.0:
        raise InvalidParameterError(
            f"up probability degenerate (p={p_n}); reduce |kappa| or increase n"
        )
    return LatticeSpec(n=n, T=params.T, delta=delta, a_n=a_n, b_n=b_n, p_n=p_n)


def stock_price(spec: LatticeSpec, params: MarketParams, k: int, up_count: int) -> float:
    if not 0 <= k <= spec.n:
        raise IndexError(f"step {k} outside 0..{spec.n}")
    if not 0 <= up_count <= k:
        raise IndexError(f"up_count {up_count} outside 0..{k}")
    return params.S0 * math.exp(spec.delta * (2 * up_count - k))


def level_price(spec: LatticeSpec, params: MarketParams, level: int) -> float:
    """Price at log-level ``level`` (net number of up moves)."""
    return params.S0 * math.exp(spec.delta * level)
