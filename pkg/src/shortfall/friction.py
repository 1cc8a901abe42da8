"""Proportional-cost wealth algebra.

State convention: ``u`` is the liquidation value of the portfolio and ``v``
the market value of the stock position, both measured just before trading.
A transfer ``w`` changes the position by ``w`` in stock value at the current
price; after a price move by the gross factor ``rho`` the new liquidation
value is ``wealth_step(u, v, w, rho)`` and the new position value is
``(v + w) * rho``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Frictions, InvalidParameterError, LatticeSpec

ADMISSIBILITY_TOL = 1e-9


class InconsistentPricesError(ValueError):
    """Crossing prices do not move by the two lattice factors."""


def _pos(x):
    return np.maximum(x, 0.0)


def _neg(x):
    return np.maximum(-x, 0.0)


def wealth_step(u, v, w, rho, frictions: Frictions):
    """Liquidation value after trading ``w`` and a gross price move ``rho``.

    Vectorised over numpy inputs.  The result may be negative; admissibility
    is checked by the caller.
    """
    lam, mu = frictions.lam, frictions.mu
    y = np.add(v, w)
    # grouped so that w = -v cancels exactly: w^- = v^+ and w^+ = v^-
    out = (
        u
        + (1.0 - mu) * (_neg(w) - _pos(v))
        + (1.0 + lam) * (_neg(v) - _pos(w))
        + rho * ((1.0 - mu) * _pos(y) - (1.0 + lam) * _neg(y))
    )
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class TransferInterval:
    lo: float
    hi: float

    def __contains__(self, w: float) -> bool:
        return self.lo <= w <= self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo


def interval_bounds(u, v, a: float, b: float, frictions: Frictions):
    """Vectorised endpoints of the set of transfers keeping both branch wealths >= 0."""
    lam, mu = frictions.lam, frictions.mu
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    buy_den = lam + mu + a * (1.0 - mu)  # 1 + lam - (1 - mu)(1 - a)
    sell_den = lam + mu + b * (1.0 + lam)  # (1 + lam)(1 + b) - (1 - mu)
    long_slack = u - a * (1.0 - mu) * v
    short_slack = u + b * (1.0 + lam) * v
    # a zero denominator only occurs with zero costs, where the matching slack
    # term is multiplied by a positive a or b; guard the divisions anyway
    hi_long = np.where(
        long_slack >= 0.0, long_slack / buy_den, long_slack / (a * (1.0 - mu))
    )
    lo_long = -v - u / sell_den
    lo_short = np.where(
        short_slack >= 0.0, -short_slack / sell_den, -short_slack / (b * (1.0 + lam))
    )
    hi_short = -v + u / buy_den
    long = v >= 0.0
    lo = np.where(long, lo_long, lo_short)
    hi = np.where(long, hi_long, hi_short)
    return lo, hi


def admissible_interval(u: float, v: float, a: float, b: float, frictions: Frictions) -> TransferInterval:
    """Closed interval of transfers ``w`` with both next-step wealths non-negative."""
    if not 0.0 < a < 1.0:
        raise InvalidParameterError(f"down contraction a must lie in (0, 1), got {a}")
    if not b > 0.0:
        raise InvalidParameterError(f"up expansion b must be positive, got {b}")
    if u < 0.0:
        raise InvalidParameterError(f"liquidation value must be >= 0, got {u}")
    lo, hi = interval_bounds(u, v, a, b, frictions)
    lo, hi = float(lo), float(hi)
    # -v is always admissible; keep it inside despite rounding
    return TransferInterval(min(lo, -v), max(hi, -v))


def is_admissible(u, v, w, a: float, b: float, frictions: Frictions) -> bool:
    tol = ADMISSIBILITY_TOL * (1.0 + abs(u))
    up = wealth_step(u, v, w, 1.0 + b, frictions)
    down = wealth_step(u, v, w, 1.0 - a, frictions)
    return min(up, down) >= -tol


@dataclass
class WealthPath:
    """Liquidation values ``V[0..n]``, pre-trade position values ``v[0..n]``
    and transfers ``w[0..n-1]``; ``first_negative`` is the first step with
    negative wealth, or ``None``."""

    V: np.ndarray
    v: np.ndarray
    w: np.ndarray
    first_negative: int | None

    @property
    def admissible(self) -> bool:
        return self.first_negative is None

    def rows(self):
        for k in range(len(self.V)):
            w = self.w[k] if k < len(self.w) else float("nan")
            yield k, float(self.V[k]), float(self.v[k]), float(w)


def _wealth_recursion(x: float, transfers, rhos, frictions: Frictions) -> WealthPath:
    transfers = np.asarray(transfers, dtype=float)
    n = len(rhos)
    if len(transfers) != n:
        raise InvalidParameterError(f"{len(transfers)} transfers for {n} moves")
    V = np.empty(n + 1)
    pos = np.empty(n + 1)
    V[0], pos[0] = x, 0.0
    first_negative = None
    for k in range(n):
        V[k + 1] = wealth_step(V[k], pos[k], transfers[k], rhos[k], frictions)
        pos[k + 1] = (pos[k] + transfers[k]) * rhos[k]
        if first_negative is None and V[k + 1] < -ADMISSIBILITY_TOL * (1.0 + abs(V[k])):
            first_negative = k + 1
    return WealthPath(V=V, v=pos, w=transfers, first_negative=first_negative)


def discrete_wealth_path(
    x: float, transfers: Sequence[float], signs: Sequence[int], spec: LatticeSpec, frictions: Frictions
) -> WealthPath:
    """Wealth along a lattice path; bankruptcies are reported, not rejected."""
    if x < 0.0:
        raise InvalidParameterError("initial capital must be >= 0")
    rhos = [spec.up if z > 0 else spec.down for z in signs]
    return _wealth_recursion(x, transfers, rhos, frictions)


def crossing_wealth_path(
    x: float,
    transfers: Sequence[float],
    crossing_prices: Sequence[float],
    spec: LatticeSpec,
    frictions: Frictions,
) -> WealthPath:
    """Wealth at the crossing times, driven by the observed crossing prices."""
    prices = np.asarray(crossing_prices, dtype=float)
    rhos = prices[1:] / prices[:-1]
    up, down = math.exp(spec.delta), math.exp(-spec.delta)
    ok = np.minimum(np.abs(rhos / up - 1.0), np.abs(rhos / down - 1.0)) <= 1e-9
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise InconsistentPricesError(
            f"price ratio {rhos[bad]!r} at crossing {bad + 1} is neither e^delta nor e^-delta"
        )
    return _wealth_recursion(x, transfers, rhos, frictions)
