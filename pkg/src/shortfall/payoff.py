"""Path-dependent payoff functionals and their Markov reductions on the lattice.

Every built-in payoff is a function of the current price and the running
maximum of the price path, ``F(t, x) = f(x(t), max_{s<=t} x(s))``, so it is
non-anticipative by construction and can be evaluated on lattice paths,
on fine-grid simulated paths, or from a compact lattice state.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Optional, Sequence

import numpy as np

from .model import InvalidParameterError, LatticeSpec, MarketParams

KINDS = ("call", "put", "capped-call", "lookback-max", "russian", "constant")
_LOOKBACK_KINDS = ("lookback-max", "russian")


@dataclass(frozen=True)
class PayoffSpec:
    kind: str = "call"
    strike: float = 1.0
    cap: float = float("inf")
    amount: float = 0.0  # only for kind="constant"
    path_general: bool = False  # force the full binary tree in the DP

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown payoff kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("call", "put", "capped-call") and not self.strike >= 0.0:
            raise InvalidParameterError("strike must be >= 0")
        if self.kind == "capped-call" and not (0.0 < self.cap < float("inf")):
            raise InvalidParameterError("capped-call needs a finite positive cap")
        if self.kind == "constant" and not self.amount >= 0.0:
            raise InvalidParameterError("constant payoff must be >= 0")

    @property
    def uses_running_max(self) -> bool:
        return self.kind in _LOOKBACK_KINDS

    def value(self, price, running_max):
        """Payoff from the current price and running maximum (arrays broadcast)."""
        price = np.asarray(price, dtype=float)
        kind = self.kind
        if kind == "call":
            out = np.maximum(price - self.strike, 0.0)
        elif kind == "put":
            out = np.maximum(self.strike - price, 0.0)
        elif kind == "capped-call":
            out = np.minimum(np.maximum(price - self.strike, 0.0), self.cap)
        elif kind == "lookback-max":
            out = np.asarray(running_max, dtype=float) + 0.0 * price
        elif kind == "russian":
            out = np.maximum(np.asarray(running_max, dtype=float) - price, 0.0)
        else:
            out = np.full_like(price, self.amount)
        return out if out.ndim else float(out)


def zero_payoff() -> PayoffSpec:
    return PayoffSpec(kind="constant", amount=0.0)


def growth_bound(payoff: PayoffSpec, spec: LatticeSpec, params: MarketParams) -> float:
    """Constant C with F(t, x) <= C sup|x| on every path the lattice can produce.

    Call-type and lookback payoffs are dominated by the running maximum, so
    C = 1.  Put and constant payoffs are bounded by a cash amount; dividing by
    the lowest reachable lattice price gives a valid C for realised paths.
    """
    if payoff.kind in ("call", "capped-call", "lookback-max", "russian"):
        return 1.0
    s_min = params.S0 * np.exp(-spec.delta * spec.n)
    level = payoff.strike if payoff.kind == "put" else payoff.amount
    return float(level / s_min)


def path_prices(spec: LatticeSpec, params: MarketParams, path: Sequence[int]) -> np.ndarray:
    """Lattice prices S(0), ..., S(k) along a +-1 path."""
    steps = np.asarray(path, dtype=np.int64)
    if steps.size and not np.all(np.abs(steps) == 1):
        raise InvalidParameterError("path entries must be +1 or -1")
    levels = np.concatenate(([0], np.cumsum(steps)))
    return params.S0 * np.exp(spec.delta * levels)


def evaluate(
    payoff: PayoffSpec, spec: LatticeSpec, params: MarketParams, k: int, path: Sequence[int]
) -> float:
    """Payoff at step ``k`` of the piecewise-constant lattice price path."""
    if len(path) != k:
        raise InvalidParameterError(f"path length {len(path)} does not match step {k}")
    if not 0 <= k <= spec.n:
        raise IndexError(f"step {k} outside 0..{spec.n}")
    prices = path_prices(spec, params, path)
    return float(payoff.value(prices[-1], prices.max()))


@dataclass(frozen=True)
class MarkovAdapter:
    """Finite-state reduction of a payoff on the recombining lattice."""

    initial: Hashable
    advance: Callable[[Hashable, int], Hashable]
    payoff_of: Callable[[Hashable, int], float]


def markov_adapter(
    payoff: PayoffSpec, spec: LatticeSpec, params: MarketParams
) -> Optional[MarkovAdapter]:
    if payoff.path_general:
        return None

    def price(level: int) -> float:
        return params.S0 * float(np.exp(spec.delta * level))

    if not payoff.uses_running_max:
        # state = number of up moves so far
        def payoff_of(j, k):
            return float(payoff.value(price(2 * j - k), 0.0))

        return MarkovAdapter(initial=0, advance=lambda j, z: j + (z > 0), payoff_of=payoff_of)

    # state = (current level, running max level); the step index is implicit
    def advance(state, z):
        level, top = state
        level += 1 if z > 0 else -1
        return (level, max(top, level))

    def payoff_of_lb(state, k):
        level, top = state
        return float(payoff.value(price(level), price(top)))

    return MarkovAdapter(initial=(0, 0), advance=advance, payoff_of=payoff_of_lb)
