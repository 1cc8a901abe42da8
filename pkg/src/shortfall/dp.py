"""Backward dynamic programming for the minimal shortfall risk on the lattice.

The value function of node ``(k, state)`` is sampled on a tensor grid over
liquidation value ``u`` and position value ``v``.  Continuation values come
from bilinear interpolation of the children's grids, except at the last step
where the children are evaluated in closed form, ``(payoff - u)^+``.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernel
from .friction import wealth_step
from .model import Frictions, InvalidParameterError, LatticeSpec, MarketParams
from .payoff import PayoffSpec, evaluate, markov_adapter

log = logging.getLogger(__name__)

FULL_TREE_CUTOFF = 12
ORACLE_MAX_STEPS = 3


class TreeTooLargeError(ValueError):
    """Path-general payoff on a lattice too deep for the full binary tree."""


class GridEscapeError(RuntimeError):
    """An optimal next state left the region where the value grid is valid."""


class MissingNodeError(KeyError):
    """A strategy tree does not define a transfer for some lattice node."""


@dataclass(frozen=True)
class GridSpec:
    """Resolution of the value grids and of the inner transfer search.

    ``u_scale`` and ``v_scale`` set where the sinh-stretched axes are dense:
    the u-axis scale is ``u_scale`` times the node's zero-capital risk, the
    v-axis scale is ``v_scale`` times the node's stock price.
    ``u_max`` optionally truncates every u-axis; left at ``None`` each node
    uses the largest payoff in its subtree, above which the value is 0.
    """

    n_u: int = 65
    n_v: int = 257  # values vary little in v but have kinks there
    w_candidates: int = 33
    refine_rounds: int = 2
    refine_points: int = 17
    u_scale: float = 0.3
    v_scale: float = 0.3
    u_max: Optional[float] = None
    cutoff: int = FULL_TREE_CUTOFF

    def __post_init__(self) -> None:
        if self.n_u < 3 or self.n_v < 3:
            raise InvalidParameterError("grids need at least 3 points per axis")
        if self.w_candidates < 2:
            raise InvalidParameterError("need at least 2 transfer candidates")
        if self.u_scale <= 0 or self.v_scale <= 0:
            raise InvalidParameterError("axis scales must be positive")

    def refined(self, factor: int = 2) -> "GridSpec":
        """Same spec with every axis interval split ``factor`` times."""
        return GridSpec(
            n_u=(self.n_u - 1) * factor + 1,
            n_v=(self.n_v - 1) * factor + 1,
            w_candidates=self.w_candidates,
            refine_rounds=self.refine_rounds,
            refine_points=self.refine_points,
            u_scale=self.u_scale,
            v_scale=self.v_scale,
            u_max=self.u_max,
            cutoff=self.cutoff,
        )


# --------------------------------------------------------------------------
# lattice nodes
# --------------------------------------------------------------------------


@dataclass
class LatticeStep:
    keys: List[Hashable]
    phi: np.ndarray
    up: Optional[np.ndarray] = None
    dn: Optional[np.ndarray] = None
    ceiling: Optional[np.ndarray] = None  # max payoff over the node's subtree
    snell: Optional[np.ndarray] = None  # physical-measure optimal stopping value
    level: Optional[np.ndarray] = None  # (up moves) - (down moves) to reach the node

    def __len__(self) -> int:
        return len(self.keys)


def build_lattice(
    payoff: PayoffSpec, spec: LatticeSpec, params: MarketParams, cutoff: int = FULL_TREE_CUTOFF
) -> List[LatticeStep]:
    """Nodes of every step 0..n with their payoffs and child links.

    Nodes are Markov states when the payoff has an adapter, else path prefixes.
    """
    adapter = markov_adapter(payoff, spec, params)
    if adapter is None:
        if spec.n > cutoff:
            raise TreeTooLargeError(
                f"path-general payoff needs 2^n nodes; n={spec.n} exceeds cutoff {cutoff}"
            )
        initial = ()
        advance = lambda path, z: path + (z,)  # noqa: E731
        payoff_of = lambda path, k: evaluate(payoff, spec, params, k, path)  # noqa: E731
    else:
        initial, advance, payoff_of = adapter.initial, adapter.advance, adapter.payoff_of

    steps = [
        LatticeStep(keys=[initial], phi=np.array([payoff_of(initial, 0)]), level=np.zeros(1, dtype=np.int64))
    ]
    for k in range(spec.n):
        index: Dict[Hashable, int] = {}
        keys: List[Hashable] = []
        levels: List[int] = []
        up = np.empty(len(steps[k]), dtype=np.int64)
        dn = np.empty(len(steps[k]), dtype=np.int64)
        for i, state in enumerate(steps[k].keys):
            for z, links in ((1, up), (-1, dn)):
                child = advance(state, z)
                if child not in index:
                    index[child] = len(keys)
                    keys.append(child)
                    levels.append(int(steps[k].level[i]) + z)
                links[i] = index[child]
        steps[k].up, steps[k].dn = up, dn
        steps.append(
            LatticeStep(
                keys=keys,
                phi=np.array([payoff_of(s, k + 1) for s in keys], dtype=float),
                level=np.array(levels, dtype=np.int64),
            )
        )

    p = spec.p_n
    last = steps[-1]
    last.ceiling = last.phi.copy()
    last.snell = last.phi.copy()
    for k in range(spec.n - 1, -1, -1):
        st, nxt = steps[k], steps[k + 1]
        st.ceiling = np.maximum(st.phi, np.maximum(nxt.ceiling[st.up], nxt.ceiling[st.dn]))
        st.snell = np.maximum(st.phi, p * nxt.snell[st.up] + (1.0 - p) * nxt.snell[st.dn])
    return steps


def snell_value(payoff: PayoffSpec, spec: LatticeSpec, params: MarketParams) -> float:
    """Optimal stopping value sup_tau E[Y(tau)] under the physical lattice measure."""
    return float(build_lattice(payoff, spec, params, cutoff=max(spec.n, FULL_TREE_CUTOFF))[0].snell[0])


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------


def _stretched(hi: float, scale: float, m: int) -> np.ndarray:
    """m + 1 points on [0, hi], dense near 0 (sinh map with the given scale)."""
    t = np.linspace(0.0, math.asinh(hi / scale), m + 1)
    pts = scale * np.sinh(t)
    pts[0], pts[-1] = 0.0, hi
    return pts


def _axes(step: LatticeStep, spec: LatticeSpec, params: MarketParams, frictions: Frictions, grid: GridSpec):
    n_nodes = len(step)
    U = np.empty((n_nodes, grid.n_u))
    V = np.empty((n_nodes, grid.n_v))
    m_neg = (grid.n_v - 1) // 2
    m_pos = grid.n_v - 1 - m_neg
    ceilings = step.ceiling if grid.u_max is None else np.minimum(step.ceiling, grid.u_max)
    for i in range(n_nodes):
        top = float(ceilings[i])
        if top <= 0.0:
            U[i] = np.linspace(0.0, 1.0, grid.n_u)
            V[i] = np.linspace(-1.0, 1.0, grid.n_v)
            continue
        cu = max(grid.u_scale * float(step.snell[i]), 1e-6 * top)
        U[i] = _stretched(top, cu, grid.n_u - 1)
        # beyond these bounds the value no longer depends on v
        v_hi = top / (spec.a_n * (1.0 - frictions.mu))
        v_lo = top / (spec.b_n * (1.0 + frictions.lam))
        cv = grid.v_scale * params.S0 * math.exp(spec.delta * float(step.level[i]))
        V[i, m_neg:] = _stretched(v_hi, cv, m_pos)
        V[i, : m_neg + 1] = -_stretched(v_lo, cv, m_neg)[::-1]
    return U, V, ceilings


@dataclass
class StepGrid:
    U: np.ndarray
    V: np.ndarray
    J: np.ndarray
    W: Optional[np.ndarray]
    residual: np.ndarray
    ceiling: np.ndarray


@dataclass
class Solution:
    """Value and policy grids for every node, plus what produced them."""

    spec: LatticeSpec
    params: MarketParams
    payoff: PayoffSpec
    frictions: Frictions
    grid: GridSpec
    lattice: List[LatticeStep]
    grids: List[StepGrid]  # index k = 0..n-1; step n is analytic

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def snell(self) -> float:
        return float(self.lattice[0].snell[0])

    def node_index(self, k: int, key: Hashable) -> int:
        return self.lattice[k].keys.index(key)

    def value(self, k: int, node: int, u: float, v: float) -> float:
        """Interpolated J_k at (u, v); exact at k = n."""
        if k == self.n:
            return max(float(self.lattice[k].phi[node]) - u, 0.0)
        g = self.grids[k]
        return float(
            _kernel.child_value(
                False, node, u, v, self.lattice[k].phi, g.J, g.U, g.V, g.ceiling
            )
        )

    def _children_args(self, k: int):
        terminal = k + 1 == self.n
        phi_next = self.lattice[k + 1].phi
        if terminal:
            empty3 = np.zeros((1, 2, 2))
            empty2 = np.zeros((1, 2))
            return terminal, phi_next, empty3, empty2, empty2, np.zeros(1)
        g = self.grids[k + 1]
        return terminal, phi_next, g.J, g.U, g.V, g.ceiling

    def decide(self, k: int, node: int, u: float, v: float, hint: float = math.nan):
        """Optimal transfer and continuation value at an arbitrary state of node (k, node).

        Returns (continuation value, w*, refinement residual).
        """
        if k >= self.n:
            raise IndexError("no decision at the terminal step")
        st = self.lattice[k]
        terminal, phi_next, J_next, U_next, V_next, ceil_next = self._children_args(k)
        spec, fr, gs = self.spec, self.frictions, self.grid
        val, w, res = _kernel.inner_min(
            max(u, 0.0), v, int(st.up[node]), int(st.dn[node]), spec.a_n, spec.b_n, spec.p_n,
            fr.lam, fr.mu, terminal, phi_next, J_next, U_next, V_next, ceil_next,
            gs.w_candidates, gs.refine_rounds, gs.refine_points, -v if math.isnan(hint) else hint,
        )
        return float(val), float(w), float(res)

    def node_value(self, k: int, node: int, u: float, v: float, hint: float = math.nan):
        """J_k at an exact state (not interpolated): max of exercise and continuation."""
        phi = float(self.lattice[k].phi[node])
        if k == self.n:
            return max(phi - u, 0.0), -v, 0.0
        if self.grid.u_max is None and u >= self.lattice[k].ceiling[node]:
            return 0.0, -v, 0.0
        cont, w, res = self.decide(k, node, u, v, hint)
        return max(phi - u, cont), w, res


def _check_escape(sol_step: StepGrid, lattice_k: LatticeStep, next_grid: Optional[StepGrid],
                  next_lattice: LatticeStep, spec: LatticeSpec, frictions: Frictions) -> None:
    # only a truncated u-axis can make a child read unreliable
    if next_grid is None:
        return
    unsafe = next_grid.ceiling < next_lattice.ceiling
    if not unsafe.any():
        return
    u = sol_step.U[:, :, None]
    v = sol_step.V[:, None, :]
    w = sol_step.W
    live = sol_step.J > 0.0
    for rho, links in ((spec.up, lattice_k.up), (spec.down, lattice_k.dn)):
        nxt = wealth_step(u, v, w, rho, frictions)
        bad = live & unsafe[links][:, None, None] & (nxt > next_grid.ceiling[links][:, None, None])
        if bad.any():
            i, iu, iv = (int(t[0]) for t in np.nonzero(bad))
            raise GridEscapeError(
                f"optimal next wealth {float(nxt[i, iu, iv]):.6g} from node {lattice_k.keys[i]!r} "
                f"exceeds the truncated grid ceiling {float(next_grid.ceiling[links[i]]):.6g}; "
                "raise u_max"
            )


def solve(
    spec: LatticeSpec,
    params: MarketParams,
    payoff: PayoffSpec,
    frictions: Frictions,
    grid: GridSpec = GridSpec(),
    store_policy: bool = True,
) -> Solution:
    """Value grids J_k and policy grids h_k for every node, k = n-1 down to 0."""
    lattice = build_lattice(payoff, spec, params, cutoff=grid.cutoff)
    n = spec.n
    grids: List[Optional[StepGrid]] = [None] * n
    for k in range(n - 1, -1, -1):
        st = lattice[k]
        U, V, ceil = _axes(st, spec, params, frictions, grid)
        shape = (len(st), grid.n_u, grid.n_v)
        J = np.empty(shape)
        W = np.empty(shape)
        R = np.empty(shape)
        terminal = k + 1 == n
        if terminal:
            J_next, U_next, V_next, ceil_next = np.zeros((1, 2, 2)), np.zeros((1, 2)), np.zeros((1, 2)), np.zeros(1)
        else:
            g = grids[k + 1]
            J_next, U_next, V_next, ceil_next = g.J, g.U, g.V, g.ceiling
        _kernel.backward_step(
            U, V, st.phi, ceil, st.up, st.dn, spec.a_n, spec.b_n, spec.p_n, frictions.lam,
            frictions.mu, terminal, lattice[k + 1].phi, J_next, U_next, V_next, ceil_next,
            grid.w_candidates, grid.refine_rounds, grid.refine_points, J, W, R,
        )
        grids[k] = StepGrid(U=U, V=V, J=J, W=W, residual=R, ceiling=ceil)
        if grid.u_max is not None:
            _check_escape(grids[k], st, None if terminal else grids[k + 1], lattice[k + 1], spec, frictions)
        if not store_policy:
            grids[k].W = None
        log.debug("step %d: %d nodes solved", k, len(st))
    return Solution(spec, params, payoff, frictions, grid, lattice, grids)


def export_grids(sol: Solution, path: str) -> None:
    """Write every step's value and policy grids, with their axes, to a self-describing .npz file.

    Arrays are named ``U_k``, ``V_k``, ``J_k``, ``W_k`` (node, u, v) and
    ``keys_k`` (node keys as text); ``meta`` holds the run description as JSON.
    """
    arrays = {}
    for k, g in enumerate(sol.grids):
        arrays[f"U_{k}"] = g.U
        arrays[f"V_{k}"] = g.V
        arrays[f"J_{k}"] = g.J
        if g.W is not None:
            arrays[f"W_{k}"] = g.W
        arrays[f"keys_{k}"] = np.array([repr(key) for key in sol.lattice[k].keys])
    meta = {
        "layout": "J_k[node, i_u, i_v] sampled at (U_k[node, i_u], V_k[node, i_v])",
        "n": sol.n,
        "market": asdict(sol.params),
        "frictions": asdict(sol.frictions),
        "payoff": {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                   for k, v in asdict(sol.payoff).items()},
        "grid": asdict(sol.grid),
    }
    np.savez_compressed(path, meta=np.array(json.dumps(meta)), **arrays)


# --------------------------------------------------------------------------
# risk, strategies
# --------------------------------------------------------------------------


@dataclass
class RiskReport:
    value: float
    x: float
    snell: float
    frictions: Frictions
    spec: LatticeSpec
    params: MarketParams
    payoff: PayoffSpec
    grid: GridSpec
    w0: float  # optimal initial transfer
    diagnostics: dict = field(default_factory=dict)
    solution: Optional[Solution] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        def clean(obj):
            return {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                    for k, v in asdict(obj).items()}

        return {
            "R_n": self.value,
            "x": self.x,
            "snell": self.snell,
            "w0": self.w0,
            "market": clean(self.params),
            "frictions": clean(self.frictions),
            "lattice": clean(self.spec),
            "payoff": clean(self.payoff),
            "grid": clean(self.grid),
            "diagnostics": self.diagnostics,
        }


def _diagnostics(sol: Solution) -> dict:
    res = [float(g.residual.max()) for g in sol.grids if g.residual.size]
    return {
        "n_u": sol.grid.n_u,
        "n_v": sol.grid.n_v,
        "nodes": int(sum(len(s) for s in sol.lattice)),
        "max_refine_residual": max(res) if res else 0.0,
    }


def shortfall_risk(
    spec: LatticeSpec,
    params: MarketParams,
    payoff: PayoffSpec,
    frictions: Frictions,
    x: float,
    grid: GridSpec = GridSpec(),
    solution: Optional[Solution] = None,
) -> RiskReport:
    """R_n(x) = J_0(x, 0), with the root evaluated at the exact state (x, 0)."""
    if not x >= 0.0:
        raise InvalidParameterError(f"initial capital must be >= 0, got {x}")
    sol = solution if solution is not None else solve(spec, params, payoff, frictions, grid)
    value, w0, res = sol.node_value(0, 0, float(x), 0.0)
    diag = _diagnostics(sol)
    diag["root_refine_residual"] = res
    return RiskReport(
        value=value, x=float(x), snell=sol.snell, frictions=sol.frictions, spec=sol.spec,
        params=sol.params, payoff=sol.payoff, grid=sol.grid, w0=w0, diagnostics=diag, solution=sol,
    )


@dataclass
class Strategy:
    """Optimal decisions replayed along one sign sequence."""

    signs: Tuple[int, ...]
    transfers: np.ndarray  # w_k in stock value, k < len(signs)
    wealth: np.ndarray  # V(0..len(signs))
    positions: np.ndarray  # pre-trade position value v_k
    shares: np.ndarray  # gamma(1..len(signs)), shares held over (k, k+1]
    prices: np.ndarray  # S(0..len(signs))


def _walk(sol: Solution, x: float, signs: Sequence[int]):
    spec = sol.spec
    node, V, pos, gamma = 0, float(x), 0.0, 0.0
    price = sol.params.S0
    transfers, wealth, positions, shares, prices = [], [V], [pos], [], [price]
    for k, z in enumerate(signs):
        _, w, _ = sol.decide(k, node, V, pos)
        rho = spec.up if z > 0 else spec.down
        gamma = gamma + w / price
        V = float(wealth_step(V, pos, w, rho, sol.frictions))
        pos = (pos + w) * rho
        price = price * math.exp(spec.delta if z > 0 else -spec.delta)
        node = int(sol.lattice[k].up[node] if z > 0 else sol.lattice[k].dn[node])
        transfers.append(w)
        wealth.append(V)
        positions.append(pos)
        shares.append(gamma)
        prices.append(price)
    return transfers, wealth, positions, shares, prices


def extract_strategy(sol: Solution, x: float, signs: Sequence[int]) -> Strategy:
    """Walk the lattice along ``signs`` applying the optimal transfer at each realised state."""
    signs = tuple(int(z) for z in signs)
    if len(signs) > sol.n:
        raise InvalidParameterError(f"{len(signs)} signs for an {sol.n}-step lattice")
    t, wl, p, sh, pr = _walk(sol, x, signs)
    return Strategy(signs, np.array(t), np.array(wl), np.array(p), np.array(sh), np.array(pr))


def strategy_tree(sol: Solution, x: float) -> Dict[Tuple[int, ...], float]:
    """Optimal transfer at every path prefix of length < n (2^n - 1 decisions)."""
    tree: Dict[Tuple[int, ...], float] = {}

    def rec(path, node, V, pos):
        k = len(path)
        if k == sol.n:
            return
        _, w, _ = sol.decide(k, node, V, pos)
        tree[path] = w
        for z in (1, -1):
            rho = sol.spec.up if z > 0 else sol.spec.down
            child = int(sol.lattice[k].up[node] if z > 0 else sol.lattice[k].dn[node])
            rec(path + (z,), child, float(wealth_step(V, pos, w, rho, sol.frictions)), (pos + w) * rho)

    rec((), 0, float(x), 0.0)
    return tree


class PolicyTree(Mapping):
    """Optimal transfers keyed by path prefix, computed on first access.

    Gives the same decisions as ``strategy_tree`` without enumerating all
    2^n - 1 prefixes, which matters when only sampled paths are needed.
    """

    def __init__(self, sol: Solution, x: float) -> None:
        self._sol = sol
        self._states: Dict[Tuple[int, ...], Tuple[int, float, float]] = {(): (0, float(x), 0.0)}
        self._w: Dict[Tuple[int, ...], float] = {}

    def _state(self, path: Tuple[int, ...]) -> Tuple[int, float, float]:
        if path not in self._states:
            parent = path[:-1]
            node, V, pos = self._state(parent)
            w = self[parent]
            up = path[-1] > 0
            rho = self._sol.spec.up if up else self._sol.spec.down
            st = self._sol.lattice[len(parent)]
            child = int(st.up[node] if up else st.dn[node])
            self._states[path] = (
                child, float(wealth_step(V, pos, w, rho, self._sol.frictions)), (pos + w) * rho
            )
        return self._states[path]

    def __getitem__(self, path) -> float:
        path = tuple(int(z) for z in path)
        if path in self._w:
            return self._w[path]
        if len(path) >= self._sol.n or any(z not in (1, -1) for z in path):
            raise MissingNodeError(f"no decision at node {path}")
        node, V, pos = self._state(path)
        _, w, _ = self._sol.decide(len(path), node, V, pos)
        self._w[path] = w
        return w

    def __iter__(self):
        for k in range(self._sol.n):
            yield from itertools.product((1, -1), repeat=k)

    def __len__(self) -> int:
        return 2 ** self._sol.n - 1


def evaluate_strategy_risk(
    tree: Dict[Tuple[int, ...], float],
    spec: LatticeSpec,
    params: MarketParams,
    payoff: PayoffSpec,
    frictions: Frictions,
    x: float,
) -> float:
    """Shortfall risk of a fixed strategy: backward Snell recursion of (Y - V)^+."""
    p = spec.p_n

    def rec(path, V, pos):
        k = len(path)
        shortfall = max(evaluate(payoff, spec, params, k, path) - V, 0.0)
        if k == spec.n:
            return shortfall
        try:
            w = tree[path]
        except KeyError:
            raise MissingNodeError(f"strategy has no transfer at node {path}") from None
        cont = 0.0
        for z, prob in ((1, p), (-1, 1.0 - p)):
            rho = spec.up if z > 0 else spec.down
            nxt = float(wealth_step(V, pos, w, rho, frictions))
            cont += prob * rec(path + (z,), nxt, (pos + w) * rho)
        return max(shortfall, cont)

    return rec((), float(x), 0.0)


# --------------------------------------------------------------------------
# brute-force oracle
# --------------------------------------------------------------------------


def _heap_payoffs(payoff: PayoffSpec, spec: LatticeSpec, params: MarketParams) -> np.ndarray:
    # node (k, i) at 2**k - 1 + i; bit j of i (from the top) is 1 for a down move
    out = np.empty(2 ** (spec.n + 1) - 1)
    for k in range(spec.n + 1):
        for i, path in enumerate(itertools.product((1, -1), repeat=k)):
            out[2 ** k - 1 + i] = evaluate(payoff, spec, params, k, path)
    return out


def oracle_bruteforce(
    spec: LatticeSpec,
    params: MarketParams,
    payoff: PayoffSpec,
    frictions: Frictions,
    x: float,
    w_grid_size: int = 201,
) -> float:
    """Exhaustive search over transfers on each node's admissible interval.

    Transfers before the last decision range over ``w_grid_size`` equally
    spaced points of the admissible interval plus ``-v``, ``0`` and the ends.
    At the last decision the children are terminal and the objective is
    piecewise linear in ``w``, so the search there is exact over its kinks.
    States are tracked exactly along every path (no value grids), which keeps
    this independent of ``solve``.  Grids of sizes g and 10(g - 1) + 1 are
    nested, so refining that way can only lower the estimate.
    """
    if spec.n > ORACLE_MAX_STEPS:
        raise InvalidParameterError(f"oracle is limited to n <= {ORACLE_MAX_STEPS}")
    if w_grid_size < 2:
        raise InvalidParameterError("w_grid_size must be at least 2")
    if not x >= 0.0:
        raise InvalidParameterError(f"initial capital must be >= 0, got {x}")
    phis = _heap_payoffs(payoff, spec, params)
    return float(
        _kernel.oracle_node(
            0, 0, float(x), 0.0, spec.n, phis, spec.a_n, spec.b_n, spec.p_n,
            frictions.lam, frictions.mu, int(w_grid_size),
        )
    )


# --------------------------------------------------------------------------
# risk curve
# --------------------------------------------------------------------------


@dataclass
class RiskCurve:
    x: np.ndarray
    R: np.ndarray
    breakpoints: np.ndarray
    lipschitz: float


def risk_curve(sol: Solution, x_values: Sequence[float], kink_tol: float = 1e-7) -> RiskCurve:
    """R_n on a sorted x-grid from one solve; kinks located from second differences."""
    xs = np.asarray(x_values, dtype=float)
    if xs.size and (np.any(np.diff(xs) < 0) or xs[0] < 0):
        raise InvalidParameterError("x_values must be sorted and non-negative")
    R = np.empty_like(xs)
    hint = math.nan
    for i, x in enumerate(xs):
        # the previous optimum stays admissible at larger capital
        R[i], hint, _ = sol.node_value(0, 0, float(x), 0.0, hint)
    if xs.size >= 3:
        slopes = np.diff(R) / np.diff(xs)
        jumps = np.abs(np.diff(slopes))
        idx = np.flatnonzero(jumps > kink_tol * (1.0 + np.abs(slopes).max()))
        breaks = xs[idx + 1]
        lip = float(np.abs(slopes).max())
    else:
        breaks, lip = np.empty(0), 0.0
    return RiskCurve(x=xs, R=R, breakpoints=breaks, lipschitz=lip)
