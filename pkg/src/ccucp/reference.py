"""Exact desk-scale solvers used as the classical benchmark.

The deterministic problem is solved by enumerating every commitment pattern.
Switching variables are derived from the pattern and dispatch comes from a
small LP.  Patterns are visited in order of a ramp-free lower bound, and the
search stops once the bound exceeds the incumbent.  The result is still proven
optimal over all ``2**(G*T)`` patterns.

The scenario problem reduces to choosing which scenarios to drop.  Given a kept
set, the demand constraints collapse to the per-period envelope of kept
demands, so each candidate drop set is one deterministic solve.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .instance import FixedDemand, InitialState, UcpInstance
from .model import Solution, make_solution, reliability_quota
from .sampler import ScenarioSet

__all__ = [
    "InfeasibleError",
    "ExactLimitError",
    "EnvelopeProblem",
    "derive_switching",
    "dispatch_lp",
    "solve_deterministic",
    "solve_envelope",
    "solve_stochastic_exact",
    "solve_stochastic_greedy",
    "candidate_drops",
    "envelope_of",
    "max_supply",
    "MAX_ENUM_CELLS",
]

MAX_ENUM_CELLS = 20
EXACT_LIMIT = 12
TIME_BUDGET = 60.0
_EPS = 1e-9


class InfeasibleError(RuntimeError):
    """No commitment pattern admits a dispatch meeting the demand floor."""


class ExactLimitError(RuntimeError):
    """The exact drop-set search exceeds its configured size or time budget."""


@dataclass(frozen=True, eq=False)
class EnvelopeProblem:
    envelope: np.ndarray
    committed: Optional[np.ndarray] = None

    def __post_init__(self):
        e = np.asarray(self.envelope, dtype=float)
        if np.any(e < 0):
            raise ValueError("envelope demands must be nonnegative")
        object.__setattr__(self, "envelope", e)


def derive_switching(u, initial: InitialState) -> tuple[np.ndarray, np.ndarray]:
    """Cheapest start-up/shut-down indicators consistent with commitment ``u``."""
    u = np.asarray(u, dtype=np.int64)
    u0 = np.asarray(initial.u0, dtype=np.int64)
    prev = np.concatenate([u0[:, None], u[:, :-1]], axis=1)
    d = u - prev
    return np.maximum(d, 0), np.maximum(-d, 0)


def _lp_data(instance: UcpInstance, committed: np.ndarray):
    G, T = instance.G, instance.T
    pmin = instance.column("p_min").astype(float)
    pmax = instance.column("p_max").astype(float)
    r_up = instance.column("r_up").astype(float)
    r_down = instance.column("r_down").astype(float)
    p0 = np.asarray(instance.initial.p0, dtype=float)
    nv = G * T
    idx = lambda g, t: g * T + t  # noqa: E731

    rows, rhs = [], []
    for g in range(G):
        for t in range(T):
            up = np.zeros(nv)
            up[idx(g, t)] = 1.0
            if t > 0:
                up[idx(g, t - 1)] = -1.0
                rows.append(up)
                rhs.append(r_up[g])
                rows.append(-up)
                rhs.append(r_down[g])
            else:
                rows.append(up)
                rhs.append(r_up[g] + p0[g])
                rows.append(-up)
                rhs.append(r_down[g] - p0[g])
    demand_rows = []
    for t in range(T):
        row = np.zeros(nv)
        row[[idx(g, t) for g in range(G)]] = -1.0
        demand_rows.append(row)
    c = np.repeat(instance.column("b").astype(float), T)
    bounds = [(pmin[g] * committed[g, t], pmax[g] * committed[g, t])
              for g in range(G) for t in range(T)]
    return c, np.array(rows), np.array(rhs), np.array(demand_rows), bounds


def dispatch_lp(instance: UcpInstance, committed, envelope, lexicographic: bool = True):
    """Cheapest dispatch for a fixed commitment meeting ``sum_g p[g,t] >= envelope[t]``.

    Returns ``(p, cost)`` with ``p`` shaped G x T.  With ``lexicographic`` the
    returned optimum is the lexicographically smallest one (g-major order).
    Raises :class:`InfeasibleError` when no dispatch exists.
    """
    committed = np.asarray(committed, dtype=np.int64)
    envelope = np.asarray(envelope, dtype=float)
    if envelope.shape != (instance.T,):
        raise ValueError(f"envelope must have length {instance.T}")
    c, A_r, b_r, A_d, bounds = _lp_data(instance, committed)
    A = np.vstack([A_r, A_d])
    b = np.concatenate([b_r, -envelope])
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status == 2:
        raise InfeasibleError("dispatch infeasible for this commitment and envelope")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x, cost = res.x, float(res.fun)
    if lexicographic:
        x = _lex_min(c, A, b, bounds, cost)
        cost = float(c @ x)
    p = _snap(x, A, b, bounds).reshape(instance.G, instance.T)
    return p, float(c @ p.ravel())


def _lex_min(c, A, b, bounds, cost):
    """Among optimal dispatches, minimise each variable in turn."""
    nv = len(c)
    A_cur = np.vstack([A, c])
    b_cur = np.append(b, cost + 1e-9)
    bnds = list(bounds)
    x = None
    for j in range(nv):
        lo, hi = bnds[j]
        if hi - lo <= 1e-12:
            continue
        e = np.zeros(nv)
        e[j] = 1.0
        res = linprog(e, A_ub=A_cur, b_ub=b_cur, bounds=bnds, method="highs")
        if res.status != 0:
            break
        x = res.x
        v = res.x[j]
        bnds[j] = (lo, max(lo, v + 1e-9))
    if x is None:
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        x = res.x
    return x


def _snap(x: np.ndarray, A, b, bounds) -> np.ndarray:
    """Remove LP round-off by rounding near-integers, if the result stays feasible."""
    r = np.round(x)
    snapped = np.where(np.abs(x - r) < 1e-5, r, x) + 0.0
    lo = np.array([bd[0] for bd in bounds])
    hi = np.array([bd[1] for bd in bounds])
    ok = (np.all(A @ snapped <= b + 1e-9) and np.all(snapped >= lo - 1e-9)
          and np.all(snapped <= hi + 1e-9))
    return snapped if ok else x


class _PatternTable:
    """All commitment patterns of an instance with their fixed (non-dispatch) cost."""

    def __init__(self, instance: UcpInstance):
        G, T = instance.G, instance.T
        if G * T > MAX_ENUM_CELLS:
            raise ExactLimitError(
                f"exhaustive commitment enumeration supports G*T <= {MAX_ENUM_CELLS}, got {G * T}")
        bits = np.array(list(itertools.product((0, 1), repeat=G * T)), dtype=np.int64)
        self.U = bits.reshape(-1, G, T)
        u0 = np.asarray(instance.initial.u0, dtype=np.int64)
        prev = np.concatenate([np.broadcast_to(u0[None, :, None], (len(bits), G, 1)),
                               self.U[:, :, :-1]], axis=2)
        d = self.U - prev
        zon, zoff = np.maximum(d, 0), np.maximum(-d, 0)
        c_su = instance.column("c_startup")[None, :, None]
        c_sd = instance.column("c_shutdown")[None, :, None]
        c_f = instance.column("c_fixed")[None, :, None]
        self.commit_cost = np.sum(zon * c_su + zoff * c_sd + self.U * c_f, axis=(1, 2))
        self.pmin = instance.column("p_min").astype(float)
        self.pmax = instance.column("p_max").astype(float)
        self.b = instance.column("b").astype(float)
        self.order_b = np.argsort(self.b, kind="stable")
        self.cap = np.einsum("pgt,g->pt", self.U, self.pmax)

    def lower_bounds(self, envelope: np.ndarray) -> np.ndarray:
        """Ramp-free dispatch cost bound plus commitment cost; inf where capacity is short."""
        U = self.U
        base = np.einsum("pgt,g->pt", U, self.pmin)
        need = np.maximum(envelope[None, :] - base, 0.0)
        cost = np.einsum("pgt,g->pt", U, self.pmin * self.b)
        for g in self.order_b:
            room = U[:, g, :] * (self.pmax[g] - self.pmin[g])
            take = np.minimum(need, room)
            cost += take * self.b[g]
            need -= take
        lb = self.commit_cost + cost.sum(axis=1)
        lb[np.any(self.cap < envelope[None, :] - 1e-9, axis=1)] = np.inf
        return lb


_TABLES: dict = {}


def _table(instance: UcpInstance) -> _PatternTable:
    key = id(instance)
    hit = _TABLES.get(key)
    if hit is None or hit[0] is not instance:
        if len(_TABLES) > 64:
            _TABLES.clear()
        hit = (instance, _PatternTable(instance))
        _TABLES[key] = hit
    return hit[1]


def _better(cost, k, best_cost, best_k) -> bool:
    if best_k is None or cost < best_cost - _EPS:
        return True
    return abs(cost - best_cost) <= _EPS and k < best_k


def _search_patterns(instance, table, envelope, cutoff=math.inf):
    """Best (cost, pattern index) for one envelope, or None if nothing beats ``cutoff``."""
    lb = table.lower_bounds(envelope)
    order = np.lexsort((np.arange(len(lb)), lb))
    best_cost, best_k = cutoff, None
    for k in order:
        if lb[k] > best_cost + _EPS:
            break
        try:
            _, dcost = dispatch_lp(instance, table.U[k], envelope, lexicographic=False)
        except InfeasibleError:
            continue
        cost = table.commit_cost[k] + dcost
        if best_k is None and cost > cutoff + _EPS:
            continue
        if _better(cost, k, best_cost, best_k):
            best_cost, best_k = cost, int(k)
    if best_k is None:
        return None
    return best_cost, best_k


def solve_envelope(instance: UcpInstance, envelope) -> Solution:
    """Global optimum over all commitments for a per-period demand floor."""
    envelope = EnvelopeProblem(envelope).envelope
    if envelope.shape != (instance.T,):
        raise ValueError(f"envelope must have length {instance.T}")
    table = _table(instance)
    found = _search_patterns(instance, table, envelope)
    if found is None:
        raise InfeasibleError("no commitment pattern admits a dispatch meeting demand")
    return _finish(instance, table.U[found[1]], envelope)


def _finish(instance, u, envelope, y=None) -> Solution:
    p, _ = dispatch_lp(instance, u, envelope, lexicographic=True)
    zon, zoff = derive_switching(u, instance.initial)
    return make_solution(instance, u, zon, zoff, p, y)


def solve_deterministic(instance: UcpInstance) -> Solution:
    """Proven optimum of the fixed-demand problem by exhaustive commitment enumeration."""
    if not isinstance(instance.demand, FixedDemand):
        raise TypeError("solve_deterministic needs a fixed-demand instance")
    return solve_envelope(instance, np.asarray(instance.demand.d))


def envelope_of(demands: np.ndarray, keep=None) -> np.ndarray:
    d = demands if keep is None else demands[np.asarray(keep, dtype=bool)]
    return d.max(axis=0)


def candidate_drops(demands: np.ndarray, k: int) -> np.ndarray:
    """Scenarios ranked among the ``k`` largest in at least one period.

    Some optimal drop set of size ``k`` lies inside this set.  Swapping a
    dropped non-candidate for a kept candidate never raises any period's
    envelope, because a top-k scenario of every period is always still kept.
    """
    n = demands.shape[0]
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    mark = np.zeros(n, dtype=bool)
    for t in range(demands.shape[1]):
        order = np.lexsort((np.arange(n), -demands[:, t]))
        mark[order[:k]] = True
    return np.flatnonzero(mark)


def _indicators(demands: np.ndarray, p: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    supply = p.sum(axis=0)
    return np.all(demands <= supply[None, :] + tol, axis=1).astype(np.int64)


def solve_stochastic_exact(instance: UcpInstance, scenarios: ScenarioSet, p_level: float,
                           exact_limit: int = EXACT_LIMIT,
                           time_budget: float = TIME_BUDGET) -> Solution:
    """Optimal scenario-approximation solution by enumerating drop sets."""
    D = scenarios.demands
    N = D.shape[0]
    if N > exact_limit:
        raise ExactLimitError(
            f"{N} scenarios exceeds the exact limit of {exact_limit}; use the greedy solver")
    quota = reliability_quota(N, p_level)
    k = N - quota
    cand = candidate_drops(D, k)
    table = _table(instance)
    start = time.monotonic()

    envelopes = {}
    for drop in itertools.combinations(cand.tolist(), k):
        keep = np.ones(N, dtype=bool)
        keep[list(drop)] = False
        env = envelope_of(D, keep)
        envelopes.setdefault(tuple(env), env)
    order = sorted(envelopes, key=lambda e: (sum(e), e))

    best = None  # (cost, pattern index, envelope)
    for key in order:
        if time.monotonic() - start > time_budget:
            raise ExactLimitError(f"exact search exceeded the {time_budget:.0f} s budget")
        env = envelopes[key]
        cutoff = best[0] if best is not None else math.inf
        found = _search_patterns(instance, table, env, cutoff)
        if found is None:
            continue
        cost, kpat = found
        if best is None or cost < best[0] - _EPS or (
                abs(cost - best[0]) <= _EPS and kpat < best[1]):
            best = (cost, kpat, env)
    if best is None:
        raise InfeasibleError("no drop set admits a feasible commitment")
    sol = _finish(instance, table.U[best[1]], best[2])
    y = _indicators(D, sol.p)
    return make_solution(instance, sol.u, sol.z_on, sol.z_off, sol.p, y)


def max_supply(instance: UcpInstance) -> np.ndarray:
    """Largest total output reachable in each period, every unit committed."""
    committed = np.ones((instance.G, instance.T), dtype=np.int64)
    _, A_r, b_r, A_d, bounds = _lp_data(instance, committed)
    out = np.empty(instance.T)
    for t in range(instance.T):
        res = linprog(A_d[t], A_ub=A_r, b_ub=b_r, bounds=bounds, method="highs")
        if res.status != 0:
            raise InfeasibleError("ramp limits admit no dispatch even with every unit on")
        out[t] = -res.fun
    return out


def solve_stochastic_greedy(instance: UcpInstance, scenarios: ScenarioSet,
                            p_level: float) -> Solution:
    """Heuristic drop-set choice followed by one exact envelope solve.

    Scenarios that exceed the fleet's reachable output in some period are
    dropped first.  The remaining budget goes, one scenario at a time, to the
    drop that most lowers the envelope sum.
    """
    D = scenarios.demands
    N, T = D.shape
    quota = reliability_quota(N, p_level)
    budget = N - quota
    keep = np.all(D <= max_supply(instance)[None, :] + 1e-9, axis=1)
    if N - keep.sum() > budget:
        raise InfeasibleError(
            f"{N - int(keep.sum())} scenarios exceed the reachable supply; "
            f"at most {budget} may be dropped")
    for _ in range(budget - (N - int(keep.sum()))):
        idx = np.flatnonzero(keep)
        sub = D[idx]
        env = sub.max(axis=0)
        # second-largest per period among kept scenarios
        if len(idx) > 1:
            part = np.partition(sub, len(idx) - 2, axis=0)
            second = part[len(idx) - 2]
        else:
            second = np.zeros(T)
        is_max = sub == env[None, :]
        n_max = is_max.sum(axis=0)
        gain = np.where(is_max & (n_max[None, :] == 1), env[None, :] - second[None, :], 0.0)
        j = int(np.argmax(gain.sum(axis=1)))
        keep[idx[j]] = False
    env = envelope_of(D, keep)
    sol = solve_envelope(instance, env)
    y = _indicators(D, sol.p)
    return make_solution(instance, sol.u, sol.z_on, sol.z_off, sol.p, y)
