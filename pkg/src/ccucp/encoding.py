"""Pure-binary form of the UCP: dispatch bits, slack bits and their layout.

Variable order is fixed:

    u, z_on, z_off        (g-major, then t)
    dispatch bits         (g, t, k)
    scenario indicators y (stochastic only)
    slacks                demand, reliability, ramp, capacity

Demand slacks are indexed by ``t`` (deterministic) or ``(i, t)`` with ``i``
major (stochastic).  Ramp and capacity slacks are indexed by ``(g, t)``.
Stochastic demands are rounded to cents and multiplied by 100 so that every
equality has integer coefficients.  The ramp slack is offset by ``R_down`` so
one nonnegative slack covers both sides of the ramp constraint.  Its top bit
carries ``R_up + R_down - (2**(w-1) - 1)`` instead of ``2**(w-1)`` so the bits
span exactly ``[0, R_up + R_down]``; plain powers of two would overshoot and
let a zero-penalty state exceed ``R_up``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .instance import UcpInstance
from .model import Solution, make_solution, reliability_quota
from .sampler import ScenarioSet, round2

__all__ = [
    "BitWidthTable",
    "Layout",
    "bits_for_range",
    "gen_bits",
    "reliability_bits",
    "bitwidth_table",
    "total_binary_variables",
    "build_layout",
    "scaled_demands",
    "encode_solution",
    "decode_solution",
    "decode_slacks",
    "binary_feasibility",
    "bits_to_string",
    "capped_weights",
    "bits_from_string",
    "STOCHASTIC_SCALE",
]

STOCHASTIC_SCALE = 100


def bits_for_range(s_max: int) -> int:
    """Bits needed to represent every integer in ``[0, s_max]``."""
    s_max = int(s_max)
    if s_max < 0:
        raise ValueError("s_max must be nonnegative")
    return s_max.bit_length()


def gen_bits(instance: UcpInstance) -> int:
    """Dispatch bits per (g, t), sized by the widest generator range."""
    return bits_for_range(int(np.max(instance.column("p_max") - instance.column("p_min"))))


def reliability_bits(n_scenarios: int, p_level: float) -> int:
    """``ceil(log2(N (1 - p) + 1))``, evaluated in exact rational arithmetic."""
    p = Fraction(p_level).limit_denominator(10**9)
    x = n_scenarios * (1 - p)
    return bits_for_range(math.ceil(x))


@dataclass(frozen=True)
class BitWidthTable:
    n_gen: int
    n_demand: int
    n_ramp: tuple[int, ...]
    n_capacity: tuple[int, ...]
    n_reliability: int
    scale: int
    demand_slack_max: int


def bitwidth_table(instance: UcpInstance, n_scenarios: Optional[int] = None,
                   p_level: Optional[float] = None) -> BitWidthTable:
    if (n_scenarios is None) != (p_level is None):
        raise ValueError("n_scenarios and p_level must be given together")
    if n_scenarios is not None and n_scenarios < 1:
        raise ValueError("n_scenarios must be at least 1")
    n = gen_bits(instance)
    stochastic = n_scenarios is not None
    scale = STOCHASTIC_SCALE if stochastic else 1
    pmin = instance.column("p_min").astype(int)
    s_max = scale * int(np.sum(pmin + (2**n - 1)))
    ramp = tuple(bits_for_range(g.r_up + g.r_down) for g in instance.generators)
    cap = tuple(bits_for_range(g.p_max) for g in instance.generators)
    rel = reliability_bits(n_scenarios, p_level) if stochastic else 0
    return BitWidthTable(n, bits_for_range(s_max), ramp, cap, rel, scale, s_max)


def total_binary_variables(instance: UcpInstance, n_scenarios: Optional[int] = None,
                           p_level: Optional[float] = None) -> int:
    """3GT + GTn + N + ramp + reliability + demand + capacity slack bits."""
    w = bitwidth_table(instance, n_scenarios, p_level)
    G, T = instance.G, instance.T
    N = n_scenarios or 0
    demand_blocks = T * (N if n_scenarios is not None else 1)
    return (3 * G * T + G * T * w.n_gen + N + T * sum(w.n_ramp) + w.n_reliability
            + demand_blocks * w.n_demand + T * sum(w.n_capacity))


def capped_weights(width: int, bound: Optional[int] = None) -> np.ndarray:
    """Bit weights whose subset sums are exactly ``{0, ..., bound}``.

    Powers of two, except that the top weight is lowered so the total is
    ``bound``.  Without a bound (or when ``bound == 2**width - 1``) this is the
    plain binary expansion.
    """
    w = (1 << np.arange(width, dtype=np.int64))
    if width == 0 or bound is None:
        return w
    if bound.bit_length() != width:
        raise ValueError(f"bound {bound} needs {bound.bit_length()} bits, not {width}")
    w[-1] = bound - (int(w[-1]) - 1)
    return w


def _capped_bits(value: int, weights: np.ndarray) -> np.ndarray:
    # canonical form: the top bit is used only when the lower bits cannot reach value
    width = len(weights)
    out = np.zeros(width, dtype=np.uint8)
    if width == 0:
        return out
    low = (1 << (width - 1)) - 1
    if value > low:
        out[-1] = 1
        value -= int(weights[-1])
    out[:-1] = _bits_of(value, width - 1)
    return out


class Layout:
    """Index map from named binary variables to positions in the bit vector."""

    def __init__(self, instance: UcpInstance, n_scenarios: Optional[int] = None,
                 p_level: Optional[float] = None):
        self.G, self.T = instance.G, instance.T
        self.n_scenarios = n_scenarios
        self.p_level = p_level
        self.stochastic = n_scenarios is not None
        self.widths = w = bitwidth_table(instance, n_scenarios, p_level)
        self.ramp_bound = tuple(g.r_up + g.r_down for g in instance.generators)
        G, T, n = self.G, self.T, w.n_gen
        N = n_scenarios or 0
        pos = 0

        def take(count):
            nonlocal pos
            start = pos
            pos += count
            return start

        self.u_start = take(G * T)
        self.zon_start = take(G * T)
        self.zoff_start = take(G * T)
        self.p_start = take(G * T * n)
        self.y_start = take(N)
        self.n_demand_blocks = T * N if self.stochastic else T
        self.demand_start = take(self.n_demand_blocks * w.n_demand)
        self.rel_start = take(w.n_reliability)
        ramp_off, cap_off = [], []
        for g in range(G):
            for t in range(T):
                ramp_off.append(take(w.n_ramp[g]))
        for g in range(G):
            for t in range(T):
                cap_off.append(take(w.n_capacity[g]))
        self._ramp_off = ramp_off
        self._cap_off = cap_off
        self.num_vars = pos
        self.ramp_start = ramp_off[0] if ramp_off else pos
        self.cap_start = cap_off[0] if cap_off else pos

    # index helpers
    def u(self, g, t):
        return self.u_start + g * self.T + t

    def zon(self, g, t):
        return self.zon_start + g * self.T + t

    def zoff(self, g, t):
        return self.zoff_start + g * self.T + t

    def pbits(self, g, t):
        n = self.widths.n_gen
        s = self.p_start + (g * self.T + t) * n
        return np.arange(s, s + n)

    def y(self, i):
        return self.y_start + i

    def demand_slack(self, t, i=None):
        w = self.widths.n_demand
        block = t if i is None else i * self.T + t
        s = self.demand_start + block * w
        return np.arange(s, s + w)

    def rel_slack(self):
        return np.arange(self.rel_start, self.rel_start + self.widths.n_reliability)

    def ramp_slack(self, g, t):
        s = self._ramp_off[g * self.T + t]
        return np.arange(s, s + self.widths.n_ramp[g])

    def ramp_weights(self, g) -> np.ndarray:
        return capped_weights(self.widths.n_ramp[g], self.ramp_bound[g])

    def cap_slack(self, g, t):
        s = self._cap_off[g * self.T + t]
        return np.arange(s, s + self.widths.n_capacity[g])

    def manifest(self) -> dict:
        """Named index ranges ``[start, stop)`` for each variable family."""
        return {
            "num_vars": self.num_vars,
            "G": self.G, "T": self.T,
            "n_scenarios": self.n_scenarios, "p_level": self.p_level,
            "widths": {
                "gen": self.widths.n_gen, "demand": self.widths.n_demand,
                "ramp": list(self.widths.n_ramp), "capacity": list(self.widths.n_capacity),
                "reliability": self.widths.n_reliability, "scale": self.widths.scale,
            },
            "ramp_top_weight": [int(self.ramp_weights(g)[-1]) if len(self.ramp_weights(g))
                                else 0 for g in range(self.G)],
            "ranges": {
                "u": [self.u_start, self.zon_start],
                "z_on": [self.zon_start, self.zoff_start],
                "z_off": [self.zoff_start, self.p_start],
                "dispatch_bits": [self.p_start, self.y_start],
                "y": [self.y_start, self.demand_start],
                "demand_slack": [self.demand_start, self.rel_start],
                "reliability_slack": [self.rel_start, self.ramp_start],
                "ramp_slack": [self.ramp_start, self.cap_start],
                "capacity_slack": [self.cap_start, self.num_vars],
            },
        }

    def save_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2) + "\n")


def build_layout(instance: UcpInstance, scenarios: Optional[ScenarioSet] = None,
                 p_level: Optional[float] = None) -> Layout:
    if scenarios is None:
        if instance.is_stochastic:
            raise ValueError("stochastic instance needs scenarios and p_level")
        return Layout(instance)
    if p_level is None:
        raise ValueError("p_level is required with scenarios")
    return Layout(instance, scenarios.n, p_level)


def scaled_demands(scenarios: ScenarioSet) -> np.ndarray:
    """Scenario demands rounded to cents, as integers in units of 0.01 MW."""
    return np.rint(round2(scenarios.demands) * STOCHASTIC_SCALE).astype(np.int64)


def _fixed_demand_int(instance: UcpInstance) -> np.ndarray:
    d = np.asarray(instance.demand.d)
    if not np.all(d == np.round(d)):
        raise ValueError("binary encoding of a fixed-demand instance needs integer demands")
    return d.astype(np.int64)


def _bits_of(value: int, width: int) -> np.ndarray:
    return ((int(value) >> np.arange(width)) & 1).astype(np.uint8)


def _value_of(bits: np.ndarray) -> int:
    return int(np.dot(bits.astype(np.int64), 1 << np.arange(len(bits), dtype=np.int64)))


def encode_solution(instance: UcpInstance, solution: Solution,
                    scenarios: Optional[ScenarioSet] = None,
                    p_level: Optional[float] = None) -> np.ndarray:
    """Bit vector for ``solution``; slack bits are set to the constraint residuals.

    Residuals outside a slack's range (infeasible solutions) are clipped.
    """
    lay = build_layout(instance, scenarios, p_level)
    w = lay.widths
    G, T = instance.G, instance.T
    x = np.zeros(lay.num_vars, dtype=np.uint8)
    pmin = instance.column("p_min").astype(np.int64)
    p = np.asarray(solution.p, dtype=float)
    p_int = np.rint(p).astype(np.int64)
    if np.any(np.abs(p - p_int) > 1e-6):
        raise ValueError("dispatch is not integer-valued and cannot be binary encoded")
    for g in range(G):
        for t in range(T):
            x[lay.u(g, t)] = solution.u[g, t]
            x[lay.zon(g, t)] = solution.z_on[g, t]
            x[lay.zoff(g, t)] = solution.z_off[g, t]
            q = p_int[g, t] - pmin[g] * solution.u[g, t]
            if not 0 <= q <= 2**w.n_gen - 1:
                raise ValueError(
                    f"dispatch p[{g},{t}]={p_int[g, t]} not representable with u={solution.u[g, t]}")
            x[lay.pbits(g, t)] = _bits_of(q, w.n_gen)

    def put(idx, value):
        hi = 2 ** len(idx) - 1
        x[idx] = _bits_of(min(max(int(value), 0), hi), len(idx))

    supply = p_int.sum(axis=0)
    if lay.stochastic:
        if solution.y is None:
            raise ValueError("stochastic encoding needs scenario indicators y")
        y = np.asarray(solution.y, dtype=np.int64)
        x[lay.y_start:lay.y_start + len(y)] = y
        Dsc = scaled_demands(scenarios)
        for i in range(scenarios.n):
            for t in range(T):
                put(lay.demand_slack(t, i), w.scale * supply[t] - Dsc[i, t] * y[i])
        put(lay.rel_slack(), int(y.sum()) - reliability_quota(scenarios.n, p_level))
    else:
        D = _fixed_demand_int(instance)
        for t in range(T):
            put(lay.demand_slack(t), supply[t] - D[t])
    p0 = np.rint(np.asarray(instance.initial.p0)).astype(np.int64)
    for g, gen in enumerate(instance.generators):
        for t in range(T):
            prev = p0[g] if t == 0 else p_int[g, t - 1]
            r = min(max(int(p_int[g, t] - prev + gen.r_down), 0), lay.ramp_bound[g])
            x[lay.ramp_slack(g, t)] = _capped_bits(r, lay.ramp_weights(g))
            put(lay.cap_slack(g, t), gen.p_max - p_int[g, t])
    return x


def decode_solution(instance: UcpInstance, bits, scenarios: Optional[ScenarioSet] = None,
                    p_level: Optional[float] = None, layout: Optional[Layout] = None) -> Solution:
    """Solution encoded by ``bits``; slack bits are ignored."""
    lay = layout or build_layout(instance, scenarios, p_level)
    x = np.asarray(bits, dtype=np.int64)
    if x.shape != (lay.num_vars,):
        raise ValueError(f"expected {lay.num_vars} bits, got {x.shape}")
    G, T, n = instance.G, instance.T, lay.widths.n_gen
    GT = G * T
    u = x[lay.u_start:lay.u_start + GT].reshape(G, T)
    zon = x[lay.zon_start:lay.zon_start + GT].reshape(G, T)
    zoff = x[lay.zoff_start:lay.zoff_start + GT].reshape(G, T)
    pb = x[lay.p_start:lay.p_start + GT * n].reshape(G, T, n)
    q = pb @ (1 << np.arange(n, dtype=np.int64))
    p = instance.column("p_min").astype(np.int64)[:, None] * u + q
    y = None
    if lay.stochastic:
        y = x[lay.y_start:lay.y_start + lay.n_scenarios]
    return make_solution(instance, u, zon, zoff, p.astype(float), y)


def decode_slacks(layout: Layout, bits) -> dict:
    """Integer slack values keyed by family."""
    x = np.asarray(bits, dtype=np.int64)
    lay = layout
    out = {}
    if lay.stochastic:
        out["demand"] = np.array([[_value_of(x[lay.demand_slack(t, i)]) for t in range(lay.T)]
                                  for i in range(lay.n_scenarios)])
        out["reliability"] = _value_of(x[lay.rel_slack()])
    else:
        out["demand"] = np.array([_value_of(x[lay.demand_slack(t)]) for t in range(lay.T)])
    out["ramp"] = np.array([[int(x[lay.ramp_slack(g, t)] @ lay.ramp_weights(g))
                             for t in range(lay.T)]
                            for g in range(lay.G)])
    out["capacity"] = np.array([[_value_of(x[lay.cap_slack(g, t)]) for t in range(lay.T)]
                                for g in range(lay.G)])
    return out


def binary_feasibility(instance: UcpInstance, bits, scenarios: Optional[ScenarioSet] = None,
                       p_level: Optional[float] = None) -> dict:
    """Direct integer check of every equality of the binary model.

    Independent of any QUBO coefficients: decodes integers and tests each
    constraint exactly.  Keys match the penalty groups of the QUBO.
    """
    lay = build_layout(instance, scenarios, p_level)
    x = np.asarray(bits, dtype=np.int64)
    sol = decode_solution(instance, x, layout=lay)
    sl = decode_slacks(lay, x)
    G, T, n = instance.G, instance.T, lay.widths.n_gen
    u, zon, zoff = sol.u, sol.z_on, sol.z_off
    p = np.rint(sol.p).astype(np.int64)
    u0 = np.asarray(instance.initial.u0, dtype=np.int64)
    p0 = np.rint(np.asarray(instance.initial.p0)).astype(np.int64)
    u_prev = np.concatenate([u0[:, None], u[:, :-1]], axis=1)
    p_prev = np.concatenate([p0[:, None], p[:, :-1]], axis=1)
    pb = x[lay.p_start:lay.p_start + G * T * n].reshape(G, T, n)
    r_down = instance.column("r_down").astype(np.int64)[:, None]
    pmax = instance.column("p_max").astype(np.int64)[:, None]

    ok = {
        "logic1": bool(np.all(u - u_prev - zon + zoff == 0)),
        "logic2": bool(np.all(zon * zoff == 0)),
        "coupling": bool(np.all((1 - u)[:, :, None] * pb == 0)),
        "ramp": bool(np.all(p - p_prev + r_down - sl["ramp"] == 0)),
        "capacity": bool(np.all(p + sl["capacity"] - pmax == 0)),
    }
    supply = p.sum(axis=0)
    if lay.stochastic:
        y = sol.y
        Dsc = scaled_demands(scenarios)
        ok["demand"] = bool(np.all(
            STOCHASTIC_SCALE * supply[None, :] - Dsc * y[:, None] - sl["demand"] == 0))
        quota = reliability_quota(scenarios.n, p_level)
        ok["reliability"] = int(y.sum()) - quota - sl["reliability"] == 0
    else:
        D = _fixed_demand_int(instance)
        ok["demand"] = bool(np.all(supply - D - sl["demand"] == 0))
    return ok


def bits_to_string(bits) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits))


def bits_from_string(s: str) -> np.ndarray:
    s = s.strip()
    if set(s) - {"0", "1"}:
        raise ValueError("bitstring may only contain '0' and '1'")
    return np.frombuffer(s.encode(), dtype=np.uint8) - ord("0")
