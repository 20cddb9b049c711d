"""QUBO compilation of the binary UCP, energy evaluation and the text format.

Every constraint group is kept as a set of rows ``(A x + a) * (B x + b)``.
A squared equality penalty has ``B = A``.  The exclusivity and
commitment/dispatch coupling groups are products of two different linear
forms.  The QUBO is the weighted sum of these rows plus the linear objective,
expanded with ``x_i**2 = x_i``.  Quadratic entries are stored strictly upper
triangular with duplicates merged and exact zeros dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .encoding import (STOCHASTIC_SCALE, Layout, _fixed_demand_int, build_layout,
                       scaled_demands)
from .instance import UcpInstance
from .model import reliability_quota
from .sampler import ScenarioSet

__all__ = [
    "PenaltyWeights",
    "TABLE3_WEIGHTS",
    "QuboModel",
    "ConstraintGroup",
    "compile_qubo",
    "energy",
    "penalty_breakdown",
    "group_satisfied",
    "graph_stats",
    "export_qubo",
    "import_qubo",
    "REFERENCE_COUPLINGS",
]

# Published coupling counts for the built-in instance.
REFERENCE_COUPLINGS = {"deterministic": 5651, "stochastic_N10_p0.9": 26781}


@dataclass(frozen=True)
class PenaltyWeights:
    lambda_logic1: float = 1.0
    lambda_logic2: float = 1.0
    lambda_demand: float = 1.0
    lambda_coupling: float = 1.0
    lambda_capacity: float = 1.0
    lambda_ramp: float = 1.0
    lambda_reliability: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{f.name} must be finite and nonnegative, got {v}")

    def group(self, name: str) -> float:
        return getattr(self, f"lambda_{name}")

    def as_dict(self) -> dict:
        return {f.name[len("lambda_"):]: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "PenaltyWeights":
        known = {f.name[len("lambda_"):] for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            key = k[len("lambda_"):] if k.startswith("lambda_") else k
            if key not in known:
                raise ValueError(f"unknown penalty group {k!r}")
            kw[f"lambda_{key}"] = float(v)
        return cls(**kw)

    def updated(self, **groups) -> "PenaltyWeights":
        d = self.as_dict()
        d.update(groups)
        return PenaltyWeights.from_dict(d)


TABLE3_WEIGHTS = PenaltyWeights(24.62, 3.63, 7.21, 1081.48, 31.61, 37.32, 1.0)


@dataclass(frozen=True, eq=False)
class ConstraintGroup:
    """Rows of ``weight * (A x + a) * (B x + b)``; ``B is None`` means squared."""

    name: str
    weight: float
    A: sp.csr_matrix
    a: np.ndarray
    B: Optional[sp.csr_matrix] = None
    b: Optional[np.ndarray] = None

    @property
    def squared(self) -> bool:
        return self.B is None

    def row_values(self, X: np.ndarray) -> np.ndarray:
        """Unweighted row penalties for a batch of bit vectors (shape S x rows)."""
        left = (self.A @ X.T).T + self.a
        if self.squared:
            return left * left
        right = (self.B @ X.T).T + self.b
        return left * right

    def expand(self):
        """Return (linear, Q_upper, offset) of ``weight * sum_rows``."""
        n = self.A.shape[1]
        w = self.weight
        A = self.A.tocsr()
        B = A if self.B is None else self.B.tocsr()
        b = self.a if self.B is None else self.b
        # (A x + a)(B x + b) = x^T A^T B x + (a^T B + b^T A) x + a.b
        M = (A.T @ B).tocoo()
        lin = np.asarray(self.a @ B + b @ A).ravel() * w
        diag = M.row == M.col
        lin += w * np.bincount(M.row[diag], weights=M.data[diag], minlength=n)
        off = M.row != M.col
        r, c, v = M.row[off], M.col[off], M.data[off] * w
        lo, hi = np.minimum(r, c), np.maximum(r, c)
        Q = sp.coo_matrix((v, (lo, hi)), shape=(n, n))
        return lin, Q, w * float(self.a @ b)


@dataclass(frozen=True, eq=False)
class QuboModel:
    num_vars: int
    linear: np.ndarray
    qi: np.ndarray
    qj: np.ndarray
    qv: np.ndarray
    offset: float
    groups: dict = field(default_factory=dict)
    layout: Optional[Layout] = None
    objective_linear: Optional[np.ndarray] = None

    @property
    def num_couplings(self) -> int:
        return len(self.qv)

    @property
    def quadratic(self) -> dict:
        return {(int(i), int(j)): float(v) for i, j, v in zip(self.qi, self.qj, self.qv)}

    @property
    def linear_map(self) -> dict:
        nz = np.flatnonzero(self.linear)
        return {int(i): float(self.linear[i]) for i in nz}

    def upper(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.qv, (self.qi, self.qj)), shape=(self.num_vars, self.num_vars))

    def adjacency(self):
        """Symmetric CSR (indptr, indices, data) of the interaction graph."""
        U = self.upper()
        S = (U + U.T).tocsr()
        S.sort_indices()
        return S.indptr.astype(np.int64), S.indices.astype(np.int64), S.data.astype(float)

    def same_coefficients(self, other: "QuboModel") -> bool:
        return (self.num_vars == other.num_vars and self.offset == other.offset
                and np.array_equal(self.linear, other.linear)
                and np.array_equal(self.qi, other.qi) and np.array_equal(self.qj, other.qj)
                and np.array_equal(self.qv, other.qv))


def _from_parts(n: int, lin: np.ndarray, Q: sp.spmatrix, offset: float, **kw) -> QuboModel:
    Q = sp.coo_matrix(Q, shape=(n, n)).tocsr()
    Q.sum_duplicates()
    Q.eliminate_zeros()
    Q = Q.tocoo()
    order = np.lexsort((Q.col, Q.row))
    return QuboModel(n, np.asarray(lin, dtype=float), Q.row[order].astype(np.int64),
                     Q.col[order].astype(np.int64), Q.data[order].astype(float),
                     float(offset), **kw)


class _Rows:
    """Accumulates sparse linear-form rows."""

    def __init__(self, n):
        self.n = n
        self.r, self.c, self.v, self.const = [], [], [], []

    def add(self, terms, const=0.0):
        k = len(self.const)
        for idx, coef in terms:
            idx = np.atleast_1d(idx)
            coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
            self.r.extend([k] * len(idx))
            self.c.extend(idx.tolist())
            self.v.extend(coef.tolist())
        self.const.append(float(const))

    def matrix(self):
        m = sp.csr_matrix((self.v, (self.r, self.c)), shape=(len(self.const), self.n))
        m.sum_duplicates()
        return m, np.array(self.const)


def compile_qubo(instance: UcpInstance, weights: PenaltyWeights,
                 scenarios: Optional[ScenarioSet] = None,
                 p_level: Optional[float] = None) -> QuboModel:
    """Objective plus weighted penalties for every constraint group."""
    if instance.is_stochastic and scenarios is None:
        raise ValueError("stochastic instance requires scenarios and p_level")
    if not isinstance(weights, PenaltyWeights):
        raise TypeError("weights must be a PenaltyWeights instance")
    lay = build_layout(instance, scenarios, p_level)
    n = lay.num_vars
    G, T = instance.G, instance.T
    nb = lay.widths.n_gen
    pw = (1 << np.arange(nb)).astype(float)
    pmin = instance.column("p_min").astype(float)
    u0 = np.asarray(instance.initial.u0, dtype=float)
    p0 = np.asarray(instance.initial.p0, dtype=float)

    def dispatch_terms(g, t, scale=1.0):
        return [(lay.u(g, t), scale * pmin[g]), (lay.pbits(g, t), scale * pw)]

    def slack_terms(idx, sign, weights=None):
        if weights is None:
            weights = 1 << np.arange(len(idx))
        return [(idx, sign * np.asarray(weights, dtype=float))]

    # objective
    obj = np.zeros(n)
    for g, gen in enumerate(instance.generators):
        for t in range(T):
            obj[lay.zon(g, t)] += gen.c_startup
            obj[lay.zoff(g, t)] += gen.c_shutdown
            obj[lay.u(g, t)] += gen.c_fixed + gen.b * pmin[g]
            obj[lay.pbits(g, t)] += gen.b * pw

    groups = {}

    logic1 = _Rows(n)
    for g in range(G):
        for t in range(T):
            terms = [(lay.u(g, t), 1.0), (lay.zon(g, t), -1.0), (lay.zoff(g, t), 1.0)]
            const = 0.0
            if t == 0:
                const = -u0[g]
            else:
                terms.append((lay.u(g, t - 1), -1.0))
            logic1.add(terms, const)
    groups["logic1"] = ConstraintGroup("logic1", weights.lambda_logic1, *logic1.matrix())

    zon_rows, zoff_rows = _Rows(n), _Rows(n)
    for g in range(G):
        for t in range(T):
            zon_rows.add([(lay.zon(g, t), 1.0)])
            zoff_rows.add([(lay.zoff(g, t), 1.0)])
    A, a = zon_rows.matrix()
    B, b = zoff_rows.matrix()
    groups["logic2"] = ConstraintGroup("logic2", weights.lambda_logic2, A, a, B, b)

    off_rows, bits_rows = _Rows(n), _Rows(n)
    for g in range(G):
        for t in range(T):
            off_rows.add([(lay.u(g, t), -1.0)], 1.0)
            bits_rows.add([(lay.pbits(g, t), 1.0)])
    A, a = off_rows.matrix()
    B, b = bits_rows.matrix()
    groups["coupling"] = ConstraintGroup("coupling", weights.lambda_coupling, A, a, B, b)

    demand = _Rows(n)
    if lay.stochastic:
        Dsc = scaled_demands(scenarios).astype(float)
        for i in range(scenarios.n):
            for t in range(T):
                terms = []
                for g in range(G):
                    terms += dispatch_terms(g, t, STOCHASTIC_SCALE)
                terms.append((lay.y(i), -Dsc[i, t]))
                terms += slack_terms(lay.demand_slack(t, i), -1.0)
                demand.add(terms)
    else:
        D = _fixed_demand_int(instance).astype(float)
        for t in range(T):
            terms = []
            for g in range(G):
                terms += dispatch_terms(g, t)
            terms += slack_terms(lay.demand_slack(t), -1.0)
            demand.add(terms, -D[t])
    groups["demand"] = ConstraintGroup("demand", weights.lambda_demand, *demand.matrix())

    if lay.stochastic:
        rel = _Rows(n)
        quota = reliability_quota(scenarios.n, p_level)
        rel.add([(np.arange(lay.y_start, lay.y_start + scenarios.n), 1.0)]
                + slack_terms(lay.rel_slack(), -1.0), -quota)
        groups["reliability"] = ConstraintGroup("reliability", weights.lambda_reliability,
                                                *rel.matrix())

    ramp = _Rows(n)
    for g, gen in enumerate(instance.generators):
        for t in range(T):
            terms = dispatch_terms(g, t)
            const = float(gen.r_down)
            if t == 0:
                const -= p0[g]
            else:
                terms += dispatch_terms(g, t - 1, -1.0)
            terms += slack_terms(lay.ramp_slack(g, t), -1.0, lay.ramp_weights(g))
            ramp.add(terms, const)
    groups["ramp"] = ConstraintGroup("ramp", weights.lambda_ramp, *ramp.matrix())

    cap = _Rows(n)
    for g, gen in enumerate(instance.generators):
        for t in range(T):
            cap.add(dispatch_terms(g, t) + slack_terms(lay.cap_slack(g, t), 1.0),
                    -float(gen.p_max))
    groups["capacity"] = ConstraintGroup("capacity", weights.lambda_capacity, *cap.matrix())

    lin = obj.copy()
    Qs = []
    offset = 0.0
    for grp in groups.values():
        if grp.weight == 0:
            continue
        gl, gQ, go = grp.expand()
        lin += gl
        Qs.append(gQ)
        offset += go
    Q = sp.coo_matrix((n, n)) if not Qs else sum(Q.tocsr() for Q in Qs)
    return _from_parts(n, lin, Q, offset, groups=groups, layout=lay, objective_linear=obj)


def _as_batch(model: QuboModel, bits) -> tuple[np.ndarray, bool]:
    X = np.asarray(bits, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.num_vars:
        raise ValueError(f"expected {model.num_vars} bits, got {X.shape[1]}")
    return X, single


def energy(model: QuboModel, bits):
    """``offset + sum linear_i x_i + sum_{i<j} Q_ij x_i x_j`` for one or many bit vectors."""
    X, single = _as_batch(model, bits)
    U = model.upper()
    e = model.offset + X @ model.linear + np.einsum("si,si->s", (U @ X.T).T, X)
    return float(e[0]) if single else e


def penalty_breakdown(model: QuboModel, bits) -> dict:
    """Weighted penalty energy of each constraint group."""
    X, single = _as_batch(model, bits)
    out = {}
    for name, grp in model.groups.items():
        vals = grp.weight * grp.row_values(X).sum(axis=1)
        out[name] = float(vals[0]) if single else vals
    return out


def group_satisfied(model: QuboModel, bits) -> dict:
    """Per-group flag: every row of the group is exactly zero (weights ignored)."""
    X, single = _as_batch(model, bits)
    out = {}
    for name, grp in model.groups.items():
        ok = np.all(np.abs(grp.row_values(X)) < 1e-9, axis=1)
        out[name] = bool(ok[0]) if single else ok
    return out


def graph_stats(model: QuboModel) -> dict:
    deg = np.bincount(np.concatenate([model.qi, model.qj]), minlength=model.num_vars)
    hist = np.bincount(deg)
    stats = {
        "num_vars": model.num_vars,
        "num_couplings": model.num_couplings,
        "num_linear": int(np.count_nonzero(model.linear)),
        "max_degree": int(deg.max()) if len(deg) else 0,
        "mean_degree": float(deg.mean()) if len(deg) else 0.0,
        "degree_histogram": {str(d): int(c) for d, c in enumerate(hist) if c},
    }
    return stats


def _fmt(v: float) -> str:
    return repr(float(v))


def export_qubo(model: QuboModel, path) -> None:
    lin = np.flatnonzero(model.linear)
    lines = [f"qubo {model.num_vars} {len(lin)} {model.num_couplings} {_fmt(model.offset)}"]
    lines += [f"{i} {_fmt(model.linear[i])}" for i in lin]
    lines += [f"{i} {j} {_fmt(v)}" for i, j, v in zip(model.qi, model.qj, model.qv)]
    Path(path).write_text("\n".join(lines) + "\n")


def import_qubo(path) -> QuboModel:
    header = None
    lin: dict = {}
    quad: dict = {}
    seen: set = set()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if header is None:
                if parts[0] != "qubo" or len(parts) != 5:
                    raise ValueError("header must read 'qubo <vars> <linear> <quadratic> <offset>'")
                header = (int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4]))
                continue
            if len(parts) == 2:
                i, v = int(parts[0]), float(parts[1])
                if i in lin:
                    raise ValueError(f"duplicate linear key {i}")
                if not 0 <= i < header[0]:
                    raise ValueError(f"index {i} out of range")
                lin[i] = v
            elif len(parts) == 3:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
                if (i, j) in seen:
                    raise ValueError(f"duplicate quadratic key ({i}, {j})")
                if i == j:
                    raise ValueError(f"diagonal quadratic key ({i}, {i})")
                if not (0 <= i < header[0] and 0 <= j < header[0]):
                    raise ValueError(f"index out of range in ({i}, {j})")
                seen.add((i, j))
                key = (min(i, j), max(i, j))
                quad[key] = quad.get(key, 0.0) + v
            else:
                raise ValueError("expected 2 or 3 fields")
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if header is None:
        raise ValueError(f"{path}: missing header")
    n = header[0]
    linear = np.zeros(n)
    for i, v in lin.items():
        linear[i] = v
    keys = sorted(quad)
    Q = sp.coo_matrix(([quad[k] for k in keys],
                       ([k[0] for k in keys], [k[1] for k in keys])), shape=(n, n))
    return _from_parts(n, linear, Q, header[3])
