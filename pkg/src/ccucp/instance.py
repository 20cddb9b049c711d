"""Problem data for the unit commitment problem and the built-in benchmark.

Instances are immutable.  Vectors are stored as tuples and exposed as numpy
arrays through properties so that callers can do arithmetic without copying
by hand.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

__all__ = [
    "GeneratorParams",
    "InitialState",
    "FixedDemand",
    "GaussianDemand",
    "DemandSpec",
    "UcpInstance",
    "REGIMES",
    "correlation_regime",
    "builtin_stochastic_instance",
    "builtin_deterministic_instance",
    "validate",
    "load_instance",
    "save_instance",
    "instance_to_dict",
    "instance_from_dict",
]

PSD_TOL = 1e-9

# Off-diagonal correlations (rho12, rho13, rho23) for three periods.
REGIMES: dict[str, tuple[float, float, float]] = {
    "none": (0.0, 0.0, 0.0),
    "moderate": (0.3, 0.4, 0.5),
    "strong": (0.6, 0.7, 0.8),
}


@dataclass(frozen=True)
class GeneratorParams:
    p_min: int
    p_max: int
    r_up: int
    r_down: int
    c_startup: float
    c_shutdown: float
    c_fixed: float
    b: float


@dataclass(frozen=True)
class InitialState:
    u0: tuple[int, ...]
    p0: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "u0", tuple(int(v) for v in self.u0))
        object.__setattr__(self, "p0", tuple(float(v) for v in self.p0))


@dataclass(frozen=True)
class FixedDemand:
    d: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))

    @property
    def kind(self) -> str:
        return "fixed"

    @property
    def horizon(self) -> int:
        return len(self.d)


@dataclass(frozen=True)
class GaussianDemand:
    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    corr: tuple[tuple[float, ...], ...]
    regime: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))
        object.__setattr__(
            self, "corr", tuple(tuple(float(v) for v in row) for row in np.asarray(self.corr))
        )

    @property
    def kind(self) -> str:
        return "gaussian"

    @property
    def horizon(self) -> int:
        return len(self.mu)

    @property
    def covariance(self) -> np.ndarray:
        s = np.asarray(self.sigma)
        return np.asarray(self.corr) * np.outer(s, s)


DemandSpec = Union[FixedDemand, GaussianDemand]


@dataclass(frozen=True)
class UcpInstance:
    generators: tuple[GeneratorParams, ...]
    horizon: int
    initial: InitialState
    demand: DemandSpec = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))

    @property
    def G(self) -> int:
        return len(self.generators)

    @property
    def T(self) -> int:
        return self.horizon

    def column(self, name: str) -> np.ndarray:
        """Per-generator parameter ``name`` as an array of length G."""
        return np.array([getattr(g, name) for g in self.generators])

    @property
    def is_stochastic(self) -> bool:
        return isinstance(self.demand, GaussianDemand)

    def with_demand(self, demand: DemandSpec) -> "UcpInstance":
        return UcpInstance(self.generators, demand.horizon, self.initial, demand)


# Appendix data: three thermal units over three hourly periods.
_TABLE_GENERATORS = (
    GeneratorParams(p_min=50, p_max=350, r_up=200, r_down=300,
                    c_startup=20.0, c_shutdown=0.5, c_fixed=5.0, b=0.10),
    GeneratorParams(p_min=80, p_max=200, r_up=100, r_down=150,
                    c_startup=18.0, c_shutdown=0.3, c_fixed=7.0, b=0.125),
    GeneratorParams(p_min=40, p_max=140, r_up=100, r_down=100,
                    c_startup=5.0, c_shutdown=1.0, c_fixed=6.0, b=0.150),
)
_TABLE_INITIAL = InitialState(u0=(0, 0, 1), p0=(0.0, 0.0, 100.0))
_TABLE_MU = (225.0, 630.0, 400.0)
_TABLE_SIGMA = (25.0, 40.0, 28.0)
_TABLE_FIXED_DEMAND = (160.0, 500.0, 400.0)


def correlation_regime(name: str) -> np.ndarray:
    """3x3 correlation matrix for one of the named regimes ``none``, ``moderate``, ``strong``."""
    try:
        r12, r13, r23 = REGIMES[name]
    except KeyError:
        raise ValueError(
            f"unknown correlation regime {name!r}; valid regimes: {', '.join(REGIMES)}"
        ) from None
    corr = np.array([[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]])
    assert not _corr_problems(corr), name
    return corr


def builtin_stochastic_instance(regime: str = "moderate") -> UcpInstance:
    demand = GaussianDemand(_TABLE_MU, _TABLE_SIGMA, correlation_regime(regime), regime=regime)
    return UcpInstance(_TABLE_GENERATORS, 3, _TABLE_INITIAL, demand)


def builtin_deterministic_instance() -> UcpInstance:
    return UcpInstance(_TABLE_GENERATORS, 3, _TABLE_INITIAL, FixedDemand(_TABLE_FIXED_DEMAND))


def _corr_problems(corr: np.ndarray) -> list[str]:
    out = []
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        return [f"correlation matrix must be square, got shape {corr.shape}"]
    if not np.all(np.isfinite(corr)):
        return ["correlation matrix has non-finite entries"]
    if not np.allclose(corr, corr.T, atol=1e-12):
        out.append("correlation matrix not symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        out.append("correlation matrix diagonal must be 1")
    if np.any(np.abs(corr) > 1.0):
        out.append("correlation out of range [-1, 1]")
    if not out and _smallest_cholesky_pivot(corr) < PSD_TOL:
        out.append("correlation matrix not positive semidefinite")
    return out


def _smallest_cholesky_pivot(a: np.ndarray) -> float:
    """Plain Cholesky that reports the smallest pivot instead of raising."""
    n = a.shape[0]
    L = np.zeros_like(a, dtype=float)
    smallest = math.inf
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        smallest = min(smallest, d)
        if d < PSD_TOL:
            return smallest
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (a[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return smallest


def validate(instance: UcpInstance) -> list[str]:
    """Return a list of human-readable invariant violations; empty means valid."""
    problems: list[str] = []
    G, T = instance.G, instance.T
    if G < 1:
        problems.append("instance needs at least one generator")
    if T < 1:
        problems.append("horizon must be at least 1")

    for g, gen in enumerate(instance.generators, start=1):
        if gen.p_min > gen.p_max:
            problems.append(f"generator {g}: p_min ({gen.p_min}) > p_max ({gen.p_max})")
        for name in ("p_min", "p_max", "r_up", "r_down"):
            v = getattr(gen, name)
            if v < 0:
                problems.append(f"generator {g}: {name} is negative ({v})")
            if int(v) != v:
                problems.append(f"generator {g}: {name} must be an integer MW value ({v})")
        for name in ("c_startup", "c_shutdown", "c_fixed", "b"):
            v = getattr(gen, name)
            if not (v >= 0):
                problems.append(f"generator {g}: {name} must be nonnegative ({v})")

    init = instance.initial
    if len(init.u0) != G or len(init.p0) != G:
        problems.append(f"initial state has length ({len(init.u0)}, {len(init.p0)}), expected {G}")
    else:
        for g, (u, p, gen) in enumerate(zip(init.u0, init.p0, instance.generators), start=1):
            if u not in (0, 1):
                problems.append(f"generator {g}: u0 must be 0 or 1 ({u})")
            elif u == 0 and p != 0:
                problems.append(f"generator {g}: offline initially but p0={p}")
            elif u == 1 and not (gen.p_min <= p <= gen.p_max):
                problems.append(f"generator {g}: p0={p} outside [{gen.p_min}, {gen.p_max}]")

    demand = instance.demand
    if demand.horizon != T:
        problems.append(f"demand has length {demand.horizon}, horizon is {T}")
    if isinstance(demand, FixedDemand):
        if any(not math.isfinite(d) or d < 0 for d in demand.d):
            problems.append("fixed demand must be finite and nonnegative")
    else:
        if len(demand.sigma) != len(demand.mu):
            problems.append("sigma and mu lengths differ")
        if any(not (s > 0) for s in demand.sigma):
            problems.append("sigma must be strictly positive")
        corr = np.asarray(demand.corr, dtype=float)
        if corr.shape != (len(demand.mu), len(demand.mu)):
            problems.append(f"correlation matrix has shape {corr.shape}, expected {(T, T)}")
        else:
            problems.extend(_corr_problems(corr))
    return problems


def instance_to_dict(instance: UcpInstance) -> dict:
    d = instance.demand
    if isinstance(d, FixedDemand):
        demand = {"kind": "fixed", "d": list(d.d)}
    else:
        demand = {"kind": "gaussian", "mu": list(d.mu), "sigma": list(d.sigma),
                  "corr": [list(r) for r in d.corr]}
        if d.regime != "custom":
            demand["regime"] = d.regime
    return {
        "generators": [
            {k: getattr(g, k) for k in ("p_min", "p_max", "r_up", "r_down",
                                         "c_startup", "c_shutdown", "c_fixed", "b")}
            for g in instance.generators
        ],
        "horizon": instance.horizon,
        "initial": {"u0": list(instance.initial.u0), "p0": list(instance.initial.p0)},
        "demand": demand,
    }


def instance_from_dict(data: dict) -> UcpInstance:
    try:
        gens = []
        for g in data["generators"]:
            gens.append(GeneratorParams(
                p_min=int(g["p_min"]), p_max=int(g["p_max"]),
                r_up=int(g["r_up"]), r_down=int(g["r_down"]),
                c_startup=float(g["c_startup"]), c_shutdown=float(g["c_shutdown"]),
                c_fixed=float(g["c_fixed"]), b=float(g["b"]),
            ))
        initial = InitialState(tuple(data["initial"]["u0"]), tuple(data["initial"]["p0"]))
        dem = data["demand"]
        if dem["kind"] == "fixed":
            demand: DemandSpec = FixedDemand(tuple(dem["d"]))
        elif dem["kind"] == "gaussian":
            demand = GaussianDemand(tuple(dem["mu"]), tuple(dem["sigma"]),
                                    tuple(tuple(r) for r in dem["corr"]),
                                    regime=dem.get("regime", "custom"))
        else:
            raise ValueError(f"unknown demand kind {dem['kind']!r}")
        return UcpInstance(tuple(gens), int(data["horizon"]), initial, demand)
    except KeyError as exc:
        raise ValueError(f"instance document missing key {exc}") from None


def load_instance(path) -> UcpInstance:
    return instance_from_dict(json.loads(Path(path).read_text()))


def save_instance(instance: UcpInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=2) + "\n")
