"""Scenario-approximated chance-constrained UCP: objective and feasibility.

Solutions carry commitment ``u``, start-up ``z_on``, shut-down ``z_off`` and
dispatch ``p`` as G x T arrays, plus optional per-scenario indicators ``y``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .instance import FixedDemand, UcpInstance
from .sampler import ScenarioSet

__all__ = [
    "Solution",
    "FeasibilityReport",
    "GROUPS",
    "objective",
    "make_solution",
    "check_feasible",
    "reliability_quota",
    "demand_rows",
    "save_solution",
    "load_solution",
]

GROUPS = ("logic", "exclusivity", "capacity", "ramp", "demand", "reliability")


@dataclass(frozen=True, eq=False)
class Solution:
    u: np.ndarray
    z_on: np.ndarray
    z_off: np.ndarray
    p: np.ndarray
    y: Optional[np.ndarray] = None
    objective: float = math.nan

    def __post_init__(self):
        for name in ("u", "z_on", "z_off"):
            a = np.array(getattr(self, name), dtype=np.int64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        p = np.array(self.p, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        if self.y is not None:
            y = np.array(self.y, dtype=np.int64)
            y.setflags(write=False)
            object.__setattr__(self, "y", y)
        shapes = {self.u.shape, self.z_on.shape, self.z_off.shape, self.p.shape}
        if len(shapes) != 1 or self.u.ndim != 2:
            raise ValueError(f"u, z_on, z_off, p must share one G x T shape, got {shapes}")

    def __eq__(self, other):
        if not isinstance(other, Solution):
            return NotImplemented
        same_y = (self.y is None and other.y is None) or (
            self.y is not None and other.y is not None and np.array_equal(self.y, other.y))
        return (same_y and np.array_equal(self.u, other.u)
                and np.array_equal(self.z_on, other.z_on)
                and np.array_equal(self.z_off, other.z_off)
                and np.array_equal(self.p, other.p))

    def to_dict(self) -> dict:
        d = {"u": self.u.tolist(), "z_on": self.z_on.tolist(),
             "z_off": self.z_off.tolist(), "p": self.p.tolist()}
        if self.y is not None:
            d["y"] = self.y.tolist()
        d["objective"] = self.objective
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Solution":
        return cls(d["u"], d["z_on"], d["z_off"], d["p"], d.get("y"),
                   float(d.get("objective", math.nan)))


@dataclass(frozen=True)
class FeasibilityReport:
    passed: dict
    violation: dict = field(default_factory=dict)

    @property
    def joint(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {"joint": self.joint,
                "groups": {k: {"passed": self.passed[k], "violation": self.violation.get(k, 0.0)}
                           for k in self.passed}}


def _check_shape(instance: UcpInstance, solution: Solution) -> None:
    if solution.u.shape != (instance.G, instance.T):
        raise ValueError(
            f"solution shape {solution.u.shape} does not match instance {(instance.G, instance.T)}")


def objective(instance: UcpInstance, solution: Solution) -> float:
    """Start-up + shut-down + fixed + marginal cost, summed over units and periods."""
    _check_shape(instance, solution)
    c_su = instance.column("c_startup")[:, None]
    c_sd = instance.column("c_shutdown")[:, None]
    c_f = instance.column("c_fixed")[:, None]
    b = instance.column("b")[:, None]
    return float(np.sum(solution.z_on * c_su + solution.z_off * c_sd
                        + solution.u * c_f + b * solution.p))


def make_solution(instance: UcpInstance, u, z_on, z_off, p, y=None) -> Solution:
    s = Solution(u, z_on, z_off, p, y)
    return Solution(s.u, s.z_on, s.z_off, s.p, s.y, objective(instance, s))


def reliability_quota(n: int, p_level: float) -> int:
    """Smallest number of scenarios that must be satisfied: ``ceil(p * n)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 < p_level <= 1.0:
        raise ValueError(f"reliability level must lie in (0, 1], got {p_level}")
    # round first so that e.g. 0.7 * 10 = 7.000000000000001 gives 7
    return min(n, math.ceil(round(p_level * n, 9)))


def demand_rows(instance: UcpInstance, scenarios: Optional[ScenarioSet]) -> np.ndarray:
    """Demand matrix (rows = scenarios) the solution has to be checked against."""
    if scenarios is not None:
        if scenarios.T != instance.T:
            raise ValueError(f"scenarios have {scenarios.T} periods, instance has {instance.T}")
        return scenarios.demands
    if isinstance(instance.demand, FixedDemand):
        return np.asarray(instance.demand.d)[None, :]
    raise ValueError("stochastic instance requires a scenario set")


def check_feasible(instance: UcpInstance, solution: Solution,
                   scenarios: Optional[ScenarioSet] = None,
                   p_level: Optional[float] = None, tol: float = 1e-6) -> FeasibilityReport:
    """Evaluate every constraint group of the scenario MILP on ``solution``.

    With a deterministic instance and no scenarios, demand is checked against
    the fixed profile and the reliability group is omitted.
    """
    _check_shape(instance, solution)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    u, zon, zoff, p = solution.u, solution.z_on, solution.z_off, solution.p
    u0 = np.asarray(instance.initial.u0)[:, None]
    p0 = np.asarray(instance.initial.p0)[:, None]
    u_prev = np.hstack([u0, u[:, :-1]])
    p_prev = np.hstack([p0, p[:, :-1]])
    passed, viol = {}, {}

    logic = np.abs(u - u_prev - zon + zoff)
    passed["logic"], viol["logic"] = bool(logic.sum() == 0), float(logic.sum())

    excl = np.maximum(zon + zoff - 1, 0)
    passed["exclusivity"], viol["exclusivity"] = bool(excl.sum() == 0), float(excl.sum())

    pmin = instance.column("p_min")[:, None]
    pmax = instance.column("p_max")[:, None]
    cap = np.maximum(pmin * u - p, 0) + np.maximum(p - pmax * u, 0)
    passed["capacity"] = bool(np.all(cap <= tol) and np.all(p >= -tol))
    viol["capacity"] = float(cap.sum())

    r_up = instance.column("r_up")[:, None]
    r_down = instance.column("r_down")[:, None]
    delta = p - p_prev
    ramp = np.maximum(delta - r_up, 0) + np.maximum(-r_down - delta, 0)
    passed["ramp"], viol["ramp"] = bool(np.all(ramp <= tol)), float(ramp.sum())

    stochastic = scenarios is not None or instance.is_stochastic
    D = demand_rows(instance, scenarios)
    supply = p.sum(axis=0)
    if stochastic:
        if solution.y is None:
            raise ValueError("scenario indicators y are required for a stochastic check")
        if p_level is None:
            raise ValueError("p_level is required for a stochastic check")
        y = solution.y
        if y.shape != (D.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({D.shape[0]},)")
        short = np.maximum(D * y[:, None] - supply[None, :], 0)
        passed["demand"], viol["demand"] = bool(np.all(short <= tol)), float(short.sum())
        quota = reliability_quota(D.shape[0], p_level)
        missing = max(quota - int(y.sum()), 0)
        passed["reliability"], viol["reliability"] = missing == 0, float(missing)
    else:
        short = np.maximum(D[0] - supply, 0)
        passed["demand"], viol["demand"] = bool(np.all(short <= tol)), float(short.sum())
    return FeasibilityReport(passed, viol)


def save_solution(solution: Solution, path, report: Optional[FeasibilityReport] = None) -> None:
    doc = solution.to_dict()
    if report is not None:
        doc["feasibility"] = report.to_dict()
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_solution(path) -> Solution:
    return Solution.from_dict(json.loads(Path(path).read_text()))
