"""Reproducible scenario sampling from the multivariate normal demand model.

Scenario ``i`` is drawn from its own Philox4x64 stream keyed by the seed with
``i`` in the third counter word, so each row depends only on ``(seed, i)``.
Generation order and chunking therefore never change the result.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .instance import GaussianDemand, UcpInstance

__all__ = ["ScenarioSet", "FactorizationError", "cholesky", "sample",
           "save_scenarios", "load_scenarios", "round2"]

_KEY_MASK = (1 << 64) - 1


class FactorizationError(ValueError):
    """Raised when a covariance matrix is not positive definite."""


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    demands: np.ndarray
    seed: Optional[int] = None
    regime: str = "custom"

    def __post_init__(self):
        d = np.array(self.demands, dtype=float)
        if d.ndim != 2 or d.shape[0] < 1:
            raise ValueError("no scenarios")
        if not np.all(np.isfinite(d)):
            raise ValueError("scenario demands must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "demands", d)

    @property
    def n(self) -> int:
        return self.demands.shape[0]

    @property
    def T(self) -> int:
        return self.demands.shape[1]

    def subset(self, rows) -> "ScenarioSet":
        return ScenarioSet(self.demands[np.asarray(rows)], self.seed, self.regime)

    def __eq__(self, other):
        if not isinstance(other, ScenarioSet):
            return NotImplemented
        return (self.seed == other.seed and self.regime == other.regime
                and np.array_equal(self.demands, other.demands))


def cholesky(corr, sigma) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == diag(sigma) @ corr @ diag(sigma)``."""
    corr = np.asarray(corr, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    cov = corr * np.outer(sigma, sigma)
    n = cov.shape[0]
    L = np.zeros_like(cov)
    for j in range(n):
        pivot = cov[j, j] - L[j, :j] @ L[j, :j]
        # pivot tolerance is relative to the correlation scale
        if pivot <= 1e-9 * sigma[j] ** 2:
            raise FactorizationError(
                f"covariance not positive definite: pivot {j + 1} is {pivot:.3g}")
        L[j, j] = math.sqrt(pivot)
        for i in range(j + 1, n):
            L[i, j] = (cov[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def _standard_normals(seed: int, n: int, T: int) -> np.ndarray:
    key = int(seed) & _KEY_MASK
    z = np.empty((n, T))
    for i in range(n):
        gen = np.random.Generator(np.random.Philox(key=key, counter=[0, 0, i, 0]))
        z[i] = gen.standard_normal(T)
    return z


def sample(instance: UcpInstance, n: int, seed: int) -> ScenarioSet:
    """Draw ``n`` demand scenarios; negative components are clamped to zero."""
    demand = instance.demand
    if not isinstance(demand, GaussianDemand):
        raise TypeError("sampling requires a Gaussian demand specification, got fixed demand")
    if n < 1:
        raise ValueError("n must be at least 1")
    L = cholesky(demand.corr, demand.sigma)
    z = _standard_normals(seed, n, instance.T)
    d = np.asarray(demand.mu) + z @ L.T
    np.maximum(d, 0.0, out=d)
    return ScenarioSet(d, seed=int(seed), regime=demand.regime)


def round2(x):
    """Round half away from zero to 2 decimals, robust to binary representation."""
    a = np.asarray(x, dtype=float)
    scaled = np.round(a * 100.0, 6)
    return np.sign(scaled) * np.floor(np.abs(scaled) + 0.5) / 100.0


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_scenarios(scenarios: ScenarioSet, path, extra: Optional[dict] = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"t{t + 1}" for t in range(scenarios.T)])
        for row in round2(scenarios.demands):
            w.writerow([f"{v:.2f}" for v in row])
    meta = {"seed": scenarios.seed, "regime": scenarios.regime, "n": scenarios.n}
    meta.update(extra or {})
    _sidecar(path).write_text(json.dumps(meta, indent=2) + "\n")


def load_scenarios(path) -> ScenarioSet:
    """Read a scenario CSV; lines starting with ``#`` are ignored."""
    path = Path(path)
    numbered = [(k, ln) for k, ln in enumerate(path.read_text().splitlines(), start=1)
                if not ln.startswith("#")]
    if not numbered:
        raise ValueError(f"{path}: no scenarios")
    header = next(csv.reader([numbered[0][1]]))
    T = len(header)
    rows = []
    for lineno, line in numbered[1:]:
        row = next(csv.reader([line]), [])
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != T:
            raise ValueError(f"{path}:{lineno}: expected {T} values, got {len(row)}")
        try:
            rows.append([float(c) for c in row])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric cell in {row!r}") from None
    if not rows:
        raise ValueError(f"{path}: no scenarios")
    seed, regime = None, "custom"
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text())
        seed, regime = meta.get("seed"), meta.get("regime", "custom")
        if meta.get("n") not in (None, len(rows)):
            raise ValueError(f"{side}: metadata says n={meta['n']}, file has {len(rows)} rows")
    return ScenarioSet(np.array(rows), seed=seed, regime=regime)
