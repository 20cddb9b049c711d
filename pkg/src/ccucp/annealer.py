"""Single-bit-flip simulated annealing over a :class:`~ccucp.qubo.QuboModel`.

Each read owns a splitmix64 stream seeded from
``SeedSequence(seed).generate_state``.  Reads therefore do not depend on each
other or on how many threads run them.  Every sweep visits all variables in a
fresh random order and applies the Metropolis rule at that sweep's inverse
temperature.  Inverse temperatures follow a geometric schedule.  Flip costs
come from a maintained local field, so a proposal is O(1) and an accepted
flip is O(degree).
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

# TBB support varies by install; workqueue always ships with numba.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numba  # noqa: E402
import numpy as np

from .model import check_feasible
from .qubo import QuboModel, energy

__all__ = ["AnnealConfig", "SampleSet", "anneal", "default_schedule", "beta_schedule",
           "best_feasible", "FeasibleSummary", "local_fields", "flip_delta",
           "acceptance_rates", "replay_deltas"]


@dataclass(frozen=True)
class AnnealConfig:
    num_reads: int = 100
    sweeps: int = 1000
    beta_start: float = 0.1
    beta_end: float = 10.0
    seed: int = 0
    track_best: bool = False

    def __post_init__(self):
        if self.num_reads < 1:
            raise ValueError("num_reads must be at least 1")
        if self.sweeps < 1:
            raise ValueError("sweeps must be at least 1")
        if not (0 < self.beta_start <= self.beta_end) or not math.isfinite(self.beta_end):
            raise ValueError("need 0 < beta_start <= beta_end < inf")


@dataclass(frozen=True, eq=False)
class SampleSet:
    bits: np.ndarray
    energies: np.ndarray
    config: AnnealConfig
    wall_time: float = 0.0

    def __len__(self):
        return len(self.energies)

    def records(self):
        for k, (b, e) in enumerate(zip(self.bits, self.energies)):
            yield {"read_index": k, "bits": "".join("1" if v else "0" for v in b),
                   "energy": float(e)}

    def save_jsonl(self, path) -> None:
        with Path(path).open("w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load_jsonl(cls, path, config: Optional[AnnealConfig] = None) -> "SampleSet":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines()
                if line.strip() and not line.startswith("#")]
        rows.sort(key=lambda r: r["read_index"])
        bits = np.array([[c == "1" for c in r["bits"]] for r in rows], dtype=np.uint8)
        en = np.array([r["energy"] for r in rows])
        return cls(bits, en, config or AnnealConfig(num_reads=max(len(rows), 1)))


def beta_schedule(config: AnnealConfig) -> np.ndarray:
    if config.sweeps == 1:
        return np.array([config.beta_end])
    return np.geomspace(config.beta_start, config.beta_end, config.sweeps)


def default_schedule(model: QuboModel, num_reads: int = 100, seed: int = 0,
                     sweeps: int = 1000) -> AnnealConfig:
    """Inverse-temperature range from coefficient magnitudes.

    The hottest sweep accepts the largest possible uphill flip with
    probability 1/2; the coldest accepts the smallest nonzero one with
    probability 1/100.
    """
    n = model.num_vars
    absq = np.abs(model.qv)
    reach = np.abs(model.linear) + np.bincount(model.qi, absq, minlength=n) \
        + np.bincount(model.qj, absq, minlength=n)
    coefs = np.concatenate([np.abs(model.linear), absq])
    coefs = coefs[coefs > 0]
    if len(coefs) == 0:
        return AnnealConfig(num_reads, sweeps, 1.0, 1.0, seed)
    de_max = float(reach.max())
    de_min = float(coefs.min())
    beta_start = math.log(2) / de_max
    beta_end = max(math.log(100) / de_min, beta_start)
    return AnnealConfig(num_reads, sweeps, beta_start, beta_end, seed)


@numba.njit(cache=True, inline="always")
def _next(state):
    # splitmix64
    state[0] = (state[0] + np.uint64(0x9E3779B97F4A7C15))
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _uniform(state):
    return (_next(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, inline="always")
def _below(state, n):
    return np.int64(((_next(state) >> np.uint64(32)) * np.uint64(n)) >> np.uint64(32))


@numba.njit(cache=True, inline="always")
def _delta(field, x, i):
    return field[i] if x[i] == 0 else -field[i]


@numba.njit(cache=True, inline="always")
def _flip(field, x, i, indptr, indices, data):
    step = 1.0 if x[i] == 0 else -1.0
    x[i] = 1 - x[i]
    for k in range(indptr[i], indptr[i + 1]):
        field[indices[k]] += step * data[k]


@numba.njit(cache=True)
def _init_field(h, indptr, indices, data, x):
    field = h.copy()
    for i in range(x.shape[0]):
        if x[i]:
            for k in range(indptr[i], indptr[i + 1]):
                field[indices[k]] += data[k]
    return field


@numba.njit(cache=True)
def _anneal_read(h, indptr, indices, data, betas, seed, track_best, out, accepted):
    n = h.shape[0]
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    x = np.empty(n, dtype=np.int8)
    for i in range(n):
        x[i] = np.int8(_next(state) >> np.uint64(63))
    field = _init_field(h, indptr, indices, data, x)
    order = np.arange(n)
    count = accepted.shape[0] > 0
    e_rel = 0.0
    best = 0.0
    if track_best:
        out[:] = x
    for s in range(betas.shape[0]):
        beta = betas[s]
        for i in range(n - 1, 0, -1):
            j = _below(state, i + 1)
            tmp = order[i]
            order[i] = order[j]
            order[j] = tmp
        for m in range(n):
            i = order[m]
            de = _delta(field, x, i)
            if de > 0.0:
                if _uniform(state) >= math.exp(-beta * de):
                    continue
            _flip(field, x, i, indptr, indices, data)
            if count:
                accepted[s] += 1
            if track_best:
                e_rel += de
                if e_rel < best:
                    best = e_rel
                    out[:] = x
    if not track_best:
        out[:] = x


@numba.njit(cache=True, parallel=True)
def _anneal_all(h, indptr, indices, data, betas, seeds, track_best, out, accepted):
    for r in numba.prange(seeds.shape[0]):
        _anneal_read(h, indptr, indices, data, betas, seeds[r], track_best, out[r], accepted[r])


@numba.njit(cache=True)
def _replay(h, indptr, indices, data, x0, flips):
    # incremental energy change of each flip in sequence, as the kernel sees it
    x = x0.copy()
    field = _init_field(h, indptr, indices, data, x)
    out = np.empty(flips.shape[0])
    for m in range(flips.shape[0]):
        i = flips[m]
        out[m] = _delta(field, x, i)
        _flip(field, x, i, indptr, indices, data)
    return out


def _run(model: QuboModel, config: AnnealConfig, record_acceptance: bool):
    if model.num_vars < 1:
        raise ValueError("cannot anneal an empty model")
    indptr, indices, data = model.adjacency()
    seeds = np.random.SeedSequence(config.seed).generate_state(config.num_reads, dtype=np.uint64)
    out = np.empty((config.num_reads, model.num_vars), dtype=np.int8)
    acc = np.zeros((config.num_reads, config.sweeps if record_acceptance else 0), dtype=np.int64)
    _anneal_all(model.linear.astype(float), indptr, indices, data,
                beta_schedule(config), seeds, config.track_best, out, acc)
    return out.astype(np.uint8), acc


def anneal(model: QuboModel, config: AnnealConfig) -> SampleSet:
    """Run ``config.num_reads`` independent annealing reads; return final states."""
    t0 = time.perf_counter()
    bits, _ = _run(model, config, False)
    energies = np.atleast_1d(energy(model, bits))
    return SampleSet(bits, energies, config, time.perf_counter() - t0)


def acceptance_rates(model: QuboModel, config: AnnealConfig) -> np.ndarray:
    """Fraction of proposals accepted in each sweep, shape ``(num_reads, sweeps)``."""
    _, acc = _run(model, config, True)
    return acc / model.num_vars


def replay_deltas(model: QuboModel, x0, flips) -> np.ndarray:
    """Energy change of each flip in ``flips`` using the sampler's incremental update."""
    indptr, indices, data = model.adjacency()
    return _replay(model.linear.astype(float), indptr, indices, data,
                   np.asarray(x0, dtype=np.int8).copy(), np.asarray(flips, dtype=np.int64))


def local_fields(model: QuboModel, bits) -> np.ndarray:
    """``h_i + sum_j Q_ij x_j``: flipping bit i changes the energy by ``(1 - 2 x_i) * field_i``."""
    indptr, indices, data = model.adjacency()
    x = np.asarray(bits, dtype=float)
    n = model.num_vars
    rows = np.repeat(np.arange(n), np.diff(indptr))
    return model.linear + np.bincount(rows, weights=data * x[indices], minlength=n)


def flip_delta(model: QuboModel, bits, i: int) -> float:
    x = np.asarray(bits)
    return float((1 - 2 * int(x[i])) * local_fields(model, x)[i])


@dataclass(frozen=True)
class FeasibleSummary:
    best: Optional[object]
    best_cost: Optional[float]
    costs: np.ndarray
    feasible: np.ndarray

    @property
    def feasible_fraction(self) -> float:
        return float(self.feasible.mean()) if len(self.feasible) else 0.0

    def save_histogram(self, path) -> None:
        with Path(path).open("w") as fh:
            fh.write("cost,feasible\n")
            for c, f in zip(self.costs, self.feasible):
                fh.write(f"{c:.6f},{int(f)}\n")


def best_feasible(sampleset: SampleSet, instance, scenarios=None, p_level=None,
                  layout=None) -> FeasibleSummary:
    """Decode every read; keep the cheapest one that passes every constraint group."""
    from .encoding import build_layout, decode_solution

    lay = layout or build_layout(instance, scenarios, p_level)
    costs = np.empty(len(sampleset))
    feas = np.zeros(len(sampleset), dtype=bool)
    best, best_cost = None, None
    cache: dict = {}
    for k, b in enumerate(sampleset.bits):
        key = b.tobytes()
        hit = cache.get(key)
        if hit is None:
            sol = decode_solution(instance, b, layout=lay)
            ok = check_feasible(instance, sol, scenarios, p_level).joint
            hit = cache[key] = (sol, ok)
        sol, ok = hit
        costs[k], feas[k] = sol.objective, ok
        if ok and (best_cost is None or sol.objective < best_cost):
            best, best_cost = sol, sol.objective
    return FeasibleSummary(best, best_cost, costs, feas)


def with_seed(config: AnnealConfig, seed: int) -> AnnealConfig:
    return replace(config, seed=seed)


def config_dict(config: AnnealConfig) -> dict:
    return asdict(config)
