"""Adaptive penalty-factor tuning driven by per-group feasibility ratios.

Each iteration compiles the QUBO with the current weights, anneals a batch of
reads, and measures the fraction of reads that satisfy each constraint group.
Every weight is then scaled by ``1 + A / (1 + exp(kappa * (R - R0)))``.  The
loop stops once every ratio reaches ``(c - 1) / c + 1 / n_samples`` or after
``max_iters`` iterations.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .annealer import AnnealConfig, SampleSet, anneal, default_schedule
from .qubo import PenaltyWeights, QuboModel, compile_qubo, group_satisfied

__all__ = ["TunerConfig", "TunerTrace", "IterationRecord", "feasibility_ratios",
           "stop_threshold", "sigmoid_step", "tune", "groups_for"]

log = logging.getLogger(__name__)

DETERMINISTIC_GROUPS = ("logic1", "logic2", "demand", "coupling", "capacity", "ramp")


def groups_for(stochastic: bool) -> tuple[str, ...]:
    return DETERMINISTIC_GROUPS + (("reliability",) if stochastic else ())


@dataclass(frozen=True)
class TunerConfig:
    amplitude: float = 0.5
    kappa: float = 14.0
    r0: float = 0.3
    max_iters: int = 50
    reads_per_iter: int = 100
    sweeps: int = 1000
    seed: int = 0
    # None: derive the beta range from each iteration's model
    beta_range: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.r0 < 1:
            raise ValueError("r0 must lie in (0, 1)")
        if self.max_iters < 1 or self.reads_per_iter < 1 or self.sweeps < 1:
            raise ValueError("max_iters, reads_per_iter and sweeps must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    weights: PenaltyWeights
    ratios: dict
    joint: float


@dataclass
class TunerTrace:
    records: list = field(default_factory=list)
    stop_reason: str = ""
    threshold: float = math.nan

    def __len__(self):
        return len(self.records)

    def save_csv(self, path) -> None:
        if not self.records:
            Path(path).write_text("iteration\n")
            return
        groups = list(self.records[0].ratios)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration"] + [f"lambda_{g}" for g in groups]
                       + [f"R_{g}" for g in groups] + ["R_J"])
            for rec in self.records:
                w.writerow([rec.iteration] + [repr(rec.weights.group(g)) for g in groups]
                           + [repr(rec.ratios[g]) for g in groups] + [repr(rec.joint)])


def feasibility_ratios(sampleset: SampleSet, model: QuboModel,
                       groups: Optional[tuple[str, ...]] = None) -> tuple[dict, float]:
    """Fraction of reads with zero violation in each group, and in all of them."""
    if len(sampleset) == 0:
        raise ValueError("empty sample set")
    sat = group_satisfied(model, sampleset.bits)
    groups = groups or tuple(sat)
    ratios = {g: float(np.mean(sat[g])) for g in groups}
    joint = float(np.mean(np.all([sat[g] for g in groups], axis=0)))
    return ratios, joint


def stop_threshold(c: int, n_samples: int) -> float:
    if c < 1 or n_samples < 1:
        raise ValueError("need c >= 1 and n_samples >= 1")
    return (c - 1) / c + 1 / n_samples


def sigmoid_step(A: float, kappa: float, r0: float, r: float) -> float:
    """Relative weight increase; falls from ~A at low ratios towards 0 at high ones."""
    z = kappa * (r - r0)
    if z > 700:
        return A * math.exp(-z)
    return A / (1.0 + math.exp(z))


def _iteration_seed(master: int, k: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(k,)).generate_state(1, np.uint64)[0])


def tune(instance, initial_weights: Optional[PenaltyWeights] = None,
         config: TunerConfig = TunerConfig(), scenarios=None,
         p_level: Optional[float] = None) -> tuple[PenaltyWeights, TunerTrace]:
    weights = initial_weights or PenaltyWeights()
    groups = groups_for(scenarios is not None)
    K = stop_threshold(len(groups), config.reads_per_iter)
    trace = TunerTrace(threshold=K)
    if K > 1:
        log.warning("stopping threshold %.4f exceeds 1 and can never be met", K)
    for k in range(config.max_iters):
        model = compile_qubo(instance, weights, scenarios, p_level)
        seed = _iteration_seed(config.seed, k)
        if config.beta_range is None:
            acfg = default_schedule(model, config.reads_per_iter, seed, config.sweeps)
        else:
            acfg = AnnealConfig(config.reads_per_iter, config.sweeps,
                                config.beta_range[0], config.beta_range[1], seed)
        ss = anneal(model, acfg)
        ratios, joint = feasibility_ratios(ss, model, groups)
        trace.records.append(IterationRecord(k + 1, weights, ratios, joint))
        log.info("iteration %d: R_J=%.3f %s", k + 1, joint,
                 " ".join(f"{g}={r:.2f}" for g, r in ratios.items()))
        if all(r >= K for r in ratios.values()):
            trace.stop_reason = "threshold reached"
            return weights, trace
        weights = weights.updated(**{
            g: weights.group(g) * (1.0 + sigmoid_step(config.amplitude, config.kappa,
                                                      config.r0, ratios[g]))
            for g in groups
        })
    trace.stop_reason = "threshold unattainable" if K > 1 else "max iterations"
    return weights, trace


def save_weights(weights: PenaltyWeights, path) -> None:
    Path(path).write_text(json.dumps(weights.as_dict(), indent=2) + "\n")


def load_weights(path) -> PenaltyWeights:
    doc = json.loads(Path(path).read_text())
    doc.pop("manifest", None)  # provenance stamp written by the CLI
    return PenaltyWeights.from_dict(doc)
