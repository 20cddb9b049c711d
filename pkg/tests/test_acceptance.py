"""Acceptance gate.  Each test appends one PASS/FAIL line to the terminal summary."""
import json
import time
from collections import Counter

import numpy as np
import pytest

from ccucp.annealer import anneal, best_feasible, default_schedule
from ccucp.cli import main
from ccucp.encoding import Layout, decode_slacks, decode_solution, encode_solution
from ccucp.instance import (FixedDemand, InitialState, UcpInstance, builtin_deterministic_instance,
                            builtin_stochastic_instance)
from ccucp.model import check_feasible, make_solution
from ccucp.qubo import TABLE3_WEIGHTS, PenaltyWeights, compile_qubo, penalty_breakdown
from ccucp.reference import (InfeasibleError, derive_switching, solve_stochastic_exact,
                             solve_stochastic_greedy)
from ccucp.sampler import sample
from ccucp.tuner import TunerConfig, feasibility_ratios, tune

from _util import brute_force_stochastic, random_instance
from conftest import ACCEPTANCE_LINES


def report(n: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_deterministic_optimum(tmp_path, capsys):
    out = tmp_path / "sol.json"
    t0 = time.perf_counter()
    rc = main(["solve", "--exact", "--out", str(out)])
    dt = time.perf_counter() - t0
    capsys.readouterr()
    cost = json.loads(out.read_text())["objective"]
    ok = rc == 0 and abs(cost - 191.8) <= 1e-6 and dt < 1.0
    report(1, ok, f"objective {cost:.6f} (target 191.8 +- 1e-6), {dt:.3f} s (< 1 s)")


def test_criterion_02_variable_counts():
    det, sto = builtin_deterministic_instance(), builtin_stochastic_instance()
    sc = sample(sto, 10, 0)
    t0 = time.perf_counter()
    n_det = compile_qubo(det, TABLE3_WEIGHTS).num_vars
    t1 = time.perf_counter()
    n_sto = compile_qubo(sto, TABLE3_WEIGHTS, sc, 0.9).num_vars
    t2 = time.perf_counter()
    ok = n_det == 291 and n_sto == 809 and t1 - t0 < 1 and t2 - t1 < 1
    report(2, ok, f"{n_det} / {n_sto} variables (291 / 809), "
                  f"{t1 - t0:.3f} s / {t2 - t1:.3f} s (< 1 s each)")


def test_criterion_03_coupling_counts(tmp_path, capsys):
    found = {}
    for name, extra in (("deterministic", []),
                        ("stochastic", ["--builtin", "stochastic", "--n", "10",
                                        "--p-level", "0.9"])):
        stats = tmp_path / f"{name}.json"
        rc = main(["compile", "--table3-weights", "--stats", str(stats),
                   "--out", str(tmp_path / f"{name}.qubo")] + extra)
        assert rc == 0
        found[name] = json.loads(stats.read_text())
    capsys.readouterr()
    ok = all(abs(d["coupling_deviation_pct"]) <= 10 and "counting_convention" in d
             for d in found.values())
    detail = ", ".join(f"{d['num_couplings']} vs {d['reference_couplings']} "
                       f"({d['coupling_deviation_pct']:+.2f}%)" for d in found.values())
    report(3, ok, detail + " (within +-10%, deviation recorded in stats)")


@pytest.mark.slow
def test_criterion_04_annealing_quality():
    det = builtin_deterministic_instance()
    cfg = dict(amplitude=0.5, kappa=14.0, r0=0.3, max_iters=50, reads_per_iter=100, sweeps=300)
    results = []
    failures = 0
    for seed in range(10):
        t0 = time.perf_counter()
        weights, _ = tune(det, PenaltyWeights(), TunerConfig(seed=seed, **cfg))
        model = compile_qubo(det, weights)
        ss = anneal(model, default_schedule(model, 10_000, seed, cfg["sweeps"]))
        summary = best_feasible(ss, det)
        _, joint = feasibility_ratios(ss, model)
        dt = time.perf_counter() - t0
        good = (summary.best_cost is not None and summary.best_cost <= 230.0
                and joint >= 0.01 and dt <= 600)
        results.append((seed, summary.best_cost, joint, summary.feasible_fraction, dt, good))
        failures += not good
        if failures > 2:
            break  # 8 of 10 is out of reach
    wins = sum(r[-1] for r in results)
    ok = wins >= 8
    worst = max(r[4] for r in results)
    cells = "; ".join(
        f"seed {s}: best {'none' if c is None else f'{c:.2f}'}, R_J {j:.4f}, "
        f"decoded-feasible {f:.4f}" for s, c, j, f, _, _ in results)
    report(4, ok, f"{wins}/{len(results)} seeds meet cost <= 230 and R_J >= 1% "
                  f"(need 8/10; stopped after {len(results)}); max {worst:.0f} s/seed; {cells}")


def test_criterion_05_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240605)
    mismatches, feasible = [], 0
    for k in range(25):
        inst = random_instance(rng, G=int(rng.integers(1, 4)), T=int(rng.integers(1, 4)))
        n = int(rng.integers(1, 9))
        p = float(rng.choice([0.6, 0.75, 0.9]))
        sc = sample(inst, n, k)
        oracle = brute_force_stochastic(inst, sc.demands, p)
        try:
            got = solve_stochastic_exact(inst, sc, p).objective
        except InfeasibleError:
            got = None
        feasible += got is not None
        same = (got is None and oracle is None) or (
            got is not None and oracle is not None and abs(got - oracle) <= 1e-6)
        if not same:
            mismatches.append((k, got, oracle))
    dt = time.perf_counter() - t0
    ok = not mismatches and dt <= 300
    report(5, ok, f"{25 - len(mismatches)}/25 agree with brute force at 1e-6 "
                  f"({feasible} feasible), {dt:.1f} s (<= 300 s)")


def test_criterion_06_monotone_in_p():
    sto = builtin_stochastic_instance("moderate")
    sc = sample(sto, 10, 3)
    grid = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    costs = [solve_stochastic_exact(sto, sc, p).objective for p in grid]
    violations = int(np.sum(np.diff(costs) < -1e-9))
    report(6, violations == 0,
           f"costs {[round(c, 2) for c in costs]} over p={list(grid)}, {violations} violations")


def test_criterion_07_correlation_trend():
    costs = {}
    for regime in ("none", "strong"):
        inst = builtin_stochastic_instance(regime)
        costs[regime] = np.array([solve_stochastic_greedy(inst, sample(inst, 1000, s), 0.9)
                                  .objective for s in range(5)])
    bad = int(np.sum(costs["strong"] > costs["none"]))
    ok = costs["strong"].mean() <= costs["none"].mean() and bad <= 1
    report(7, ok, f"mean strong {costs['strong'].mean():.2f} <= none "
                  f"{costs['none'].mean():.2f}; {bad} violating seed(s) (<= 1 allowed)")


def _two_by_two():
    g = builtin_deterministic_instance().generators
    return UcpInstance(g[:2], 2, InitialState((0, 1), (0.0, 120.0)), FixedDemand((160.0, 300.0)))


def _slacks_consistent(inst, lay, x, sol) -> bool:
    sl = decode_slacks(lay, x)
    p = sol.p.astype(np.int64)
    p_prev = np.hstack([np.array(inst.initial.p0, dtype=np.int64)[:, None], p[:, :-1]])
    r_down = inst.column("r_down").astype(np.int64)[:, None]
    p_max = inst.column("p_max").astype(np.int64)[:, None]
    D = np.array(inst.demand.d, dtype=np.int64)
    return bool(np.array_equal(sl["demand"], p.sum(axis=0) - D)
                and np.array_equal(sl["ramp"], p - p_prev + r_down)
                and np.array_equal(sl["capacity"], p_max - p))


def test_criterion_08_penalty_feasibility_equivalence():
    inst = _two_by_two()
    lay = Layout(inst)
    model = compile_qubo(inst, TABLE3_WEIGHTS)
    rng = np.random.default_rng(8)
    pmin, pmax = inst.column("p_min"), inst.column("p_max")

    def structured(k):
        u = rng.integers(0, 2, (2, 2))
        zon, zoff = derive_switching(u, inst.initial)
        p = np.where(u == 1, rng.integers(pmin[:, None], pmax[:, None] + 1, (2, 2)), 0)
        x = encode_solution(inst, make_solution(inst, u, zon, zoff, p))
        if k % 3 == 1:
            x[rng.integers(len(x))] ^= 1
        elif k % 3 == 2:
            g, t = rng.integers(2), rng.integers(2)
            idx = (lay.ramp_slack(g, t), lay.cap_slack(g, t), lay.demand_slack(t))[k % 9 // 3]
            x[idx] = rng.integers(0, 2, len(idx))
        return x

    def classify(x):
        zero = all(v == 0 for v in penalty_breakdown(model, x).values())
        sol = decode_solution(inst, x, layout=lay)
        feasible = check_feasible(inst, sol).joint
        return zero, feasible, feasible and _slacks_consistent(inst, lay, x, sol)

    uniform = Counter()
    for _ in range(10_000):
        zero, feasible, _ = classify(rng.integers(0, 2, lay.num_vars).astype(np.uint8))
        uniform[(zero, feasible)] += 1
    literal = sum(v for (z, f), v in uniform.items() if z != f)
    mixed = Counter()
    for k in range(10_000):
        mixed[classify(structured(k))] += 1
    disagree = sum(v for (z, f, fs), v in mixed.items() if z != fs)
    unsafe = sum(v for (z, f, fs), v in mixed.items() if z and not f)
    zero_ok = sum(v for (z, f, fs), v in mixed.items() if z)
    ok = literal == 0 and disagree == 0 and unsafe == 0
    report(8, ok, f"uniform 1e4: {literal} disagreements; structured 1e4: {disagree} "
                  f"disagreements ({zero_ok} zero-penalty, {unsafe} zero-penalty but infeasible)")


def test_criterion_09_tuner_invariants(tmp_path):
    det = builtin_deterministic_instance()
    w0 = PenaltyWeights()
    cfg = TunerConfig(amplitude=0.5, kappa=14.0, r0=0.3, max_iters=50, reads_per_iter=100,
                      sweeps=100, seed=0)
    _, trace = tune(det, w0, cfg)
    path = tmp_path / "trace.csv"
    trace.save_csv(path)
    rows = path.read_text().splitlines()[1:]
    groups = list(trace.records[0].ratios)
    traj = np.array([[r.weights.group(g) for g in groups] for r in trace.records])
    base = np.array([w0.group(g) for g in groups])
    monotone = bool(np.all(np.diff(traj, axis=0) >= 0))
    bounded = bool(np.all(traj <= base * 1.5 ** 50))
    ok = monotone and bounded and len(rows) == len(trace) == 50
    report(9, ok, f"{len(trace)} iterations, {len(rows)} CSV rows, non-decreasing={monotone}, "
                  f"bounded by 1.5^50={bounded}")


def test_criterion_10_sampler_statistics():
    inst = builtin_stochastic_instance("moderate")
    d = sample(inst, 100_000, 10).demands
    mu = np.array(inst.demand.mu)
    Sigma = inst.demand.covariance
    mean_err = np.max(np.abs(d.mean(axis=0) - mu) / mu)
    cov_err = np.linalg.norm(np.cov(d, rowvar=False) - Sigma) / np.linalg.norm(Sigma)
    ok = mean_err <= 0.01 and cov_err <= 0.05
    report(10, ok, f"max relative mean error {mean_err:.5f} (<= 0.01), "
                   f"relative Frobenius covariance error {cov_err:.4f} (<= 0.05)")
