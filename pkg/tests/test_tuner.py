import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccucp.annealer import AnnealConfig, SampleSet
from ccucp.encoding import encode_solution
from ccucp.instance import (FixedDemand, GeneratorParams, InitialState, UcpInstance,
                            builtin_deterministic_instance)
from ccucp.qubo import TABLE3_WEIGHTS, PenaltyWeights, compile_qubo, energy
from ccucp.tuner import (DETERMINISTIC_GROUPS, TunerConfig, feasibility_ratios, load_weights,
                         save_weights, sigmoid_step, stop_threshold, tune)


def test_stop_threshold():
    assert stop_threshold(6, 100) == pytest.approx(0.843333, abs=1e-6)
    assert stop_threshold(7, 100) == pytest.approx(6 / 7 + 0.01)
    assert stop_threshold(6, 1) > 1
    with pytest.raises(ValueError):
        stop_threshold(0, 10)


@pytest.mark.parametrize("r, expected", [(0.3, 0.25), (1.0, 2.77e-5), (0.0, 0.4926)])
def test_sigmoid_values(r, expected):
    assert sigmoid_step(0.5, 14, 0.3, r) == pytest.approx(expected, rel=2e-3)


@given(st.floats(0, 1), st.floats(0, 1))
def test_sigmoid_is_monotone_and_bounded(r1, r2):
    lo, hi = sorted((r1, r2))
    a, b = sigmoid_step(0.5, 14, 0.3, lo), sigmoid_step(0.5, 14, 0.3, hi)
    assert 0 < b <= a < 0.5


def test_sigmoid_extreme_arguments():
    assert 0.0 <= sigmoid_step(0.5, 1e4, 0.3, 1.0) < 1e-300
    assert sigmoid_step(0.5, 1e4, 0.3, 0.0) == pytest.approx(0.5)


@pytest.mark.parametrize("kw", [dict(amplitude=0), dict(kappa=-1), dict(r0=0), dict(r0=1),
                                dict(max_iters=0), dict(reads_per_iter=0), dict(sweeps=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TunerConfig(**kw)


def _ss(model, bits):
    bits = np.atleast_2d(bits)
    return SampleSet(bits, energy(model, bits), AnnealConfig(num_reads=len(bits), sweeps=1))


def test_ratios_at_the_optimum(det, det_opt):
    m = compile_qubo(det, TABLE3_WEIGHTS)
    x = encode_solution(det, det_opt)
    ratios, joint = feasibility_ratios(_ss(m, [x, x]), m, DETERMINISTIC_GROUPS)
    assert all(r == 1.0 for r in ratios.values()) and joint == 1.0


def test_ratios_for_mixed_reads(det, det_opt):
    m = compile_qubo(det, TABLE3_WEIGHTS)
    x = encode_solution(det, det_opt)
    z = np.zeros_like(x)
    ratios, joint = feasibility_ratios(_ss(m, [x, z, z, x]), m, DETERMINISTIC_GROUPS)
    assert ratios["demand"] == 0.5
    assert ratios["logic2"] == 1.0 and ratios["coupling"] == 1.0
    assert joint == 0.5
    assert joint <= min(ratios.values())


@given(st.integers(0, 2**32 - 1))
def test_joint_never_exceeds_any_group(seed):
    m = compile_qubo(builtin_deterministic_instance(), PenaltyWeights())
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, (5, m.num_vars)).astype(np.uint8)
    ratios, joint = feasibility_ratios(_ss(m, bits), m)
    assert 0 <= joint <= min(ratios.values()) <= 1


def trivial_instance():
    gen = GeneratorParams(p_min=0, p_max=0, r_up=0, r_down=0, c_startup=1.0,
                          c_shutdown=1.0, c_fixed=1.0, b=0.1)
    return UcpInstance((gen,), 1, InitialState((0,), (0.0,)), FixedDemand((0.0,)))


def test_trivial_instance_stops_at_first_iteration():
    w, trace = tune(trivial_instance(), PenaltyWeights(),
                    TunerConfig(max_iters=10, reads_per_iter=20, sweeps=50))
    assert len(trace) == 1
    assert trace.stop_reason == "threshold reached"
    assert w == PenaltyWeights()


def test_single_iteration_raises_weights_by_bounded_factor(det):
    cfg = TunerConfig(max_iters=1, reads_per_iter=10, sweeps=30)
    w0 = TABLE3_WEIGHTS
    w1, trace = tune(det, w0, cfg)
    assert len(trace) == 1 and trace.stop_reason == "max iterations"
    for g in DETERMINISTIC_GROUPS:
        f = w1.group(g) / w0.group(g)
        assert 1.0 < f < 1.5
    assert w1.lambda_reliability == w0.lambda_reliability


def test_weights_never_decrease(det):
    cfg = TunerConfig(max_iters=4, reads_per_iter=10, sweeps=30, seed=3)
    _, trace = tune(det, PenaltyWeights(), cfg)
    for a, b in zip(trace.records, trace.records[1:]):
        for g in DETERMINISTIC_GROUPS:
            step = sigmoid_step(0.5, 14, 0.3, a.ratios[g])
            assert b.weights.group(g) == pytest.approx(a.weights.group(g) * (1 + step))
            assert b.weights.group(g) >= a.weights.group(g)


def test_unattainable_threshold_is_reported(det):
    w, trace = tune(det, PenaltyWeights(), TunerConfig(max_iters=2, reads_per_iter=1, sweeps=5))
    assert trace.threshold > 1
    assert trace.stop_reason == "threshold unattainable"


def test_tuning_is_reproducible(det):
    cfg = TunerConfig(max_iters=3, reads_per_iter=8, sweeps=20, seed=9)
    a = tune(det, TABLE3_WEIGHTS, cfg)
    b = tune(det, TABLE3_WEIGHTS, cfg)
    assert a[0] == b[0]
    assert [r.ratios for r in a[1].records] == [r.ratios for r in b[1].records]


def test_trace_csv(tmp_path, det):
    _, trace = tune(det, PenaltyWeights(), TunerConfig(max_iters=2, reads_per_iter=5, sweeps=10))
    path = tmp_path / "trace.csv"
    trace.save_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0][0] == "iteration" and rows[0][-1] == "R_J"
    assert "lambda_coupling" in rows[0] and "R_demand" in rows[0]
    assert [r[0] for r in rows[1:]] == ["1", "2"]


def test_weights_file_round_trip(tmp_path):
    path = tmp_path / "w.json"
    save_weights(TABLE3_WEIGHTS, path)
    assert load_weights(path) == TABLE3_WEIGHTS
