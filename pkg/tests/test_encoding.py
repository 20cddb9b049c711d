import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccucp.encoding import (Layout, binary_feasibility, bits_for_range, bits_from_string,
                            bits_to_string, bitwidth_table, capped_weights, build_layout, decode_slacks,
                            decode_solution, encode_solution, gen_bits, reliability_bits,
                            total_binary_variables)
from ccucp.instance import GeneratorParams, UcpInstance
from ccucp.model import check_feasible, make_solution
from ccucp.sampler import ScenarioSet

from _util import random_instance


@pytest.mark.parametrize("s, n", [(0, 0), (1, 1), (2, 2), (3, 2), (4, 3), (255, 8), (256, 9),
                                  (300, 9), (1703, 11), (170300, 18)])
def test_bits_for_range_examples(s, n):
    assert bits_for_range(s) == n


def test_bits_for_range_exhaustive():
    s = np.arange(1, 1_000_001)
    expected = np.ceil(np.log2(s + 1)).astype(int)
    got = np.array([bits_for_range(int(v)) for v in s])
    assert np.array_equal(got, expected)
    with pytest.raises(ValueError):
        bits_for_range(-1)


def _with_ranges(det, pairs):
    gens = []
    for g, (lo, hi) in zip(det.generators, pairs):
        gens.append(GeneratorParams(lo, hi, g.r_up, g.r_down, g.c_startup, g.c_shutdown,
                                    g.c_fixed, g.b))
    return UcpInstance(tuple(gens), det.T, det.initial.__class__((0, 0, 0), (0, 0, 0)),
                       det.demand)


def test_gen_bits(det):
    assert gen_bits(det) == 9
    assert gen_bits(_with_ranges(det, [(10, 10), (0, 0), (5, 5)])) == 0
    assert gen_bits(_with_ranges(det, [(0, 255), (0, 10), (0, 1)])) == 8


def test_builtin_widths(det):
    w = bitwidth_table(det)
    assert (w.n_gen, w.n_demand, w.n_ramp, w.n_capacity) == (9, 11, (9, 8, 8), (9, 8, 8))
    assert w.n_reliability == 0
    ws = bitwidth_table(det, 10, 0.9)
    assert ws.n_demand == 18 and ws.n_reliability == 1 and ws.scale == 100
    assert bitwidth_table(det, 1000, 0.9).n_reliability == 7


@pytest.mark.parametrize("n, p, bits", [(10, 0.9, 1), (1000, 0.9, 7), (10, 1.0, 0),
                                        (10, 0.7, 2), (100, 0.99, 1), (3, 0.5, 2)])
def test_reliability_bits(n, p, bits):
    assert reliability_bits(n, p) == bits


def test_totals(det):
    assert total_binary_variables(det) == 291
    assert total_binary_variables(det, 10, 0.9) == 809
    assert Layout(det).num_vars == 291
    assert Layout(det, 10, 0.9).num_vars == 809
    with pytest.raises(ValueError):
        total_binary_variables(det, 0, 0.9)
    with pytest.raises(ValueError):
        bitwidth_table(det, 10, None)


def _count_from_scratch(inst, N=None, p=None):
    # independent recount straight from the parameter table
    G, T = inst.G, inst.T
    pmin = [g.p_min for g in inst.generators]
    n = max(math.ceil(math.log2(g.p_max - g.p_min + 1)) for g in inst.generators)
    scale = 1 if N is None else 100
    smax = scale * sum(lo + 2**n - 1 for lo in pmin)
    nd = math.ceil(math.log2(smax + 1))
    ramp = sum(math.ceil(math.log2(g.r_up + g.r_down + 1)) for g in inst.generators)
    cap = sum(math.ceil(math.log2(g.p_max + 1)) for g in inst.generators)
    total = 3 * G * T + G * T * n + T * ramp + T * cap
    if N is None:
        return total + T * nd
    rel = math.ceil(math.log2(math.ceil(round(N * (1 - p), 9)) + 1))
    return total + N + N * T * nd + rel


@pytest.mark.parametrize("seed", range(50))
def test_counts_match_independent_recount(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, stochastic=False)
    assert total_binary_variables(inst) == _count_from_scratch(inst)
    N, p = int(rng.integers(1, 50)), float(rng.choice([0.5, 0.8, 0.9, 0.95, 1.0]))
    assert total_binary_variables(inst, N, p) == _count_from_scratch(inst, N, p)
    assert Layout(inst, N, p).num_vars == _count_from_scratch(inst, N, p)


def test_layout_ranges_tile_the_vector(det):
    for lay in (Layout(det), Layout(det, 10, 0.9)):
        ranges = sorted(lay.manifest()["ranges"].values())
        assert ranges[0][0] == 0 and ranges[-1][1] == lay.num_vars
        for (a, b), (c, d) in zip(ranges, ranges[1:]):
            assert b == c and a <= b
        seen = np.zeros(lay.num_vars, dtype=int)
        for g in range(lay.G):
            for t in range(lay.T):
                for idx in ([lay.u(g, t)], [lay.zon(g, t)], [lay.zoff(g, t)], lay.pbits(g, t),
                            lay.ramp_slack(g, t), lay.cap_slack(g, t)):
                    seen[idx] += 1
        if lay.stochastic:
            for i in range(lay.n_scenarios):
                seen[lay.y(i)] += 1
                for t in range(lay.T):
                    seen[lay.demand_slack(t, i)] += 1
            seen[lay.rel_slack()] += 1
        else:
            for t in range(lay.T):
                seen[lay.demand_slack(t)] += 1
        assert np.all(seen == 1)


def test_manifest_file(tmp_path, det):
    lay = Layout(det)
    lay.save_manifest(tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["num_vars"] == 291 and doc["widths"]["ramp"] == [9, 8, 8]


def test_round_trip_deterministic_optimum(det, det_opt):
    x = encode_solution(det, det_opt)
    assert decode_solution(det, x) == det_opt
    assert all(binary_feasibility(det, x).values())
    sl = decode_slacks(Layout(det), x)
    assert sl["demand"].tolist() == [0, 0, 0]
    assert sl["capacity"].tolist() == [[190, 0, 0], [200, 100, 200], [140, 90, 90]]


def test_all_zero_bits(det):
    sol = decode_solution(det, np.zeros(291, dtype=np.uint8))
    assert sol.objective == 0.0 and np.all(sol.p == 0)
    ok = binary_feasibility(det, np.zeros(291))
    assert not ok["demand"] and not ok["logic1"] and ok["coupling"] and ok["logic2"]


def test_dispatch_bits_with_unit_off_are_flagged(det, det_opt):
    x = encode_solution(det, det_opt)
    lay = Layout(det)
    x[lay.pbits(1, 0)[0]] = 1  # unit 2 is off in period 1
    assert not binary_feasibility(det, x)["coupling"]
    # the decoded dispatch is still p_min*u + q
    assert decode_solution(det, x).p[1, 0] == 1.0


def test_unrepresentable_dispatch(det, det_opt):
    p = np.array(det_opt.p)
    p[0, 1] = 600.0  # q = 550 needs a tenth bit
    bad = make_solution(det, det_opt.u, det_opt.z_on, det_opt.z_off, p)
    with pytest.raises(ValueError, match="not representable"):
        encode_solution(det, bad)
    p = np.array(det_opt.p)
    p[0, 0] = 160.5
    with pytest.raises(ValueError, match="integer"):
        encode_solution(det, make_solution(det, det_opt.u, det_opt.z_on, det_opt.z_off, p))


def test_decode_length_mismatch(det):
    with pytest.raises(ValueError, match="expected 291"):
        decode_solution(det, np.zeros(290))


def _integer_stochastic_solution(sto):
    sc = ScenarioSet(np.array([[150.25, 480.5, 390.0], [160.0, 500.0, 400.0],
                               [170.0, 520.0, 380.0]]))
    u = [[1, 1, 1], [0, 1, 0], [0, 1, 1]]
    zon = [[1, 0, 0], [0, 1, 0], [0, 1, 0]]
    zoff = [[0, 0, 0], [0, 0, 1], [1, 0, 0]]
    p = [[160, 350, 350], [0, 100, 0], [0, 50, 50]]
    return sc, make_solution(sto, u, zon, zoff, p, [1, 1, 0])


def test_round_trip_stochastic(sto):
    sc, sol = _integer_stochastic_solution(sto)
    assert check_feasible(sto, sol, sc, 0.6).joint
    x = encode_solution(sto, sol, sc, 0.6)
    assert len(x) == build_layout(sto, sc, 0.6).num_vars
    assert decode_solution(sto, x, sc, 0.6) == sol
    assert all(binary_feasibility(sto, x, sc, 0.6).values())
    sl = decode_slacks(build_layout(sto, sc, 0.6), x)
    assert sl["demand"][0].tolist() == [975, 1950, 1000]   # cents of headroom
    assert sl["demand"][2].tolist() == [16000, 50000, 40000]  # y=0 keeps full supply
    assert sl["reliability"] == 0


def test_stochastic_requires_y(sto):
    sc, sol = _integer_stochastic_solution(sto)
    no_y = make_solution(sto, sol.u, sol.z_on, sol.z_off, sol.p)
    with pytest.raises(ValueError, match="indicators"):
        encode_solution(sto, no_y, sc, 0.6)
    with pytest.raises(ValueError):
        build_layout(sto)


@given(st.integers(0, 2**32 - 1))
def test_random_bits_decode_encode_decode(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, stochastic=False)
    lay = Layout(inst)
    x = rng.integers(0, 2, lay.num_vars)
    # zero the dispatch bits of off units and cap q so the decoded point is encodable
    sol = decode_solution(inst, x, layout=lay)
    rng_p = inst.column("p_max") - inst.column("p_min")
    p = np.minimum(sol.p, (inst.column("p_min") * sol.u.T).T + (rng_p * sol.u.T).T)
    clean = make_solution(inst, sol.u, sol.z_on, sol.z_off, p)
    assert decode_solution(inst, encode_solution(inst, clean), layout=lay) == clean


@given(st.integers(0, 2**32 - 1))
def test_feasible_solutions_are_binary_feasible(seed):
    from ccucp.reference import InfeasibleError, solve_envelope
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, stochastic=False)
    try:
        sol = solve_envelope(inst, inst.demand.d)
    except InfeasibleError:
        return
    if np.any(sol.p != np.round(sol.p)):
        return
    x = encode_solution(inst, sol)
    assert all(binary_feasibility(inst, x).values())
    assert decode_solution(inst, x) == sol


def test_bitstring_round_trip():
    x = np.array([1, 0, 0, 1, 1], dtype=np.uint8)
    assert bits_to_string(x) == "10011"
    assert np.array_equal(bits_from_string("10011\n"), x)
    with pytest.raises(ValueError):
        bits_from_string("10a1")


@given(st.integers(1, 3000))
def test_capped_weights_cover_exactly_the_bound(bound):
    w = capped_weights(bound.bit_length(), bound)
    subsets = np.array(list(itertools.product((0, 1), repeat=len(w))))
    assert set((subsets @ w).tolist()) == set(range(bound + 1))


def test_capped_weights_plain_and_invalid():
    assert capped_weights(4).tolist() == [1, 2, 4, 8]
    assert capped_weights(4, 15).tolist() == [1, 2, 4, 8]
    assert capped_weights(9, 500).tolist()[-1] == 245
    with pytest.raises(ValueError):
        capped_weights(4, 100)


def test_ramp_slack_cannot_exceed_ramp_limit(det):
    # unit 1 ramps 200 up / 300 down; with plain 9-bit weights a slack of 511
    # would admit a ramp-up of 211
    lay = Layout(det)
    assert int(lay.ramp_weights(0).sum()) == 500
    assert lay.manifest()["ramp_top_weight"] == [245, 123, 73]
