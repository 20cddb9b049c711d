"""Sensitivity of annealing to the unit-coupling penalty weight.

The coupling group ties dispatch bits to the commitment bit.  When its weight is
small relative to the quadratic groups, annealing freezes commitment early and
leaves dispatch on units that are off.  Raising it trades feasibility against the
energy scale that the annealing schedule sees.

Run:  python demos/03_coupling_weight.py
"""
from dataclasses import replace

from ccucp.annealer import anneal, best_feasible, default_schedule
from ccucp.instance import builtin_deterministic_instance
from ccucp.qubo import TABLE3_WEIGHTS, compile_qubo
from ccucp.tuner import feasibility_ratios

inst = builtin_deterministic_instance()
print("lambda_coupling  R_coupling  R_J     decoded-feasible  best cost")
for scale in (1, 10, 100, 1000, 10000):
    w = replace(TABLE3_WEIGHTS, lambda_coupling=TABLE3_WEIGHTS.lambda_coupling * scale)
    model = compile_qubo(inst, w)
    ss = anneal(model, default_schedule(model, num_reads=300, seed=1, sweeps=1000))
    ratios, joint = feasibility_ratios(ss, model)
    s = best_feasible(ss, inst)
    best = "none" if s.best_cost is None else f"{s.best_cost:.2f}"
    print(f"{w.lambda_coupling:<16.4g} {ratios['coupling']:<11.3f} {joint:<7.3f} "
          f"{s.feasible_fraction:<17.3f} {best}")
