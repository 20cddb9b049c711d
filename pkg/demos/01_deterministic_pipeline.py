"""Deterministic pipeline: exact optimum, QUBO compilation, annealing and decoding.

Run:  python demos/01_deterministic_pipeline.py
"""
import numpy as np

from ccucp.annealer import anneal, best_feasible, default_schedule
from ccucp.encoding import encode_solution
from ccucp.instance import builtin_deterministic_instance
from ccucp.model import objective
from ccucp.qubo import TABLE3_WEIGHTS, compile_qubo, energy, penalty_breakdown
from ccucp.reference import solve_deterministic

inst = builtin_deterministic_instance()

# The exact solver enumerates commitment patterns and solves one dispatch LP per pattern.
opt = solve_deterministic(inst)
print("exact optimum:", round(objective(inst, opt), 4))
print("commitment u:\n", opt.u)
print("dispatch p:\n", opt.p)

# The encoded optimum has zero penalty, so its QUBO energy equals its cost.
model = compile_qubo(inst, TABLE3_WEIGHTS)
x = encode_solution(inst, opt)
print(f"\nQUBO: {model.num_vars} variables, {model.num_couplings} couplings")
print("energy of encoded optimum:", round(float(energy(model, x)), 4))
print("penalties at optimum:", {k: round(v, 6) for k, v in penalty_breakdown(model, x).items()})

# A short annealing run; reads are decoded and checked against the original constraints.
ss = anneal(model, default_schedule(model, num_reads=200, seed=0, sweeps=1000))
summary = best_feasible(ss, inst)
print(f"\n200 reads: lowest energy {ss.energies.min():.3g}, "
      f"decoded-feasible fraction {summary.feasible_fraction:.3f}")
print("best feasible cost:", summary.best_cost)
worst = penalty_breakdown(model, ss.bits[int(np.argmin(ss.energies))])
print("penalties of the lowest-energy read:", {k: f"{v:.3g}" for k, v in worst.items()})
