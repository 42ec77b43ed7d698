"""Solve case9 with the two-level ADMM and look inside the run.

Prints the outer-loop progress, where the time went, and how the answer
compares with the interior-point objective stored in the test fixtures.

    python demos/solve_case9.py
"""
import json
from pathlib import Path

import numpy as np

from gridadmm import SolverConfig, load_case, solve

net = load_case("case9")
cfg = SolverConfig.preset("case9")
print(f"case9: {net.n_bus} buses, {net.n_branch} branches, {net.n_gen} generators")
print(f"penalties rho_pq={cfg.rho_pq:g} rho_va={cfg.rho_va:g}, beta0={cfg.beta0:g}")


def show(outer, state):
    print(f"  outer {outer:2d}: {state.inner_iter:5d} inner so far, "
          f"||z|| = {np.max(np.abs(state.z)):.2e}, beta = {state.beta:.0e}")


rep = solve(net, cfg, callback=show)
print(f"\nstatus {rep.status} after {rep.outer_iterations} outer / "
      f"{rep.inner_iterations} inner iterations")

total = sum(rep.phase_times.values())
for phase, secs in rep.phase_times.items():
    print(f"  {phase:<10s} {secs:7.3f} s  ({100 * secs / total:4.1f}%)")

refs = json.loads((Path(__file__).parents[1] / "tests/fixtures/references.json").read_text())
f_ref = refs["objectives"]["case9"]
print(f"\nobjective {rep.objective:.4f} vs interior point {f_ref:.4f} "
      f"(gap {100 * abs(rep.objective - f_ref) / f_ref:.3f}%)")
print(f"worst constraint violation {rep.metrics['c_inf']:.2e} p.u.")
print("dispatch (MW):", np.round(100 * rep.solution.pg, 2))

# a converged state is a fixed point: restarting from it costs one sweep
again = solve(net, cfg, init=rep.state)
print(f"warm restart: {again.outer_iterations} outer / {again.inner_iterations} inner")
