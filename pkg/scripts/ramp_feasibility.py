"""Smallest ramp fraction that keeps the first case30 tracking step feasible.

Solves period 1 of the sinusoidal profile with Ipopt, then re-solves period 2
inside ramp windows of growing width and prints the solver status.  Needs
``casadi``.
"""
import numpy as np

from gridadmm.netdata import load_case
from gridadmm.reference import solve_reference
from gridadmm.tracking import ramp_window, sinusoidal_profile

net0 = load_case("case30")
mult = sinusoidal_profile(10)
_, first, _ = solve_reference(net0.scale_loads(mult[0]))
for frac in (0.02, 0.025, 0.03, 0.035, 0.04, 0.05, 0.1):
    lo, hi = ramp_window(net0, first.pg, frac)
    f, sol, info = solve_reference(net0.scale_loads(mult[1]).replace(pmin=lo, pmax=hi))
    moved = np.round((sol.pg - first.pg) / net0.pmax, 4)
    print(f"ramp {frac:.3f}: {info['return_status']:<28} move/pmax {moved}")
