"""Regenerate tests/fixtures/references.json with the Ipopt reference solver.

Needs the optional ``casadi`` dependency (``pip install -e .[reference]``).
The values are frozen in the fixture; the test suite never calls Ipopt.

    python scripts/make_references.py            # all entries
    python scripts/make_references.py --skip-pegase
"""
import argparse
import json
from pathlib import Path

import numpy as np

from gridadmm.netdata import load_case, load_case_text
from gridadmm.reference import solve_reference
from gridadmm.tracking import ramp_window, sinusoidal_profile

FIXTURE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "references.json"
TWO_BUS_FILE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "two_bus.m"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--skip-pegase", action="store_true")
    args = ap.parse_args()
    cases = ["case9", "case30", "case118"] + ([] if args.skip_pegase else ["case1354pegase"])
    out = {"solver": "ipopt via casadi, tol 1e-8, untightened line ratings", "objectives": {}}
    for name in cases:
        f, _, info = solve_reference(load_case(name))
        print(name, f, info["return_status"])
        out["objectives"][name] = f

    f, sol, info = solve_reference(load_case("case9"))
    out["case9_solution"] = {"pg": sol.pg.tolist(), "qg": sol.qg.tolist(),
                             "vm": sol.vm.tolist(), "va": sol.va.tolist()}

    two = load_case_text(TWO_BUS_FILE.read_text(), "two_bus")
    f, sol, info = solve_reference(two)
    print("two_bus", f, info["return_status"])
    out["two_bus"] = {"objective": f, "pg": sol.pg.tolist(), "qg": sol.qg.tolist(),
                      "vm": sol.vm.tolist(), "va": sol.va.tolist()}

    # case30 tracking: each period ramps around the reference's own previous dispatch
    net0 = load_case("case30")
    prev = None
    periods = []
    for t, mult in enumerate(sinusoidal_profile(10)):
        net = net0.scale_loads(mult)
        if prev is not None:
            lo, hi = ramp_window(net0, prev, 0.02, t + 1)
            net = net.replace(pmin=lo, pmax=hi)
        f, sol, info = solve_reference(net)
        print("case30 period", t + 1, f, info["return_status"])
        periods.append({"period": t + 1, "multiplier": float(mult), "objective": f,
                        "status": info["return_status"]})
        prev = np.asarray(sol.pg)
    out["case30_tracking"] = {"ramp_frac": 0.02, "profile": "1 + 0.02 sin(2 pi t / 10)",
                              "periods": periods}
    if FIXTURE.exists() and args.skip_pegase:
        old = json.loads(FIXTURE.read_text())
        for k, v in old.get("objectives", {}).items():
            out["objectives"].setdefault(k, v)
    FIXTURE.write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
