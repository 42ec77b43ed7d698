"""Centralized ACOPF reference solve with Ipopt (through casadi).

Used only to produce reference objectives and solutions for comparison;
it shares the network model but none of the ADMM machinery.  Requires the
optional ``casadi`` dependency.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .driver import Solution
from .netdata import PowerNetwork, midpoint


def solve_reference(network: PowerNetwork, tol: float = 1e-8, max_iter: int = 3000,
                    print_level: int = 0) -> tuple[float, Solution, dict]:
    """Solve the full ACOPF in polar voltage form.

    Angle bounds are +-2pi, the reference angle is fixed at zero, and line
    limits use the untightened ratings.  Returns ``(objective, solution,
    info)``.
    """
    import casadi as ca

    n = network
    nb, ng, nl = n.n_bus, n.n_gen, n.n_branch
    vm = ca.MX.sym("vm", nb)
    va = ca.MX.sym("va", nb)
    pg = ca.MX.sym("pg", ng)
    qg = ca.MX.sym("qg", ng)
    x = ca.vertcat(vm, va, pg, qg)

    def select(idx, size):
        m = sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), size))
        return ca.DM(m)

    def dm(a):
        return ca.DM(np.asarray(a, dtype=float))

    Sf, St = select(n.br_from, nb), select(n.br_to, nb)
    vi, vj = ca.mtimes(Sf, vm), ca.mtimes(St, vm)
    dth = ca.mtimes(Sf, va) - ca.mtimes(St, va)
    wr = vi * vj * ca.cos(dth)
    wi = vi * vj * ca.sin(dth)
    pij = dm(n.gii) * vi**2 + dm(n.gij) * wr + dm(n.bij) * wi
    qij = -dm(n.bii) * vi**2 - dm(n.bij) * wr + dm(n.gij) * wi
    pji = dm(n.gjj) * vj**2 + dm(n.gji) * wr - dm(n.bji) * wi
    qji = -dm(n.bjj) * vj**2 - dm(n.bji) * wr - dm(n.gji) * wi

    Cg = ca.DM(sp.csr_matrix((np.ones(ng), (n.gen_bus, np.arange(ng))), shape=(nb, ng)))
    SfT, StT = Sf.T, St.T
    bal_p = (ca.mtimes(Cg, pg) - dm(n.pd) - dm(n.gs) * vm**2
             - ca.mtimes(SfT, pij) - ca.mtimes(StT, pji))
    bal_q = (ca.mtimes(Cg, qg) - dm(n.qd) + dm(n.bs) * vm**2
             - ca.mtimes(SfT, qij) - ca.mtimes(StT, qji))
    lim = np.flatnonzero(n.limited)
    cons = [bal_p, bal_q]
    lbg = [np.zeros(nb), np.zeros(nb)]
    ubg = [np.zeros(nb), np.zeros(nb)]
    if lim.size:
        L = select(lim, nl)
        r2 = n.rate[lim] ** 2
        cons += [ca.mtimes(L, pij**2 + qij**2), ca.mtimes(L, pji**2 + qji**2)]
        lbg += [np.full(lim.size, -np.inf)] * 2
        ubg += [r2, r2]
    obj = ca.sum1(dm(n.c2) * pg**2 + dm(n.c1) * pg + dm(n.c0))

    va_lo = np.full(nb, -2 * np.pi)
    va_hi = np.full(nb, 2 * np.pi)
    va_lo[n.ref_buses] = va_hi[n.ref_buses] = 0.0
    lbx = np.concatenate([n.vmin, va_lo, n.pmin, n.qmin])
    ubx = np.concatenate([n.vmax, va_hi, n.pmax, n.qmax])
    x0 = np.concatenate([midpoint(n.vmin, n.vmax), np.zeros(nb),
                         midpoint(n.pmin, n.pmax), midpoint(n.qmin, n.qmax)])
    opts = {"print_time": 0, "ipopt.print_level": print_level, "ipopt.tol": tol,
            "ipopt.max_iter": max_iter, "ipopt.sb": "yes"}
    solver = ca.nlpsol("acopf", "ipopt", {"x": x, "f": obj, "g": ca.vertcat(*cons)}, opts)
    res = solver(x0=x0, lbx=lbx, ubx=ubx, lbg=np.concatenate(lbg), ubg=np.concatenate(ubg))
    stats = solver.stats()
    xs = np.asarray(res["x"]).ravel()
    sol = Solution(pg=xs[2 * nb:2 * nb + ng], qg=xs[2 * nb + ng:],
                   vm=xs[:nb], va=xs[nb:2 * nb])
    info = {"success": bool(stats["success"]), "return_status": stats["return_status"],
            "iterations": int(stats["iter_count"])}
    return float(res["f"]), sol, info
