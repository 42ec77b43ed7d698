"""Independent brute-force oracles for the closed-form and TRON updates.

Nothing here calls the update being checked; each oracle rebuilds its
subproblem from first principles.
"""
from __future__ import annotations

import itertools
from decimal import Decimal, localcontext

import numpy as np
from numba import njit

from gridadmm.decomp import PG, PIJ, PJI, QG, QIJ, QJI, THI, THJ, WI, WJ
from gridadmm.kernels import N_PARAM, branch_evaluate


# ---------------------------------------------------------------------------
# generator: grid search at 1e-6 resolution


def generator_grid(c2, c1, y, rho, target, lo, hi, step=1e-6, coarse=1e-3):
    """Minimize ``c2 p^2 + c1 p + y (p - t) + rho/2 (p - t)^2`` on a grid.

    The grid is ``lo + k * step``.  A coarse pass (spacing ``coarse``) picks
    a bracket, a fine pass scans every grid point within two coarse steps;
    convexity makes the bracket safe.  Arrays broadcast over instances.
    """
    c2, c1, y, rho, target, lo, hi = np.broadcast_arrays(
        *map(np.asarray, (c2, c1, y, rho, target, lo, hi)))

    def f(p):
        r = p - target[:, None]
        return c2[:, None] * p**2 + c1[:, None] * p + y[:, None] * r + 0.5 * rho[:, None] * r**2

    n_coarse = int(np.ceil(np.max(hi - lo) / coarse)) + 1
    grid = lo[:, None] + coarse * np.arange(n_coarse)[None, :]
    grid = np.minimum(grid, hi[:, None])
    best = grid[np.arange(len(lo)), np.argmin(f(grid), axis=1)]
    k0 = np.floor((best - 2 * coarse - lo) / step)
    n_fine = int(round(4 * coarse / step)) + 1
    fine = lo[:, None] + (k0[:, None] + np.arange(n_fine)[None, :]) * step
    fine = np.clip(fine, lo[:, None], hi[:, None])
    return fine[np.arange(len(lo)), np.argmin(f(fine), axis=1)]


# ---------------------------------------------------------------------------
# bus: dense KKT solve per bus


def bus_kkt(state, network, layout, fix_reference_angle=True):
    """Per-bus equality-constrained QP solved through its full KKT matrix.

    Returns ``(xbar_dup, w, theta)`` in the layout of :class:`AdmmState`.
    """
    xbar_dup = np.zeros(layout.m)
    w = np.zeros(network.n_bus)
    theta = np.zeros(network.n_bus)
    ref = set(np.asarray(network.ref_buses).tolist())
    for i in range(network.n_bus):
        rows = np.flatnonzero(layout.bus == i)
        kinds = layout.kind[rows]
        dup = rows[np.isin(kinds, (PG, QG, PIJ, QIJ, PJI, QJI))]
        wr = rows[np.isin(kinds, (WI, WJ))]
        tr = rows[np.isin(kinds, (THI, THJ))]
        nd = len(dup)
        n = nd + 2  # duplicates, then w_i, theta_i
        Q = np.zeros((n, n))
        c = np.zeros(n)
        # y (x - v + z) + rho/2 (x - v + z)^2 = rho/2 v^2 - (y + rho (x + z)) v + const
        lin = state.y + state.rho * (state.x + state.z)
        for a, k in enumerate(dup):
            Q[a, a] = state.rho[k]
            c[a] = lin[k]
        Q[nd, nd] = state.rho[wr].sum()
        c[nd] = lin[wr].sum()
        Q[nd + 1, nd + 1] = state.rho[tr].sum()
        c[nd + 1] = lin[tr].sum()
        A = []
        b = []
        rp = np.zeros(n)
        rq = np.zeros(n)
        for a, k in enumerate(dup):
            kd = layout.kind[k]
            if kd == PG:
                rp[a] = 1.0
            elif kd == QG:
                rq[a] = 1.0
            elif kd in (PIJ, PJI):
                rp[a] = -1.0
            else:
                rq[a] = -1.0
        rp[nd] = -network.gs[i]
        rq[nd] = network.bs[i]
        A += [rp, rq]
        b += [network.pd[i], network.qd[i]]
        if Q[nd + 1, nd + 1] == 0.0 or (fix_reference_angle and i in ref):
            # an angle without incident rows is fixed at 0 as well
            e = np.zeros(n)
            e[nd + 1] = 1.0
            if Q[nd + 1, nd + 1] == 0.0:
                Q[nd + 1, nd + 1] = 1.0
            A.append(e)
            b.append(0.0)
        A = np.array(A)
        K = np.block([[Q, A.T], [A, np.zeros((len(A), len(A)))]])
        sol = np.linalg.solve(K, np.concatenate([c, b]))
        xbar_dup[dup] = sol[:nd]
        w[i] = sol[nd]
        theta[i] = sol[nd + 1]
    return xbar_dup, w, theta


# ---------------------------------------------------------------------------
# z: scalar golden-section search


def z_golden(lam, y, rho, r, beta, iterations=160):
    """Minimize ``y (r + z) + rho/2 (r + z)^2 + lam z + beta/2 z^2`` by golden section.

    Runs in 40-digit decimal arithmetic: in floating point, function values
    near the minimum only resolve the minimizer to about ``sqrt(eps)``.
    """
    with localcontext() as ctx:
        ctx.prec = 40
        lam, y, rho, r, beta = (Decimal(float(v)) for v in (lam, y, rho, r, beta))
        half = Decimal(1) / 2

        def f(z):
            return y * (r + z) + half * rho * (r + z) ** 2 + lam * z + half * beta * z * z

        # bracket by doubling; the objective is a convex parabola
        a, b = Decimal(-1), Decimal(1)
        while f(a) < f(a / 2):
            a *= 2
        while f(b) < f(b / 2):
            b *= 2
        inv_phi = (Decimal(5).sqrt() - 1) / 2
        c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(iterations):
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - inv_phi * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + inv_phi * (b - a)
                fd = f(d)
        return float((a + b) / 2)


# ---------------------------------------------------------------------------
# box QP: active-set enumeration


@njit(cache=True)
def qp_evaluate(x, data, g, H):
    """``1/2 x'Qx - c'x`` with ``data = (Q.ravel(), c)``."""
    n = x.shape[0]
    f = 0.0
    for i in range(n):
        qx = 0.0
        for j in range(n):
            H[i, j] = data[i * n + j]
            qx += data[i * n + j] * x[j]
        g[i] = qx - data[n * n + i]
        f += x[i] * (0.5 * qx - data[n * n + i])
    return f


def random_box_qps(rng, count, n=6, min_eig=0.5):
    """SPD matrices with eigenvalues >= ``min_eig`` and linear terms."""
    M = rng.normal(size=(count, n, n))
    Q = M @ M.transpose(0, 2, 1) / n + min_eig * np.eye(n)
    c = rng.normal(scale=2.0, size=(count, n))
    return Q, c


def box_qp_enumeration(Q, c, lo, hi):
    """Exact minimizers of ``1/2 x'Qx - c'x`` on boxes by trying all ``3^n`` patterns.

    Each pattern fixes every coordinate at its lower bound, its upper bound,
    or leaves it free; the free block is solved exactly and the pattern is
    accepted when it is primal feasible with correctly signed multipliers.
    The pattern with the smallest KKT violation wins.
    """
    count, n = c.shape
    best = np.full((count, n), np.nan)
    best_err = np.full(count, np.inf)
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        free = np.flatnonzero(pattern == 2)
        fixed = np.flatnonzero(pattern != 2)
        x = np.where(pattern == 0, lo, hi).astype(float)
        if free.size:
            Qff = Q[:, free[:, None], free[None, :]]
            rhs = c[:, free] - np.einsum("kij,kj->ki", Q[:, free[:, None], fixed[None, :]],
                                         x[:, fixed])
            x[:, free] = np.linalg.solve(Qff, rhs[..., None])[..., 0]
        g = np.einsum("kij,kj->ki", Q, x) - c
        err = np.zeros(count)
        if free.size:
            xf = x[:, free]
            err = np.maximum(err, np.max(np.maximum(lo[:, free] - xf, xf - hi[:, free]), axis=1))
        at_lo = pattern == 0
        at_hi = pattern == 1
        if at_lo.any():
            err = np.maximum(err, np.max(-g[:, at_lo], axis=1))
        if at_hi.any():
            err = np.maximum(err, np.max(g[:, at_hi], axis=1))
        better = err < best_err
        best[better] = x[better]
        best_err[better] = err[better]
    return best, best_err


def qp_data(Q, c):
    return np.concatenate([Q.reshape(len(Q), -1), c], axis=1)


# ---------------------------------------------------------------------------
# branch: finite differences


def random_branch_data(rng):
    """One random but physically shaped branch parameter vector."""
    data = np.zeros(N_PARAM)
    g = rng.uniform(0.5, 20.0)
    b = rng.uniform(2.0, 60.0)
    tap = rng.uniform(0.9, 1.1)
    data[0:8] = [g / tap**2 + rng.uniform(0, 0.1), b / tap**2 + rng.uniform(-0.1, 0.1),
                 -g / tap * rng.uniform(0.9, 1.1), -b / tap * rng.uniform(0.9, 1.1),
                 -g / tap * rng.uniform(0.9, 1.1), -b / tap * rng.uniform(0.9, 1.1),
                 g + rng.uniform(0, 0.1), b + rng.uniform(-0.1, 0.1)]
    data[8:16] = rng.normal(scale=5.0, size=8)
    data[16:24] = 10.0 ** rng.uniform(0, 3, size=8)
    data[24:32] = rng.normal(scale=0.5, size=8) + np.array([0, 0, 0, 0, 1, 0, 1, 0])
    data[32:34] = rng.normal(scale=5.0, size=2)
    data[34] = 10.0 ** rng.uniform(0, 2)
    data[35] = float(rng.random() < 0.7)
    return data


def random_branch_point(rng):
    return np.array([rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1),
                     rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                     -rng.uniform(0, 4.0), -rng.uniform(0, 4.0)])


def branch_fd(x, data, h=1e-6):
    """Central-difference gradient of the objective and Hessian of the gradient."""
    n = 6
    g = np.empty(n)
    H = np.empty((n, n))
    gp, gm = np.empty(n), np.empty(n)
    Hs = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fp = branch_evaluate(x + e, data, gp, Hs)
        fm = branch_evaluate(x - e, data, gm, Hs)
        g[i] = (fp - fm) / (2 * h)
        H[:, i] = (gp - gm) / (2 * h)
    return g, 0.5 * (H + H.T)


def relative_error(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))
