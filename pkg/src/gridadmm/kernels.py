"""Per-component updates of one inner ADMM sweep.

Order within a sweep: generators and branches (component side), buses,
artificial slacks ``z``, then multipliers ``y``.  The outer loop updates
``lam`` and ``beta``.  All updates are vectorized over their index set;
branch problems go through the batch TRON solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import tron
from .decomp import AdmmState, CouplingLayout
from .netdata import ANGLE_LIMIT, PowerNetwork

# branch parameter vector layout
COEF = slice(0, 8)
Y = slice(8, 16)
RHO = slice(16, 24)
TARGET = slice(24, 32)
LAM_T = slice(32, 34)
RHO_T = 34
LIMITED = 35
N_PARAM = 36


# ---------------------------------------------------------------------------
# branch physics


@njit(cache=True)
def branch_terms(vi, vj, ti, tj, c, e, J, Hq):
    """Consensus quantities of a branch and their derivatives.

    ``e`` receives ``(p_ij, q_ij, p_ji, q_ji, v_i^2, theta_i, v_j^2,
    theta_j)``; ``J`` (8x4) their gradients w.r.t. ``(v_i, v_j, theta_i,
    theta_j)``; ``Hq`` (8x4x4) their Hessians.  ``c`` holds the eight
    admittance coefficients ``gii, bii, gij, bij, gji, bji, gjj, bjj``.
    """
    cs = math.cos(ti - tj)
    sn = math.sin(ti - tj)
    wr = vi * vj * cs
    wi = vi * vj * sn
    # basis: v_i^2, v_j^2, wR, wI
    dB = np.zeros((4, 4))
    hB = np.zeros((4, 4, 4))
    dB[0, 0] = 2.0 * vi
    dB[1, 1] = 2.0 * vj
    hB[0, 0, 0] = 2.0
    hB[1, 1, 1] = 2.0
    dB[2, 0] = vj * cs
    dB[2, 1] = vi * cs
    dB[2, 2] = -wi
    dB[2, 3] = wi
    dB[3, 0] = vj * sn
    dB[3, 1] = vi * sn
    dB[3, 2] = wr
    dB[3, 3] = -wr
    # Hessian of wR
    h = hB[2]
    h[0, 1] = cs
    h[0, 2] = -vj * sn
    h[0, 3] = vj * sn
    h[1, 2] = -vi * sn
    h[1, 3] = vi * sn
    h[2, 2] = -wr
    h[2, 3] = wr
    h[3, 3] = -wr
    # Hessian of wI
    h = hB[3]
    h[0, 1] = sn
    h[0, 2] = vj * cs
    h[0, 3] = -vj * cs
    h[1, 2] = vi * cs
    h[1, 3] = -vi * cs
    h[2, 2] = -wi
    h[2, 3] = wi
    h[3, 3] = -wi
    for b in range(2, 4):
        for r in range(4):
            for s in range(r):
                hB[b, r, s] = hB[b, s, r]
    base = (vi * vi, vj * vj, wr, wi)
    gii, bii, gij, bij = c[0], c[1], c[2], c[3]
    gji, bji, gjj, bjj = c[4], c[5], c[6], c[7]
    A = np.array([
        [gii, 0.0, gij, bij],
        [-bii, 0.0, -bij, gij],
        [0.0, gjj, gji, -bji],
        [0.0, -bjj, -bji, -gji],
    ])
    for k in range(4):
        t = 0.0
        for m in range(4):
            t += A[k, m] * base[m]
        e[k] = t
        for r in range(4):
            t = 0.0
            for m in range(4):
                t += A[k, m] * dB[m, r]
            J[k, r] = t
            for s in range(4):
                t = 0.0
                for m in range(4):
                    t += A[k, m] * hB[m, r, s]
                Hq[k, r, s] = t
    for k in range(4, 8):
        for r in range(4):
            J[k, r] = 0.0
            for s in range(4):
                Hq[k, r, s] = 0.0
    e[4] = vi * vi
    J[4, 0] = 2.0 * vi
    Hq[4, 0, 0] = 2.0
    e[5] = ti
    J[5, 2] = 1.0
    e[6] = vj * vj
    J[6, 1] = 2.0 * vj
    Hq[6, 1, 1] = 2.0
    e[7] = tj
    J[7, 3] = 1.0


@njit(cache=True)
def branch_evaluate(x, data, g, H):
    """Augmented Lagrangian of one branch in ``(v_i, v_j, th_i, th_j, s_ij, s_ji)``."""
    e = np.empty(8)
    J = np.empty((8, 4))
    Hq = np.empty((8, 4, 4))
    branch_terms(x[0], x[1], x[2], x[3], data[0:8], e, J, Hq)
    for i in range(6):
        g[i] = 0.0
        for j in range(6):
            H[i, j] = 0.0
    f = 0.0
    for k in range(8):
        y = data[8 + k]
        rho = data[16 + k]
        res = e[k] - data[24 + k]
        f += y * res + 0.5 * rho * res * res
        d1 = y + rho * res
        for r in range(4):
            g[r] += d1 * J[k, r]
            for s in range(4):
                H[r, s] += rho * J[k, r] * J[k, s] + d1 * Hq[k, r, s]
    if data[35] > 0.0:
        rho_t = data[34]
        gh = np.empty(6)
        for side in range(2):
            kp = 2 * side
            kq = kp + 1
            sv = 4 + side
            p = e[kp]
            q = e[kq]
            h = p * p + q * q + x[sv]
            lam = data[32 + side]
            f += lam * h + 0.5 * rho_t * h * h
            d1 = lam + rho_t * h
            for r in range(4):
                gh[r] = 2.0 * p * J[kp, r] + 2.0 * q * J[kq, r]
            gh[4] = 0.0
            gh[5] = 0.0
            gh[sv] = 1.0
            for r in range(6):
                g[r] += d1 * gh[r]
                for s in range(6):
                    H[r, s] += rho_t * gh[r] * gh[s]
            for r in range(4):
                for s in range(4):
                    H[r, s] += d1 * (2.0 * J[kp, r] * J[kp, s] + 2.0 * p * Hq[kp, r, s]
                                     + 2.0 * J[kq, r] * J[kq, s] + 2.0 * q * Hq[kq, r, s])
    # exact symmetry (the sums above agree only up to roundoff)
    for r in range(6):
        for s in range(r):
            H[r, s] = H[s, r]
    return f


def branch_quantities(network: PowerNetwork, vi, vj, ti, tj) -> np.ndarray:
    """Vectorized ``(n, 8)`` consensus quantities for all branches."""
    cs, sn = np.cos(ti - tj), np.sin(ti - tj)
    wr, wim = vi * vj * cs, vi * vj * sn
    wii, wjj = vi * vi, vj * vj
    n = network
    return np.column_stack([
        n.gii * wii + n.gij * wr + n.bij * wim,
        -n.bii * wii - n.bij * wr + n.gij * wim,
        n.gjj * wjj + n.gji * wr - n.bji * wim,
        -n.bjj * wjj - n.bji * wr - n.gji * wim,
        wii, ti, wjj, tj,
    ])


def branch_flows(network: PowerNetwork, vm, va) -> np.ndarray:
    """``(n_branch, 4)`` flows ``p_ij, q_ij, p_ji, q_ji`` from bus voltages."""
    f, t = network.br_from, network.br_to
    return branch_quantities(network, vm[f], vm[t], va[f], va[t])[:, :4]


# ---------------------------------------------------------------------------
# branch batch


@dataclass(frozen=True)
class BranchOptions:
    rate_tighten: float = 0.99
    lam_tilde_bound: float = 1e8
    tron_settings: tron.TronSettings = tron.TronSettings()
    workers: int = 1


def branch_bounds(network: PowerNetwork, rate_tighten: float = 0.99):
    nl = network.n_branch
    f, t = network.br_from, network.br_to
    lo = np.empty((nl, 6))
    hi = np.empty((nl, 6))
    lo[:, 0], hi[:, 0] = network.vmin[f], network.vmax[f]
    lo[:, 1], hi[:, 1] = network.vmin[t], network.vmax[t]
    lo[:, 2:4], hi[:, 2:4] = -ANGLE_LIMIT, ANGLE_LIMIT
    cap = np.where(network.limited, (rate_tighten * network.rate) ** 2, 0.0)
    lo[:, 4] = lo[:, 5] = -cap
    hi[:, 4:6] = 0.0
    return lo, hi


def branch_data(state: AdmmState, network: PowerNetwork, layout: CouplingLayout) -> np.ndarray:
    """Stack every branch's parameter vector (``N_PARAM`` columns)."""
    rows = layout.branch_rows()
    xbar = state.xbar_rows(layout)
    data = np.empty((network.n_branch, N_PARAM))
    data[:, COEF] = np.column_stack([getattr(network, k) for k in
                                     ("gii", "bii", "gij", "bij", "gji", "bji", "gjj", "bjj")])
    data[:, Y] = state.y[rows]
    data[:, RHO] = state.rho[rows]
    data[:, TARGET] = xbar[rows] - state.z[rows]
    data[:, LAM_T] = state.lam_tilde
    data[:, RHO_T] = state.rho_tilde
    data[:, LIMITED] = network.limited.astype(float)
    return data


def line_limit_residual(network, e, slack):
    """``p^2 + q^2 + s`` for both ends; zero on unlimited branches."""
    h = np.column_stack([e[:, 0] ** 2 + e[:, 1] ** 2 + slack[:, 0],
                         e[:, 2] ** 2 + e[:, 3] ** 2 + slack[:, 1]])
    h[~network.limited] = 0.0
    return h


@dataclass
class BranchStats:
    iterations: np.ndarray
    status: np.ndarray

    @property
    def failures(self) -> int:
        """Branches that hit the iteration limit or a non-finite value."""
        return int(np.count_nonzero((self.status == tron.MAX_ITER)
                                    | (self.status == tron.NONFINITE)))

    @property
    def stalls(self) -> int:
        """Branches whose trust region collapsed at roundoff level."""
        return int(np.count_nonzero(self.status == tron.STALLED))


def solve_branch_batch(state: AdmmState, network: PowerNetwork, layout: CouplingLayout,
                       options: BranchOptions = BranchOptions()) -> BranchStats:
    """Solve all branch NLPs from their previous local solutions.

    Writes the eight consensus quantities of each branch into ``state.x``
    and takes one multiplier step on each line-limit residual.  A branch
    whose solve fails keeps its previous point.
    """
    if network.n_branch == 0:
        return BranchStats(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    lo, hi = branch_bounds(network, options.rate_tighten)
    data = branch_data(state, network, layout)
    x0 = np.clip(state.branch_vars, lo, hi)
    sol, status, iters, _ = tron.minimize_batch(
        branch_evaluate, data, x0, lo, hi, options.tron_settings, options.workers)
    bad = (status == tron.NONFINITE) | ~np.all(np.isfinite(sol), axis=1)
    sol[bad] = x0[bad]
    state.branch_vars = sol
    e = branch_quantities(network, sol[:, 0], sol[:, 1], sol[:, 2], sol[:, 3])
    state.x[layout.branch_rows()] = e
    h = line_limit_residual(network, e, sol[:, 4:6])
    b = options.lam_tilde_bound
    state.lam_tilde = np.clip(state.lam_tilde + state.rho_tilde[:, None] * h, -b, b)
    return BranchStats(iters, status)


def branch_problem(state: AdmmState, network: PowerNetwork, layout: CouplingLayout,
                   l: int, rate_tighten: float = 0.99) -> tron.BoxNlp:
    """Explicit :class:`~gridadmm.tron.BoxNlp` for branch ``l``."""
    lo, hi = branch_bounds(network, rate_tighten)
    data = branch_data(state, network, layout)
    return tron.BoxNlp(lo[l], hi[l], branch_evaluate, data[l])


# ---------------------------------------------------------------------------
# closed-form updates


def solve_generators(state: AdmmState, network: PowerNetwork, layout: CouplingLayout):
    """Exact minimizer of each generator's separable quadratic, clipped to bounds."""
    rp, rq = layout.gen_rows()
    xbar = state.xbar_dup
    rho_p, rho_q = state.rho[rp], state.rho[rq]
    p = (rho_p * (xbar[rp] - state.z[rp]) - state.y[rp] - network.c1) / (2.0 * network.c2 + rho_p)
    q = (rho_q * (xbar[rq] - state.z[rq]) - state.y[rq]) / rho_q
    state.x[rp] = np.clip(p, network.pmin, network.pmax)
    state.x[rq] = np.clip(q, network.qmin, network.qmax)


def _bus_sum(values, buses, n):
    return np.bincount(buses, weights=values, minlength=n)


class SingularBusError(ArithmeticError):
    pass


def bus_coefficients(network: PowerNetwork, layout: CouplingLayout):
    """Per-row coefficients of the two balance rows on bus-owned duplicates."""
    from .decomp import PG, QG, PIJ, QIJ, PJI, QJI
    kind = layout.kind
    a_p = np.zeros(layout.m)
    a_q = np.zeros(layout.m)
    a_p[kind == PG] = 1.0
    a_q[kind == QG] = 1.0
    a_p[(kind == PIJ) | (kind == PJI)] = -1.0
    a_q[(kind == QIJ) | (kind == QJI)] = -1.0
    return a_p, a_q


def solve_buses(state: AdmmState, network: PowerNetwork, layout: CouplingLayout,
                fix_reference_angle: bool = True):
    """Closed-form equality-constrained QP per bus.

    For each bus the owned duplicates, ``w_i`` and ``theta_i`` minimize
    ``sum_k y_k (x_k - xbar_k + z_k) + rho_k/2 (x_k - xbar_k + z_k)^2``
    over its rows, subject to real and reactive power balance.  With the
    diagonal Hessian ``Q`` this is ``mu = (A Q^-1 A')^-1 (A Q^-1 c - b)``
    followed by ``xbar = Q^-1 (c - A' mu)``.
    """
    nb = network.n_bus
    rho, dup = state.rho, layout.is_dup
    c_row = state.y + rho * (state.x + state.z)
    a_p, a_q = bus_coefficients(network, layout)
    bus = layout.bus

    w_rows, th_rows = layout.w_rows, layout.theta_rows
    q_w = _bus_sum(rho[w_rows], bus[w_rows], nb)
    c_w = _bus_sum(c_row[w_rows], bus[w_rows], nb)
    q_th = _bus_sum(rho[th_rows], bus[th_rows], nb)
    c_th = _bus_sum(c_row[th_rows], bus[th_rows], nb)
    if np.any(q_w <= 0):
        raise SingularBusError("bus without incident branches")
    a_wp, a_wq = -network.gs, network.bs

    inv = np.where(dup, 1.0 / rho, 0.0)
    m_pp = _bus_sum(a_p**2 * inv, bus, nb) + a_wp**2 / q_w
    m_qq = _bus_sum(a_q**2 * inv, bus, nb) + a_wq**2 / q_w
    m_pq = _bus_sum(a_p * a_q * inv, bus, nb) + a_wp * a_wq / q_w
    v_p = _bus_sum(a_p * c_row * inv, bus, nb) + a_wp * c_w / q_w - network.pd
    v_q = _bus_sum(a_q * c_row * inv, bus, nb) + a_wq * c_w / q_w - network.qd
    det = m_pp * m_qq - m_pq**2
    if np.any(np.abs(det) <= 1e-300):
        raise SingularBusError("singular balance system at a bus")
    mu_p = (m_qq * v_p - m_pq * v_q) / det
    mu_q = (m_pp * v_q - m_pq * v_p) / det

    xbar = (c_row - a_p * mu_p[bus] - a_q * mu_q[bus]) * inv
    state.xbar_dup = np.where(dup, xbar, 0.0)
    state.w = (c_w - a_wp * mu_p - a_wq * mu_q) / q_w
    theta = np.divide(c_th, q_th, out=np.zeros(nb), where=q_th > 0)
    if fix_reference_angle:
        theta[network.ref_buses] = 0.0
    state.theta = theta
    return mu_p, mu_q


def solve_z(state: AdmmState, layout: CouplingLayout):
    """Unconstrained minimizer of ``lam z + beta/2 z^2 + y (r + z) + rho/2 (r + z)^2``."""
    r = state.mismatch(layout)
    state.z = -(state.lam + state.y + state.rho * r) / (state.rho + state.beta)


def update_y(state: AdmmState, layout: CouplingLayout):
    state.y = state.y + state.rho * (state.mismatch(layout) + state.z)


def update_lambda(state: AdmmState, bound: float = 1e12):
    state.lam = np.clip(state.lam + state.beta * state.z, -bound, bound)
