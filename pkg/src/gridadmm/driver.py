"""Two-level ADMM driver.

The outer loop is an augmented Lagrangian on ``z = 0`` (multiplier ``lam``,
penalty ``beta``); each outer iteration runs inner ADMM sweeps

    x (generators, branches) -> xbar (buses) -> z -> y

until the inner residuals are small, then updates ``lam`` and ``beta``.
The solve stops once ``||z||_inf <= eps`` after an inner loop that met its
own tolerance.
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .decomp import AdmmState, CouplingLayout, build_layout, empty_state
from .netdata import PowerNetwork, midpoint
from .tron import TronSettings

log = logging.getLogger(__name__)

CONVERGED = "converged"
ITERATION_LIMIT = "iteration_limit"
DIVERGED = "diverged"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("GRIDADMM_WORKERS", "1")))
    except ValueError:
        return 1


# Built-in settings per case.  The pegase and ACTIVSg penalties are the
# published ones; everything else was tuned on this implementation.  A
# large beta0 keeps z from soaking up the early supply shortfall.
PRESETS = {
    "case9": {"rho_pq": 400.0, "rho_va": 4000.0, "beta0": 1e7},
    "case30": {"rho_pq": 1000.0, "rho_va": 1e4, "beta0": 1e7},
    "case118": {"rho_pq": 400.0, "rho_va": 4000.0, "beta0": 1e7},
    "case1354pegase": {"rho_pq": 1e1, "rho_va": 1e3, "beta0": 1e6},
    "case2869pegase": {"rho_pq": 1e1, "rho_va": 1e3, "beta0": 1e6},
    "case9241pegase": {"rho_pq": 5e1, "rho_va": 5e3, "beta0": 1e6},
    "case13659pegase": {"rho_pq": 5e1, "rho_va": 5e3, "beta0": 1e6},
    "case_ACTIVSg25k": {"rho_pq": 3e3, "rho_va": 3e4},
    "case_ACTIVSg70k": {"rho_pq": 3e4, "rho_va": 3e5},
}


@dataclass(frozen=True)
class SolverConfig:
    """Penalties, tolerances and limits of the two-level scheme.

    ``inner_tol=None`` means ``inner_tol_scale * sqrt(m)`` for ``m``
    coupling rows.  The inner loop stops when both the primal residual
    ``||x - xbar + z||_inf`` and the scaled bus change
    ``||rho * (xbar - xbar_prev)||_inf`` fall below it.
    """

    rho_pq: float = 10.0
    rho_va: float = 1000.0
    beta0: float = 1e3
    beta_factor: float = 10.0
    beta_ratio: float = 0.25
    beta_max: float = 1e12
    eps: float = 1e-4
    inner_tol: Optional[float] = None
    inner_tol_scale: float = 1e-4
    max_outer: int = 20
    max_inner: int = 1000
    lam_bound: float = 1e12
    lam_tilde_bound: float = 1e8
    rate_tighten: float = 0.99
    divergence: float = 1e8
    tron: TronSettings = field(default_factory=TronSettings)
    workers: int = field(default_factory=default_workers)

    def __post_init__(self):
        positive = ("rho_pq", "rho_va", "beta0", "beta_factor", "beta_ratio", "beta_max",
                    "eps", "inner_tol_scale", "lam_bound", "lam_tilde_bound",
                    "rate_tighten", "divergence")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.inner_tol is not None and not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")
        if self.max_outer < 1 or self.max_inner < 1 or self.workers < 1:
            raise ValueError("iteration limits and worker count must be >= 1")

    def inner_tolerance(self, m: int) -> float:
        if self.inner_tol is not None:
            return self.inner_tol
        return self.inner_tol_scale * math.sqrt(max(m, 1))

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    @classmethod
    def preset(cls, name: str, **overrides) -> "SolverConfig":
        """Config from the built-in settings of case ``name``."""
        if name not in PRESETS:
            raise KeyError(f"no preset for {name!r}; known: {', '.join(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})


@dataclass
class Solution:
    pg: np.ndarray
    qg: np.ndarray
    vm: np.ndarray
    va: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("pg", "qg", "vm", "va")}


@dataclass
class SolveReport:
    status: str
    outer_iterations: int
    inner_iterations: int
    history: dict
    phase_times: dict
    solution: Solution
    metrics: dict
    state: AdmmState
    branch_failures: int = 0
    branch_stalls: int = 0
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def objective(self) -> float:
        return self.metrics["objective"]


# ---------------------------------------------------------------------------


def cold_start(network: PowerNetwork, config: SolverConfig | None = None,
               layout: CouplingLayout | None = None) -> AdmmState:
    """Mid-bound powers and voltage magnitudes, flat angles, consistent flows."""
    config = config or SolverConfig()
    layout = layout or build_layout(network)
    state = empty_state(layout, layout.rho(config.rho_pq, config.rho_va), config.beta0)
    rp, rq = layout.gen_rows()
    state.x[rp] = midpoint(network.pmin, network.pmax)
    state.x[rq] = midpoint(network.qmin, network.qmax)
    vm = midpoint(network.vmin, network.vmax)
    va = np.zeros(network.n_bus)
    _set_branch_point(state, network, layout, vm, va, config.rate_tighten)
    state.xbar_dup = np.where(layout.is_dup, state.x, 0.0)
    state.w = vm**2
    state.theta = va
    return state


def warm_state(network: PowerNetwork, solution: Solution, config: SolverConfig | None = None,
               layout: CouplingLayout | None = None) -> AdmmState:
    """Primal-only warm start from a previous solution (multipliers zero)."""
    config = config or SolverConfig()
    layout = layout or build_layout(network)
    state = empty_state(layout, layout.rho(config.rho_pq, config.rho_va), config.beta0)
    rp, rq = layout.gen_rows()
    state.x[rp] = np.clip(solution.pg, network.pmin, network.pmax)
    state.x[rq] = np.clip(solution.qg, network.qmin, network.qmax)
    vm = np.asarray(solution.vm, dtype=float)
    va = np.asarray(solution.va, dtype=float)
    _set_branch_point(state, network, layout, vm, va, config.rate_tighten)
    state.xbar_dup = np.where(layout.is_dup, state.x, 0.0)
    state.w = vm**2
    state.theta = va.copy()
    return state


def _set_branch_point(state, network, layout, vm, va, rate_tighten):
    f, t = network.br_from, network.br_to
    lo, hi = kernels.branch_bounds(network, rate_tighten)
    bv = np.column_stack([vm[f], vm[t], va[f], va[t], np.zeros((network.n_branch, 2))])
    e = kernels.branch_quantities(network, bv[:, 0], bv[:, 1], bv[:, 2], bv[:, 3])
    bv[:, 4] = -(e[:, 0] ** 2 + e[:, 1] ** 2)
    bv[:, 5] = -(e[:, 2] ** 2 + e[:, 3] ** 2)
    bv[:, :] = np.clip(bv, lo, hi)
    state.branch_vars = bv
    state.x[layout.branch_rows()] = e
    state.rho_tilde = state.rho[layout.branch_offset].copy()


def extract_solution(state: AdmmState, network: PowerNetwork, layout: CouplingLayout) -> Solution:
    """Generator set points from the generator side, voltages from the buses."""
    rp, rq = layout.gen_rows()
    return Solution(pg=state.x[rp].copy(), qg=state.x[rq].copy(),
                    vm=np.sqrt(np.maximum(state.w, 0.0)), va=state.theta.copy())


def evaluate_solution(network: PowerNetwork, solution: Solution) -> dict:
    """Constraint violation and objective with flows recomputed from voltages.

    ``c_inf`` is the largest of the power-balance mismatches, the line-limit
    excesses over the (untightened) ratings, and the bound violations.
    """
    pg, qg = np.asarray(solution.pg), np.asarray(solution.qg)
    vm, va = np.asarray(solution.vm), np.asarray(solution.va)
    nb = network.n_bus
    flows = kernels.branch_flows(network, vm, va)
    f, t = network.br_from, network.br_to
    out_p = (np.bincount(f, flows[:, 0], nb) + np.bincount(t, flows[:, 2], nb))
    out_q = (np.bincount(f, flows[:, 1], nb) + np.bincount(t, flows[:, 3], nb))
    gen_p = np.bincount(network.gen_bus, pg, nb)
    gen_q = np.bincount(network.gen_bus, qg, nb)
    w = vm**2
    mis_p = gen_p - network.pd - network.gs * w - out_p
    mis_q = gen_q - network.qd + network.bs * w - out_q
    s_from = np.hypot(flows[:, 0], flows[:, 1])
    s_to = np.hypot(flows[:, 2], flows[:, 3])
    lim = network.limited
    line = np.maximum(0.0, np.maximum(s_from, s_to) - network.rate)
    line = np.where(lim, line, 0.0)

    def excess(v, lo, hi):
        return np.maximum(0.0, np.maximum(lo - v, v - hi))

    bounds = np.concatenate([
        excess(pg, network.pmin, network.pmax), excess(qg, network.qmin, network.qmax),
        excess(vm, network.vmin, network.vmax), excess(va, -2 * np.pi, 2 * np.pi),
    ])
    parts = {
        "balance_p": float(np.max(np.abs(mis_p), initial=0.0)),
        "balance_q": float(np.max(np.abs(mis_q), initial=0.0)),
        "line_limit": float(np.max(line, initial=0.0)),
        "bounds": float(np.max(bounds, initial=0.0)),
    }
    objective = float(np.sum(network.c2 * pg**2 + network.c1 * pg + network.c0))
    return {"c_inf": max(parts.values()), **parts, "objective": objective}


# ---------------------------------------------------------------------------


class _History:
    columns = ("outer", "inner", "primal_res", "dual_res", "z_norm", "elapsed_s")

    def __init__(self):
        self.rows = {c: [] for c in self.columns}

    def add(self, **row):
        for c in self.columns:
            self.rows[c].append(row[c])

    def as_arrays(self) -> dict:
        return {c: np.asarray(v) for c, v in self.rows.items()}


def solve(network: PowerNetwork, config: SolverConfig | None = None,
          init: AdmmState | Solution | None = None,
          layout: CouplingLayout | None = None, callback=None) -> SolveReport:
    """Run the two-level ADMM from a cold start or a warm start.

    ``init`` may be a full :class:`AdmmState` (all primal and dual iterates
    are reused, so a converged state is a fixed point) or a
    :class:`Solution` (primal values only).  ``callback(outer, state)`` is
    called after every outer update.
    """
    config = config or SolverConfig()
    layout = layout or build_layout(network)
    if init is None:
        state = cold_start(network, config, layout)
    elif isinstance(init, Solution):
        state = warm_state(network, init, config, layout)
    else:
        state = init.copy()
        if state.x.shape != (layout.m,):
            raise ValueError("warm-start state does not match the network layout")
        state.rho = layout.rho(config.rho_pq, config.rho_va)
        state.rho_tilde = state.rho[layout.branch_offset].copy()

    opts = kernels.BranchOptions(config.rate_tighten, config.lam_tilde_bound,
                                 config.tron, config.workers)
    tol = config.inner_tolerance(layout.m)
    hist = _History()
    times = {"generators": 0.0, "branches": 0.0, "buses": 0.0, "z": 0.0, "y": 0.0,
             "outer": 0.0}
    t_start = time.perf_counter()
    status = ITERATION_LIMIT
    message = ""
    branch_failures = 0
    branch_stalls = 0
    inner_total = 0
    outer = 0
    z_prev = math.inf
    xbar_prev = state.xbar_rows(layout)

    for outer in range(1, config.max_outer + 1):
        inner_done = False
        for inner in range(1, config.max_inner + 1):
            t0 = time.perf_counter()
            kernels.solve_generators(state, network, layout)
            t1 = time.perf_counter()
            stats = kernels.solve_branch_batch(state, network, layout, opts)
            branch_failures += stats.failures
            branch_stalls += stats.stalls
            t2 = time.perf_counter()
            kernels.solve_buses(state, network, layout)
            t3 = time.perf_counter()
            kernels.solve_z(state, layout)
            t4 = time.perf_counter()
            kernels.update_y(state, layout)
            t5 = time.perf_counter()
            times["generators"] += t1 - t0
            times["branches"] += t2 - t1
            times["buses"] += t3 - t2
            times["z"] += t4 - t3
            times["y"] += t5 - t4

            xbar = state.xbar_rows(layout)
            primal = float(np.max(np.abs(state.x - xbar + state.z)))
            dual = float(np.max(np.abs(state.rho * (xbar - xbar_prev))))
            xbar_prev = xbar
            z_norm = float(np.max(np.abs(state.z)))
            inner_total += 1
            state.inner_iter += 1
            hist.add(outer=outer, inner=inner, primal_res=primal, dual_res=dual,
                     z_norm=z_norm, elapsed_s=time.perf_counter() - t_start)
            if not all(map(math.isfinite, (primal, dual, z_norm))) or \
                    max(primal, dual, z_norm) > config.divergence:
                status = DIVERGED
                message = (f"residual exceeded {config.divergence:g} at outer {outer}, "
                           f"inner {inner} (primal={primal:.3e}, dual={dual:.3e}, "
                           f"z={z_norm:.3e})")
                log.warning(message)
                break
            if primal <= tol and dual <= tol:
                inner_done = True
                break
        if status == DIVERGED:
            break
        t0 = time.perf_counter()
        z_norm = float(np.max(np.abs(state.z)))
        kernels.update_lambda(state, config.lam_bound)
        state.outer_iter += 1
        log.info("outer %d: inner=%d ||z||=%.3e beta=%.1e", outer, inner, z_norm, state.beta)
        if callback is not None:
            callback(outer, state)
        # a small z from a capped inner loop says nothing about consensus
        if z_norm <= config.eps and inner_done:
            status = CONVERGED
            times["outer"] += time.perf_counter() - t0
            break
        if z_norm > config.beta_ratio * z_prev:
            state.beta = min(state.beta * config.beta_factor, config.beta_max)
        z_prev = z_norm
        times["outer"] += time.perf_counter() - t0

    solution = extract_solution(state, network, layout)
    return SolveReport(
        status=status, outer_iterations=outer, inner_iterations=inner_total,
        history=hist.as_arrays(), phase_times=times, solution=solution,
        metrics=evaluate_solution(network, solution), state=state,
        branch_failures=branch_failures, branch_stalls=branch_stalls, message=message,
    )
