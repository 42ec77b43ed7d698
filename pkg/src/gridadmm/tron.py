"""Trust-region Newton method for small dense bound-constrained problems.

The solver follows the Lin-More TRON scheme: a Cauchy step along the
projected-gradient path, then a Steihaug preconditioned-CG refinement on
the free variables (stopping on negative curvature or at the trust-region
boundary) with a projected search, and a standard radius update.

Problems supply a callback ``evaluate(x, data, g, H) -> f`` that fills the
gradient ``g`` and dense Hessian ``H`` in place.  If the callback is a
numba-jitted function the whole solve runs compiled and without the GIL;
plain Python callbacks run the same algorithm interpreted.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

CONVERGED = 0
MAX_ITER = 1
NONFINITE = 2
STALLED = 3
STATUS_NAMES = {CONVERGED: "converged", MAX_ITER: "iteration_limit",
                NONFINITE: "nonfinite", STALLED: "stalled"}

_MU0 = 0.01  # sufficient decrease for Cauchy and projected searches
_ETA0 = 1e-4  # step acceptance threshold on actual/predicted reduction
_NOISE = 1e-10  # relative change in f below which comparisons are unreliable


@dataclass(frozen=True)
class TronSettings:
    gtol: float = 1e-6
    max_iter: int = 200
    cg_tol: float = 0.1
    max_cg: int = 50
    delta_floor: float = 1e-3

    def __post_init__(self):
        if min(self.gtol, self.cg_tol, self.delta_floor) <= 0:
            raise ValueError("TRON tolerances must be positive")
        if self.max_iter < 0 or self.max_cg < 1:
            raise ValueError("invalid TRON iteration limits")


@dataclass
class BoxNlp:
    """``minimize f(x)`` subject to ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray
    evaluate: Callable
    data: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("bounds must be 1-d arrays of equal length")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def compiled(self) -> bool:
        return isinstance(self.evaluate, CPUDispatcher)

    @classmethod
    def from_functions(cls, objective, gradient, hessian, lower, upper):
        """Build a problem from separate ``f(x)``, ``g(x)``, ``H(x)`` callables."""

        def evaluate(x, data, g, H):
            g[:] = gradient(x)
            H[:, :] = hessian(x)
            return float(objective(x))

        return cls(lower, upper, evaluate)


@dataclass
class TronResult:
    x: np.ndarray
    status: int
    iterations: int
    f: float

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


# ---------------------------------------------------------------------------
# small dense linear algebra


@njit(cache=True)
def _cholesky(A, L):
    """Lower Cholesky factor in ``L``; False if ``A`` is not positive definite."""
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / d
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _precondition(L, use_chol, r, out):
    n = r.shape[0]
    if not use_chol:
        for i in range(n):
            out[i] = r[i]
        return
    for i in range(n):
        t = r[i]
        for k in range(i):
            t -= L[i, k] * out[k]
        out[i] = t / L[i, i]
    for i in range(n - 1, -1, -1):
        t = out[i]
        for k in range(i + 1, n):
            t -= L[k, i] * out[k]
        out[i] = t / L[i, i]


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@njit(cache=True)
def _quad(H, s):
    n = s.shape[0]
    t = 0.0
    for i in range(n):
        hs = 0.0
        for j in range(n):
            hs += H[i, j] * s[j]
        t += s[i] * hs
    return t


@njit(cache=True)
def _to_boundary(u, p, rad2):
    """Largest ``tau >= 0`` with ``||u + tau p||^2 <= rad2``."""
    pp = _dot(p, p)
    if pp == 0.0:
        return 0.0
    up = _dot(u, p)
    uu = _dot(u, u)
    disc = up * up - pp * (uu - rad2)
    if disc <= 0.0:
        return 0.0
    tau = (-up + math.sqrt(disc)) / pp
    return max(tau, 0.0)


@njit(cache=True)
def _pg_norm(x, g, lo, hi):
    """Infinity norm of the projected gradient step ``P(x - g) - x``."""
    m = 0.0
    for i in range(x.shape[0]):
        t = min(max(x[i] - g[i], lo[i]), hi[i]) - x[i]
        if abs(t) > m:
            m = abs(t)
    return m


# ---------------------------------------------------------------------------
# TRON steps


@njit(cache=True)
def _projected_step(x, g, lo, hi, alpha, s):
    for i in range(x.shape[0]):
        s[i] = min(max(x[i] - alpha * g[i], lo[i]), hi[i]) - x[i]


@njit(cache=True)
def _cauchy(x, g, H, lo, hi, delta, alpha, s):
    """Generalized Cauchy step along the projected-gradient path.

    Returns the accepted step length; the step itself is left in ``s``.
    """
    n = x.shape[0]
    brpt_max = 0.0
    for i in range(n):
        if g[i] > 0.0 and x[i] > lo[i]:
            t = (x[i] - lo[i]) / g[i]
        elif g[i] < 0.0 and x[i] < hi[i]:
            t = (x[i] - hi[i]) / g[i]
        else:
            continue
        if t > brpt_max:
            brpt_max = t

    def ok(s):
        gs = _dot(g, s)
        q = gs + 0.5 * _quad(H, s)
        return q <= _MU0 * gs and math.sqrt(_dot(s, s)) <= delta

    _projected_step(x, g, lo, hi, alpha, s)
    if ok(s):
        trial = np.empty(n)
        for _ in range(60):
            if alpha >= brpt_max:
                break
            a_new = alpha * 10.0
            _projected_step(x, g, lo, hi, a_new, trial)
            if not ok(trial):
                break
            alpha = a_new
            s[:] = trial
    else:
        for _ in range(200):
            alpha *= 0.1
            _projected_step(x, g, lo, hi, alpha, s)
            if ok(s):
                break
    return alpha


@njit(cache=True)
def _trpcg(Hf, gf, wf, rad2, cg_tol, max_cg, d):
    """Steihaug CG for ``min gf.d + d.Hf.d/2`` with ``||wf + d||^2 <= rad2``.

    Returns 0 on convergence, 1 at the boundary, 2 on negative curvature,
    3 when the CG step limit is reached.
    """
    nf = gf.shape[0]
    L = np.zeros((nf, nf))
    use_chol = _cholesky(Hf, L)
    d[:] = 0.0
    r = -gf
    rnorm0 = math.sqrt(_dot(r, r))
    if rnorm0 == 0.0:
        return 0
    zv = np.empty(nf)
    _precondition(L, use_chol, r, zv)
    p = zv.copy()
    rz = _dot(r, zv)
    u = np.empty(nf)
    Hp = np.empty(nf)
    for _ in range(max_cg):
        for i in range(nf):
            t = 0.0
            for j in range(nf):
                t += Hf[i, j] * p[j]
            Hp[i] = t
        curv = _dot(p, Hp)
        for i in range(nf):
            u[i] = wf[i] + d[i]
        if curv <= 0.0:
            tau = _to_boundary(u, p, rad2)
            for i in range(nf):
                d[i] += tau * p[i]
            return 2
        a = rz / curv
        out = 0.0
        for i in range(nf):
            t = u[i] + a * p[i]
            out += t * t
        if out >= rad2:
            tau = _to_boundary(u, p, rad2)
            for i in range(nf):
                d[i] += tau * p[i]
            return 1
        for i in range(nf):
            d[i] += a * p[i]
            r[i] -= a * Hp[i]
        if math.sqrt(_dot(r, r)) <= cg_tol * rnorm0:
            return 0
        _precondition(L, use_chol, r, zv)
        rz_new = _dot(r, zv)
        beta = rz_new / rz
        rz = rz_new
        for i in range(nf):
            p[i] = zv[i] + beta * p[i]
    return 3


@njit(cache=True)
def _subspace_step(x, g, H, lo, hi, delta, s, cg_tol, max_cg):
    """Refine the Cauchy step ``s`` on the free variables (in place)."""
    n = x.shape[0]
    xc = x + s
    rad2 = delta * delta
    free = np.zeros(n, dtype=np.bool_)
    gq = np.empty(n)
    step = np.empty(n)
    gnorm0 = -1.0
    for _ in range(n):
        nf = 0
        for i in range(n):
            free[i] = lo[i] < xc[i] < hi[i]
            if free[i]:
                nf += 1
        if nf == 0:
            break
        for i in range(n):
            t = g[i]
            for j in range(n):
                t += H[i, j] * s[j]
            gq[i] = t
        idx = np.empty(nf, dtype=np.int64)
        k = 0
        for i in range(n):
            if free[i]:
                idx[k] = i
                k += 1
        gf = np.empty(nf)
        wf = np.empty(nf)
        Hf = np.empty((nf, nf))
        fixed2 = 0.0
        for i in range(n):
            if not free[i]:
                fixed2 += s[i] * s[i]
        for a in range(nf):
            gf[a] = gq[idx[a]]
            wf[a] = s[idx[a]]
            for b in range(nf):
                Hf[a, b] = H[idx[a], idx[b]]
        gfn = math.sqrt(_dot(gf, gf))
        if gnorm0 < 0.0:
            gnorm0 = gfn
        elif gfn <= cg_tol * gnorm0:
            break
        d = np.empty(nf)
        info = _trpcg(Hf, gf, wf, rad2 - fixed2, cg_tol, max_cg, d)

        # projected search along d
        alpha = 1.0
        moved = False
        for _ in range(40):
            for i in range(n):
                step[i] = 0.0
            for a in range(nf):
                i = idx[a]
                step[i] = min(max(xc[i] + alpha * d[a], lo[i]), hi[i]) - xc[i]
            gstep = _dot(gq, step)
            if gstep >= 0.0:
                break
            if gstep + 0.5 * _quad(H, step) <= _MU0 * gstep:
                moved = True
                break
            alpha *= 0.5
        if not moved:
            break
        newly_bound = False
        for i in range(n):
            xc[i] += step[i]
            s[i] += step[i]
            if free[i] and not (lo[i] < xc[i] < hi[i]):
                newly_bound = True
        if info == 1 or info == 2 or not newly_bound:
            break


@njit(cache=True)
def _finite(f, g):
    if not math.isfinite(f):
        return False
    for i in range(g.shape[0]):
        if not math.isfinite(g[i]):
            return False
    return True


def _tron_impl(evaluate, data, x, lo, hi, gtol, max_iter, cg_tol, max_cg, delta_floor):
    """Minimize in place; returns ``(status, iterations, f)``."""
    n = x.shape[0]
    for i in range(n):
        x[i] = min(max(x[i], lo[i]), hi[i])
    g = np.zeros(n)
    H = np.zeros((n, n))
    gt = np.zeros(n)
    Ht = np.zeros((n, n))
    xt = np.empty(n)
    s = np.empty(n)
    f = evaluate(x, data, g, H)
    if not _finite(f, g):
        return NONFINITE, 0, f
    delta = max(math.sqrt(_dot(g, g)), delta_floor)
    alpha = 1.0
    it = 0
    while True:
        pg = _pg_norm(x, g, lo, hi)
        if pg <= gtol:
            return CONVERGED, it, f
        if it >= max_iter:
            return MAX_ITER, it, f
        alpha = _cauchy(x, g, H, lo, hi, delta, alpha, s)
        _subspace_step(x, g, H, lo, hi, delta, s, cg_tol, max_cg)
        pred = -(_dot(g, s) + 0.5 * _quad(H, s))
        for i in range(n):
            xt[i] = min(max(x[i] + s[i], lo[i]), hi[i])
        ft = evaluate(xt, data, gt, Ht)
        it += 1
        if not _finite(ft, gt):
            return NONFINITE, it, f
        snorm = math.sqrt(_dot(s, s))
        actred = f - ft
        noise = _NOISE * max(1.0, abs(f))
        if pred <= noise and abs(actred) <= noise:
            # reductions below roundoff in f: judge by the (accurate) gradient
            ratio = 1.0 if _pg_norm(xt, gt, lo, hi) < pg else 0.0
            accept = ratio > 0.0
        else:
            ratio = actred / pred if pred > 0.0 else -1.0
            accept = ratio > _ETA0 and actred > 0.0
        if ratio < 0.25:
            delta = 0.25 * min(delta, snorm)
        elif ratio > 0.75 and snorm >= 0.99 * delta:
            delta = 2.0 * delta
        if accept:
            for i in range(n):
                x[i] = xt[i]
                g[i] = gt[i]
                for j in range(n):
                    H[i, j] = Ht[i, j]
            f = ft
        elif delta <= 1e-14 * max(1.0, math.sqrt(_dot(x, x))):
            return STALLED, it, f


_tron = njit(nogil=True, cache=True)(_tron_impl)


@njit(nogil=True, cache=True)
def _tron_range(evaluate, data, x, lo, hi, gtol, max_iter, cg_tol, max_cg,
                delta_floor, status, iters, fval, start, stop):
    for k in range(start, stop):
        st, it, f = _tron(evaluate, data[k], x[k], lo[k], hi[k], gtol, max_iter,
                          cg_tol, max_cg, delta_floor)
        status[k] = st
        iters[k] = it
        fval[k] = f


# ---------------------------------------------------------------------------
# public API


def _settings_args(settings: TronSettings):
    return (settings.gtol, settings.max_iter, settings.cg_tol, settings.max_cg,
            settings.delta_floor)


def solve_one(problem: BoxNlp, x0, settings: TronSettings | None = None) -> TronResult:
    """Solve a single box-constrained problem from ``x0`` (clipped to the box)."""
    settings = settings or TronSettings()
    x = np.array(x0, dtype=float, copy=True)
    if x.shape != (problem.n,) or not np.all(np.isfinite(x)):
        raise ValueError("x0 must be a finite vector matching the bounds")
    data = np.ascontiguousarray(problem.data, dtype=float)
    if problem.compiled:
        status, it, f = _tron(problem.evaluate, data, x, problem.lower,
                              problem.upper, *_settings_args(settings))
    else:
        # interpreted run of the same algorithm; helpers stay compiled
        status, it, f = _tron_impl(problem.evaluate, problem.data, x, problem.lower,
                                   problem.upper, *_settings_args(settings))
    return TronResult(x, int(status), int(it), float(f))


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(workers, n))
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def minimize_batch(evaluate, data, x0, lower, upper,
                   settings: TronSettings | None = None, workers: int = 1):
    """Solve ``N`` same-shaped problems given as stacked arrays.

    ``evaluate`` must be numba-jitted.  ``data`` is ``(N, P)``, ``x0``,
    ``lower``, ``upper`` are ``(N, n)``.  Problems are split into contiguous
    chunks over ``workers`` threads; each problem is solved independently,
    so results do not depend on the worker count.

    Returns ``(x, status, iterations, f)``.
    """
    settings = settings or TronSettings()
    x = np.array(x0, dtype=float, copy=True, order="C")
    data = np.ascontiguousarray(data, dtype=float)
    lower = np.ascontiguousarray(lower, dtype=float)
    upper = np.ascontiguousarray(upper, dtype=float)
    n = x.shape[0]
    status = np.zeros(n, dtype=np.int64)
    iters = np.zeros(n, dtype=np.int64)
    fval = np.zeros(n)
    if n == 0:
        return x, status, iters, fval
    args = _settings_args(settings)

    def run(chunk):
        _tron_range(evaluate, data, x, lower, upper, *args, status, iters, fval, *chunk)

    chunks = _chunks(n, workers)
    if len(chunks) == 1:
        run(chunks[0])
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            list(pool.map(run, chunks))
    return x, status, iters, fval


def solve_batch(problems: Sequence[BoxNlp], starts, settings: TronSettings | None = None,
                workers: int = 1) -> list[TronResult]:
    """Solve independent problems; results match :func:`solve_one` exactly.

    Problems sharing one compiled callback and dimension are stacked and
    sent through :func:`minimize_batch`; anything else is mapped over a
    thread pool.  A failing problem only affects its own result.
    """
    settings = settings or TronSettings()
    problems = list(problems)
    starts = [np.asarray(s, dtype=float) for s in starts]
    if len(starts) != len(problems):
        raise ValueError("one start point per problem is required")
    if not problems:
        return []
    first = problems[0]
    stackable = all(p.compiled and p.evaluate is first.evaluate and p.n == first.n
                    and np.shape(p.data) == np.shape(first.data) for p in problems)
    if stackable:
        for s in starts:
            if s.shape != (first.n,) or not np.all(np.isfinite(s)):
                raise ValueError("x0 must be a finite vector matching the bounds")
        x, status, iters, fval = minimize_batch(
            first.evaluate,
            np.stack([np.asarray(p.data, dtype=float) for p in problems]),
            np.stack(starts),
            np.stack([p.lower for p in problems]),
            np.stack([p.upper for p in problems]),
            settings, workers)
        return [TronResult(x[k], int(status[k]), int(iters[k]), float(fval[k]))
                for k in range(len(problems))]

    def one(k):
        try:
            return solve_one(problems[k], starts[k], settings)
        except Exception:  # noqa: BLE001 - isolate per-problem failures
            return TronResult(np.full(problems[k].n, np.nan), NONFINITE, 0, float("nan"))

    with ThreadPoolExecutor(max(1, workers)) as pool:
        return list(pool.map(one, range(len(problems))))
