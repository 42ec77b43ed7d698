"""Multi-period tracking with warm starts and generator ramp limits.

Each period scales the loads, narrows every generator's real-power window
to ``p_prev +- ramp_frac * pmax`` (inside its original bounds) and restarts
the two-level solve from the previous period's complete iterate.  Only the
outer penalty is reset, to ``beta0``.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .decomp import build_layout
from .driver import SolveReport, SolverConfig, solve
from .netdata import PowerNetwork


class RampInfeasibleError(ValueError):
    """The ramp window misses a generator's original bounds."""

    def __init__(self, generators, period):
        self.generators = list(map(int, generators))
        self.period = period
        super().__init__(f"empty ramp window in period {period} for generators "
                         f"{self.generators}")


@dataclass(frozen=True)
class TrackingScenario:
    """Load multipliers per period, either ``(T,)`` uniform or ``(T, n_bus)``."""

    multipliers: np.ndarray
    ramp_frac: float = 0.02

    def __post_init__(self):
        m = np.asarray(self.multipliers, dtype=float)
        if m.ndim not in (1, 2) or m.shape[0] < 1:
            raise ValueError("need at least one period of multipliers")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValueError("load multipliers must be positive")
        if not self.ramp_frac >= 0:
            raise ValueError("ramp fraction must be non-negative")
        object.__setattr__(self, "multipliers", m)

    @property
    def periods(self) -> int:
        return self.multipliers.shape[0]

    @property
    def per_bus(self) -> bool:
        return self.multipliers.ndim == 2

    def multiplier(self, t: int):
        return self.multipliers[t]

    @classmethod
    def from_csv(cls, path, network: PowerNetwork | None = None,
                 ramp_frac: float = 0.02) -> "TrackingScenario":
        """Read ``period,multiplier`` or ``period,bus,multiplier`` rows.

        Per-bus files need ``network`` to map bus ids; buses absent from a
        period keep multiplier 1.  Periods are sorted by their label.
        """
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = [c.strip() for c in (reader.fieldnames or [])]
            rows = [{k.strip(): v for k, v in r.items()} for r in reader]
        if cols[:2] == ["period", "multiplier"] and len(cols) == 2:
            pairs = sorted((int(r["period"]), float(r["multiplier"])) for r in rows)
            if len({p for p, _ in pairs}) != len(pairs):
                raise ValueError(f"{path}: repeated period")
            return cls(np.array([m for _, m in pairs]), ramp_frac)
        if cols == ["period", "bus", "multiplier"]:
            if network is None:
                raise ValueError("per-bus profiles need the network")
            periods = sorted({int(r["period"]) for r in rows})
            slot = {p: k for k, p in enumerate(periods)}
            mult = np.ones((len(periods), network.n_bus))
            for r in rows:
                bus = int(r["bus"])
                if bus not in network.bus_index:
                    raise ValueError(f"{path}: unknown bus {bus}")
                mult[slot[int(r["period"])], network.bus_index[bus]] = float(r["multiplier"])
            return cls(mult, ramp_frac)
        raise ValueError(f"{path}: expected header period,multiplier or "
                         f"period,bus,multiplier, got {','.join(cols)}")


def interpolate_profile(hourly: Sequence[float], minutes_per_step: float = 1.0,
                        n_steps: Optional[int] = None) -> np.ndarray:
    """Linear interpolation of hourly demand onto a finer step.

    Step ``k`` sits ``k * minutes_per_step`` minutes after the first hourly
    point.  By default the steps cover the whole hourly horizon.  The result
    is normalized so the first step is 1.
    """
    demand = np.asarray(hourly, dtype=float)
    if demand.ndim != 1 or demand.size < 2:
        raise ValueError("need at least two hourly values")
    if np.any(~(demand > 0)):
        raise ValueError("demand values must be positive")
    if not minutes_per_step > 0:
        raise ValueError("minutes_per_step must be positive")
    horizon = 60.0 * (demand.size - 1)
    if n_steps is None:
        n_steps = int(np.floor(horizon / minutes_per_step + 1e-9)) + 1
    t = minutes_per_step * np.arange(n_steps)
    if t[-1] > horizon + 1e-9:
        raise ValueError("requested steps run past the last hourly value")
    series = np.interp(t, 60.0 * np.arange(demand.size), demand)
    return series / series[0]


def sinusoidal_profile(periods: int, amplitude: float = 0.02, cycle: float = 10.0) -> np.ndarray:
    """``1 + amplitude * sin(2 pi t / cycle)`` for ``t = 0 .. periods-1``."""
    t = np.arange(periods)
    return 1.0 + amplitude * np.sin(2.0 * np.pi * t / cycle)


def ramp_window(network: PowerNetwork, p_prev, ramp_frac: float, period: int = 0):
    """Real-power bounds of the next period, intersected with ``network``'s."""
    r = ramp_frac * network.pmax
    lo = np.maximum(network.pmin, p_prev - r)
    hi = np.minimum(network.pmax, p_prev + r)
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        raise RampInfeasibleError(bad, period)
    return lo, hi


@dataclass
class TrackingResult:
    reports: list[SolveReport] = field(default_factory=list)
    networks: list[PowerNetwork] = field(default_factory=list)
    times: list[float] = field(default_factory=list)

    @property
    def inner_iterations(self) -> np.ndarray:
        return np.array([r.inner_iterations for r in self.reports])

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.reports)

    def rows(self, references: Sequence[float] | None = None) -> list[dict]:
        """Per-period summary for ``periods.csv``; gap is NaN without references."""
        out = []
        for t, rep in enumerate(self.reports):
            gap = float("nan")
            if references is not None and references[t] is not None:
                gap = abs(rep.objective - references[t]) / references[t]
            out.append({"period": t + 1, "inner_iters": rep.inner_iterations,
                        "time_s": self.times[t], "viol_inf": rep.metrics["c_inf"],
                        "gap": gap})
        return out


def run_tracking(network: PowerNetwork, config: SolverConfig | None,
                 scenario: TrackingScenario, callback=None) -> TrackingResult:
    """Solve every period in order, warm starting from the previous one.

    ``callback(t, report)`` is invoked after each period if given.
    """
    config = config or SolverConfig()
    layout = build_layout(network)
    result = TrackingResult()
    prev = None
    for t in range(scenario.periods):
        net = network.scale_loads(scenario.multiplier(t))
        if prev is None:
            init = None
        else:
            lo, hi = ramp_window(network, prev.solution.pg, scenario.ramp_frac, t + 1)
            net = net.replace(pmin=lo, pmax=hi)
            init = prev.state.copy()
            init.beta = config.beta0
        t0 = time.perf_counter()
        rep = solve(net, config, init=init, layout=layout)
        result.times.append(time.perf_counter() - t0)
        result.reports.append(rep)
        result.networks.append(net)
        if callback is not None:
            callback(t, rep)
        prev = rep
    return result


def write_periods_csv(path: str | Path, rows: list[dict]):
    cols = ("period", "inner_iters", "time_s", "viol_inf", "gap")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r["period"], r["inner_iters"], repr(float(r["time_s"])),
                        repr(float(r["viol_inf"])), repr(float(r["gap"]))])
