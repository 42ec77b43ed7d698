"""Component-based two-level ADMM for AC optimal power flow."""

__version__ = "0.1.0"

from .netdata import PowerNetwork, load_case, parse_matpower  # noqa: E402
from .driver import Solution, SolveReport, SolverConfig, evaluate_solution, solve  # noqa: E402
from .tracking import TrackingScenario, interpolate_profile, run_tracking  # noqa: E402

__all__ = [
    "PowerNetwork", "load_case", "parse_matpower",
    "Solution", "SolveReport", "SolverConfig", "evaluate_solution", "solve",
    "TrackingScenario", "interpolate_profile", "run_tracking",
]
