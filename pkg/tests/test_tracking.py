import numpy as np
import pytest

from gridadmm.driver import SolverConfig
from gridadmm.tracking import (RampInfeasibleError, TrackingScenario, interpolate_profile,
                               ramp_window, run_tracking, sinusoidal_profile,
                               write_periods_csv)

TOY = SolverConfig(rho_pq=400.0, rho_va=4000.0, beta0=1e7, workers=1)


def test_ramp_window_example(two_bus):
    net = two_bus.replace(pmin=np.array([0.0]), pmax=np.array([2.0]))
    lo, hi = ramp_window(net, np.array([1.0]), 0.02)
    np.testing.assert_allclose([lo[0], hi[0]], [0.96, 1.04])


def test_ramp_window_intersects_original_bounds(two_bus):
    net = two_bus.replace(pmin=np.array([0.5]), pmax=np.array([2.0]))
    lo, hi = ramp_window(net, np.array([0.51]), 0.02)
    assert lo[0] == 0.5 and hi[0] == pytest.approx(0.55)


def test_ramp_window_empty_is_reported(two_bus):
    net = two_bus.replace(pmin=np.array([0.5]), pmax=np.array([2.0]))
    with pytest.raises(RampInfeasibleError) as err:
        ramp_window(net, np.array([0.1]), 0.02, period=4)
    assert err.value.generators == [0] and err.value.period == 4


def test_interpolate_midpoint():
    m = interpolate_profile([100.0, 106.0], 1.0, n_steps=60)
    assert m[0] == 1.0
    assert m[30] == pytest.approx(1.03)
    assert len(m) == 60


def test_interpolate_constant():
    np.testing.assert_array_equal(interpolate_profile([7.0, 7.0, 7.0], 5.0), 1.0)


def test_interpolate_two_hour_ramp():
    # 100 -> 105 -> 103 over two hours, every 30 minutes
    m = interpolate_profile([100.0, 105.0, 103.0], 30.0)
    np.testing.assert_allclose(m, [1.0, 1.025, 1.05, 1.04, 1.03])


def test_interpolate_rejects_bad_input():
    with pytest.raises(ValueError):
        interpolate_profile([100.0])
    with pytest.raises(ValueError):
        interpolate_profile([100.0, 0.0])
    with pytest.raises(ValueError):
        interpolate_profile([100.0, 101.0], 1.0, n_steps=62)


def test_sinusoidal_profile():
    m = sinusoidal_profile(10)
    assert m[0] == 1.0
    assert np.max(np.abs(m - 1.0)) <= 0.02
    assert m[2] > 1.0 > m[7]


def test_scenario_validation():
    with pytest.raises(ValueError):
        TrackingScenario(np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        TrackingScenario(np.array([]))
    sc = TrackingScenario([1.0, 1.01])
    assert sc.periods == 2 and not sc.per_bus


def test_scenario_from_uniform_csv(tmp_path):
    p = tmp_path / "profile.csv"
    p.write_text("period,multiplier\n2,1.01\n1,1.0\n3,0.99\n")
    sc = TrackingScenario.from_csv(p)
    np.testing.assert_array_equal(sc.multipliers, [1.0, 1.01, 0.99])


def test_scenario_from_per_bus_csv(tmp_path, two_bus):
    p = tmp_path / "profile.csv"
    p.write_text("period,bus,multiplier\n1,2,1.0\n2,2,1.05\n")
    sc = TrackingScenario.from_csv(p, two_bus)
    assert sc.per_bus
    np.testing.assert_array_equal(sc.multipliers, [[1.0, 1.0], [1.0, 1.05]])
    p.write_text("period,bus,multiplier\n1,9,1.0\n")
    with pytest.raises(ValueError, match="unknown bus"):
        TrackingScenario.from_csv(p, two_bus)


def test_scenario_bad_header(tmp_path):
    p = tmp_path / "profile.csv"
    p.write_text("t,value\n1,1.0\n")
    with pytest.raises(ValueError, match="expected header"):
        TrackingScenario.from_csv(p)


def test_constant_profile_second_period_is_cheap(two_bus):
    res = run_tracking(two_bus, TOY, TrackingScenario([1.0, 1.0]))
    its = res.inner_iterations
    assert res.converged
    assert its[1] <= 0.1 * its[0]


def test_ramp_limits_hold_and_warm_beats_cold(two_bus):
    mult = [1.0, 1.01, 1.02, 1.01]
    res = run_tracking(two_bus, TOY, TrackingScenario(mult, ramp_frac=0.05))
    assert res.converged
    pg = np.array([r.solution.pg for r in res.reports])
    assert np.all(np.abs(np.diff(pg, axis=0)) <= 0.05 * two_bus.pmax + 1e-8)
    cold = [run_tracking(net, TOY, TrackingScenario([1.0])).inner_iterations[0]
            for net in res.networks[1:]]
    assert res.inner_iterations[1:].sum() < sum(cold)


def test_periods_csv(tmp_path, two_bus):
    res = run_tracking(two_bus, TOY, TrackingScenario([1.0, 1.0]))
    rows = res.rows([res.reports[0].objective, None])
    assert rows[0]["gap"] == 0.0 and np.isnan(rows[1]["gap"])
    path = tmp_path / "periods.csv"
    write_periods_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "period,inner_iters,time_s,viol_inf,gap"
    assert len(lines) == 3
