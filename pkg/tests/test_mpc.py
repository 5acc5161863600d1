import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wakesteer.delay import InvalidInflowError, YawHistory
from wakesteer.direct import DirectConfig, maximize
from wakesteer.farm import FarmLayout, InflowState, TurbineSpec, turbine_power
from wakesteer.mpc import (HOLD, BasisParams, FarmModel, MPCConfig, MPCProblem, basis, downstream_order,
                           mpc_cost, saturate, solve_back_to_front, start_time, yaw_penalty,
                           yaw_trajectory)

SPEC = TurbineSpec()
D = SPEC.rotor_diameter
CFG = MPCConfig()
INFLOW = InflowState(10.0, 270.0, 0.07)
unit = st.floats(0, 1)


@pytest.mark.parametrize("x, expected", [(-0.5, 0), (0.5, 0.5), (2, 1)])
def test_saturate(x, expected):
    assert saturate(x, 0, 1) == expected


def test_saturate_rejects_bad_bounds():
    with pytest.raises(ValueError):
        saturate(0.0, 1, 0)


def test_start_time_examples():
    assert start_time(0.5, 0.37) == 0.37
    assert start_time(1.0, 0.9) == 0.0
    assert start_time(0.75, 0.6) == pytest.approx(0.3, abs=1e-15)


def test_basis_examples():
    assert basis(0.5, 0.3, 250.0) == 0.0
    assert basis(1.0, 0.0, 100.0) == pytest.approx(50.0, abs=1e-12)
    assert basis(0.0, 0.0, 100.0) == pytest.approx(-50.0, abs=1e-12)


@given(unit, unit)
def test_basis_starts_at_zero(o1, o2):
    assert basis(o1, o2, 0.0) == 0.0


@given(unit, unit, st.floats(0, 500))
def test_basis_odd_symmetry(o1, o2, t):
    assert basis(1 - o1, o2, t) == pytest.approx(-basis(o1, o2, t), abs=1e-12)


@given(unit, unit)
def test_basis_rate_and_amplitude_bounds(o1, o2):
    t = np.arange(0, 500.0001, 0.1)
    psi = basis(o1, o2, t)
    assert np.max(np.abs(np.diff(psi) / 0.1)) <= CFG.r_gamma_max + 1e-9
    assert np.max(np.abs(psi)) <= CFG.r_gamma_max * CFG.t_ah + 1e-12


def test_basis_params_bounds():
    with pytest.raises(ValueError):
        BasisParams(1.1, 0.5)
    with pytest.raises(ValueError):
        BasisParams(0.5, -0.1)


def test_penalty_values():
    assert yaw_penalty(0.0) >= 1 - 1e-6
    assert yaw_penalty(33.0) == pytest.approx(0.5, abs=1e-6)
    assert yaw_penalty(-33.0) == pytest.approx(0.5, abs=1e-6)
    assert yaw_penalty(40.0) <= 1e-6


@given(st.floats(-90, 90))
def test_penalty_range_and_symmetry(g):
    w = yaw_penalty(g)
    assert 0.0 <= w <= 1.0
    assert w == pytest.approx(yaw_penalty(-g), abs=1e-15)


def test_config_invariants():
    with pytest.raises(ValueError):
        MPCConfig(t_ah=600.0)
    with pytest.raises(ValueError):
        MPCConfig(r_gamma_max=0.0)
    with pytest.raises(ValueError):
        MPCConfig(gamma_min=1.0)


def lone():
    return FarmModel(FarmLayout(((0.0, 0.0),)))


def test_single_turbine_hold_cost_is_static_energy():
    j = mpc_cost(lone(), [HOLD], [0.0], None, INFLOW)
    expected = CFG.horizon_steps * CFG.dt * turbine_power(SPEC, 10.0, 0.0) * yaw_penalty(0.0)
    assert j == pytest.approx(expected, rel=1e-12)


def test_cost_linear_in_dt():
    p = MPCProblem(lone(), [0.0], None, INFLOW, CFG)
    stage = p.stage_powers([BasisParams(0.8, 0.2)])
    assert p.reference_cost([BasisParams(0.8, 0.2)]) == pytest.approx(CFG.dt * stage.sum(), rel=1e-15)
    assert (2 * CFG.dt * stage.sum()) == pytest.approx(2 * p.reference_cost([BasisParams(0.8, 0.2)]))


def test_single_turbine_grid_oracle():
    p = MPCProblem(lone(), [0.0], None, INFLOW, CFG)
    grid = np.linspace(0, 1, 21)
    vals = {(a, b): p.cost(np.array([[a, b]])) for a in grid for b in grid}
    best = max(vals, key=vals.get)
    assert best[0] == 0.5
    res = maximize(lambda o: p.cost(o[None, :]), 2, DirectConfig(max_evaluations=150))
    assert abs(res.x[0] - 0.5) <= 0.05


@given(st.lists(st.tuples(unit, unit), min_size=3, max_size=3), st.floats(-20, 20), st.floats(262, 278))
def test_compiled_cost_matches_numpy(params, y0, wd):
    model = FarmModel(FarmLayout.row(3, 5 * D))
    hist = YawHistory(3, 128)
    for k in range(30):
        hist.append(5.0 * k, [y0 * k / 29, 0.5 * y0, -0.2 * y0])
    prob = MPCProblem(model, hist.latest, hist, InflowState(9.0, wd, 0.08), CFG)
    arr = np.array(params)
    assert prob.cost(arr) == pytest.approx(prob.reference_cost(arr), rel=1e-12)


@given(st.lists(st.tuples(unit, unit), min_size=3, max_size=3), st.permutations([0, 1, 2]))
def test_cost_relabeling_invariance(params, perm):
    pos = ((0.0, 0.0), (5 * D, 40.0), (10 * D, -60.0))
    cur = np.array([5.0, -3.0, 0.0])
    a = mpc_cost(FarmModel(FarmLayout(pos)), [BasisParams(*p) for p in params], cur, None, INFLOW)
    b = mpc_cost(FarmModel(FarmLayout(tuple(pos[i] for i in perm))),
                 [BasisParams(*params[i]) for i in perm], cur[list(perm)], None, INFLOW)
    assert a == pytest.approx(b, rel=1e-12)


def test_planned_trajectory_is_rate_limited():
    traj = yaw_trajectory([0.0, 10.0], np.array([[1.0, 0.0], [0.2, 0.5]]), np.arange(0, 500, 5.0))
    assert np.all(np.abs(np.diff(traj, axis=0)) <= CFG.r_gamma_max * 5.0 + 1e-9)
    np.testing.assert_array_equal(traj[0], [0.0, 10.0])


def test_downstream_order():
    lay = FarmLayout.row(3, 5 * D)
    assert downstream_order(lay, 270.0) == [2, 1, 0]
    assert downstream_order(lay, 90.0) == [0, 1, 2]


def test_single_turbine_solve_holds():
    sol = solve_back_to_front(lone(), [0.0], None, INFLOW)
    assert abs(sol.params[0].o1 - 0.5) <= 0.05
    assert np.all(np.abs(sol.commands(5.0)) < 1.0)


def test_solve_is_at_least_hold(row3):
    model = FarmModel(row3)
    sol = solve_back_to_front(model, [0.0, 0.0, 0.0], None, INFLOW)
    assert sol.cost >= sol.hold_cost
    assert not sol.degraded
    assert sol.order == [2, 1, 0]
    cmds = sol.commands(5.0)
    assert cmds.shape == (12, 3)
    assert np.all(np.abs(np.diff(np.vstack([[0, 0, 0], cmds]), axis=0)) <= 2.5 + 1e-9)


def test_receding_horizon_converges_to_steering(row2):
    model = FarmModel(row2)
    yaws = np.zeros(2)
    hist = YawHistory(2, 512)
    hist.append(0.0, yaws)
    t = 0.0
    for _ in range(8):
        sol = solve_back_to_front(model, yaws, hist, INFLOW)
        for row in sol.commands(5.0):
            t += 5.0
            yaws = row
            hist.append(t, yaws)
    assert abs(yaws[0]) > 5.0
    assert abs(yaws[1]) <= 2.0


def test_zero_wind_estimate_fails_before_optimising(row2):
    calls = []

    def spy(f, n):
        calls.append(1)
        raise AssertionError("optimiser must not run")

    with pytest.raises(InvalidInflowError):
        solve_back_to_front(FarmModel(row2), [0, 0], None, InflowState(0.05, 270, 0.07), optimizer=spy)
    assert not calls


def test_optimizer_failure_flags_degraded(row2):
    def broken(f, n):
        raise FloatingPointError("boom")

    sol = solve_back_to_front(FarmModel(row2), [3.0, 0.0], None, INFLOW, optimizer=broken)
    assert sol.degraded
    assert all(p == HOLD for p in sol.params)
    np.testing.assert_array_equal(sol.commands(5.0), np.tile([3.0, 0.0], (12, 1)))


def test_trace_csv(tmp_path, row2):
    sol = solve_back_to_front(FarmModel(row2), [0, 0], None, INFLOW, MPCConfig(optimizer_budget=20))
    path = sol.write_trace(tmp_path / "trace.csv")
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["turbine", "o1", "o2", "cost"]
    assert len(rows) - 1 == len(sol.trace) > 0
