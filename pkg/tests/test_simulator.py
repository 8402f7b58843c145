import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_dob.analysis import compute_metrics
from robust_dob.controller import ControllerState, controller_output, controller_rhs
from robust_dob.plant import NominalModel, NormalFormPlant, RelativeDegreeVector, plant_rhs
from robust_dob.simulator import SimConfig, rk4_integrate, simulate_closed_loop, simulate_nominal, sweep_tau
from robust_dob.synthesis import GainVector, make_controller_params
from robust_dob.trajectory import read_csv, write_csv

K_REF = np.array([[3.0, 4.0, 0.0, 0.0], [0.0, 0.0, 15.0, 8.0]])


def linear_oracle(A, x0, times):
    """x(t) = V exp(Lambda t) V^-1 x0 for diagonalisable A."""
    lam, V = np.linalg.eig(A)
    c = np.linalg.solve(V, x0)
    return np.real(np.array([V @ (np.exp(lam * t) * c) for t in times]))


@pytest.mark.parametrize("lam", [-1.0, -3.0, 2.0])
def test_rk4_integrate_is_fourth_order(lam):
    errors = []
    for n in (20, 40, 80):
        y = rk4_integrate(lambda t, y: lam * y, [1.0], 0.0, 1.0 / n, n)
        errors.append(abs(y[-1, 0] - math.exp(lam)))
    ratios = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    assert all(3.8 < r < 4.2 for r in ratios)


def test_rk4_integrate_time_dependent():
    y = rk4_integrate(lambda t, y: np.array([math.cos(t)]), [0.0], 0.0, 0.01, 100)
    assert y[-1, 0] == pytest.approx(math.sin(1.0), abs=1e-10)


def test_nominal_loop_matches_linear_oracle(satellite, x0):
    plant, nominal = satellite
    traj = simulate_nominal(plant, nominal, SimConfig(t_end=10.0, x0=tuple(x0), step=1e-3, record_stride=10))
    mats = plant.matrices
    expected = linear_oracle(mats.A - mats.B @ K_REF, x0, traj.times)
    assert np.max(np.abs(traj.x - expected)) < 1e-6
    assert np.linalg.norm(traj.x[-1]) <= 0.01 * np.linalg.norm(x0)


def test_nominal_requires_step(satellite, x0):
    with pytest.raises(ValueError, match="step"):
        simulate_nominal(*satellite, SimConfig(t_end=1.0, x0=tuple(x0)))


def test_origin_is_an_equilibrium(satellite, build_params):
    plant, nominal = satellite
    traj = simulate_closed_loop(plant, nominal, build_params(tau=1e-2), SimConfig(t_end=0.05, x0=(0.0,) * 4))
    assert not traj.aborted
    assert np.all(traj.x == 0.0) and np.all(traj.u == 0.0)


# ---------------------------------------------------------------------------
# kernel against an independently assembled derivative


def toy_problem():
    rd = RelativeDegreeVector((2,))
    plant = NormalFormPlant(
        3, rd,
        lambda z, x: np.array([-z[0] + x[0]]),
        lambda z, x: np.array([math.sin(x[0]) + 0.2 * z[0] * x[1]]),
        lambda z, x, t: np.array([[1.3 + 0.2 * math.cos(t)]]),
    )
    nominal = NominalModel(
        lambda zb, x, t: np.array([[1.0]]),
        lambda zb, x, t: np.array([-math.sin(x[0]) - 0.2 * zb[0] * x[1] - 2 * x[0] - 3 * x[1]]),
    )
    params = make_controller_params(GainVector((np.array([6.0, 5.0]),)), rd, 0.05, 5.0, 20.0, 1.0)
    return plant, nominal, params


def assembled_deriv(plant, nominal, params):
    nz, nu = plant.nz, plant.rd.nu

    def f(t, s):
        z, x = s[:nz], s[nz:nz + nu]
        st_ = ControllerState(s[nz + nu:2 * nz + nu], s[2 * nz + nu:2 * nz + 2 * nu], s[2 * nz + 2 * nu:])
        y = x[plant.rd.first]
        u, _ = controller_output(st_, y, params, plant, nominal, t)
        zdot, xdot = plant_rhs(plant, z, x, u, t)
        zbd, qd, pd = controller_rhs(st_, y, u, params, plant, nominal, t)
        return np.concatenate((zdot, xdot, zbd, qd, pd))

    return f


def test_kernel_matches_assembled_rk4():
    plant, nominal, params = toy_problem()
    cfg = SimConfig(t_end=0.5, x0=(0.8, -0.4), z0=(0.3,), step=params.tau / 20)
    traj = simulate_closed_loop(plant, nominal, params, cfg)
    s0 = np.concatenate(([0.3], [0.8, -0.4], [0.0], [0.0, 0.0], [0.0, 0.0]))
    ref = rk4_integrate(assembled_deriv(plant, nominal, params), s0, 0.0, cfg.step, len(traj) - 1)
    got = np.column_stack((traj.z, traj.x, traj.zbar, traj.q, traj.p))
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_compiled_kernel_matches_assembled_rk4(satellite, build_params, x0):
    plant, nominal = satellite
    params = build_params(tau=1e-2)
    cfg = SimConfig(t_end=0.01, x0=tuple(x0), q0=tuple(x0))
    traj = simulate_closed_loop(plant, nominal, params, cfg)
    s0 = np.concatenate((x0, x0, np.zeros(4)))
    ref = rk4_integrate(assembled_deriv(plant, nominal, params), s0, 0.0, traj.step, len(traj) - 1)
    got = np.column_stack((traj.x, traj.q, traj.p))
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)


def test_closed_loop_rk4_order_with_matched_observer(satellite, build_params, x0):
    plant, nominal = satellite
    params = build_params(tau=1e-2)
    h = params.tau / 20
    finals = []
    for div in (1, 2, 4):
        step = h / div
        cfg = SimConfig(t_end=0.5, x0=tuple(x0), q0=tuple(x0), step=step, record_stride=int(round(0.5 / step)))
        traj = simulate_closed_loop(plant, nominal, params, cfg)
        assert traj.times[-1] == pytest.approx(0.5)
        finals.append(traj.x[-1])
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    assert 10.0 < e1 / e2 < 22.0


def test_zero_uncertainty_recovers_nominal(matched_satellite, example_gains, x0):
    plant, nominal = matched_satellite
    params = make_controller_params(example_gains, plant.rd, 1e-3, 25.0, 100.0, 1.0)
    cfg = SimConfig(t_end=5.0, x0=tuple(x0), q0=tuple(x0), record_stride=200)
    traj = simulate_closed_loop(plant, nominal, params, cfg)
    nom = simulate_nominal(plant, nominal, replace(cfg, step=traj.step))
    assert compute_metrics(traj, nom).recovery_error < 0.05


def test_runs_are_deterministic(satellite, build_params, x0):
    plant, nominal = satellite
    cfg = SimConfig(t_end=0.2, x0=tuple(x0), record_stride=5)
    a = simulate_closed_loop(plant, nominal, build_params(tau=1e-2), cfg)
    b = simulate_closed_loop(plant, nominal, build_params(tau=1e-2), cfg)
    np.testing.assert_array_equal(a.table(), b.table())


def test_blowup_aborts_with_partial_trajectory(satellite, build_params, x0):
    plant, nominal = satellite
    cfg = SimConfig(t_end=1.0, x0=tuple(x0), blowup=10.0, record_stride=20)
    traj = simulate_closed_loop(plant, nominal, build_params(tau=1e-2), cfg)
    assert traj.aborted and "blow-up" in traj.reason
    assert 1 <= len(traj) < 1.0 / traj.sample_interval + 1
    assert np.all(np.isfinite(traj.x))


def test_large_tau_stress_run_finishes(satellite, build_params, x0):
    plant, nominal = satellite
    traj = simulate_closed_loop(plant, nominal, build_params(tau=10.0), SimConfig(t_end=20.0, x0=tuple(x0)))
    assert traj.aborted or np.all(np.isfinite(traj.x))


def test_step_guard(satellite, build_params, x0):
    plant, nominal = satellite
    params = build_params(tau=1e-2)
    with pytest.raises(ValueError, match="tau/20"):
        simulate_closed_loop(plant, nominal, params, SimConfig(t_end=0.01, x0=tuple(x0), step=1e-3))
    traj = simulate_closed_loop(
        plant, nominal, params, SimConfig(t_end=0.01, x0=tuple(x0), step=1e-3, allow_coarse_step=True)
    )
    assert len(traj) == 11


@pytest.mark.parametrize("t_end,stride,expected", [(0.0, 1, 1), (0.01, 20, 11), (0.01, 1, 201), (0.0105, 20, 11)])
def test_sample_count(satellite, build_params, x0, t_end, stride, expected):
    plant, nominal = satellite
    cfg = SimConfig(t_end=t_end, x0=tuple(x0), record_stride=stride)
    traj = simulate_closed_loop(plant, nominal, build_params(tau=1e-3), cfg)
    assert len(traj) == expected
    np.testing.assert_allclose(np.diff(traj.times), traj.sample_interval)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(t_end=-1.0, x0=(0.0,))
    with pytest.raises(ValueError):
        SimConfig(t_end=1.0, x0=(0.0,), record_stride=0)
    with pytest.raises(ValueError):
        SimConfig(t_end=1.0, x0=(0.0,), step=0.0)


def test_wrong_initial_state_length(satellite, build_params):
    with pytest.raises(ValueError, match="x0"):
        simulate_closed_loop(*satellite, build_params(), SimConfig(t_end=0.0, x0=(1.0, 2.0)))


def test_csv_round_trip(tmp_path, satellite, build_params, x0):
    plant, nominal = satellite
    traj = simulate_closed_loop(plant, nominal, build_params(tau=1e-2), SimConfig(t_end=0.05, x0=tuple(x0)))
    path = write_csv(traj, tmp_path / "run.csv")
    back = read_csv(path)
    np.testing.assert_array_equal(back.table(), traj.table())
    assert back.columns() == traj.columns()
    assert write_csv(back, tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_single_tau_sweep_equals_simulate(satellite, build_params, x0):
    plant, nominal = satellite
    params = build_params(tau=1e-2)
    cfg = SimConfig(t_end=0.5, x0=tuple(x0))
    rep = sweep_tau(plant, nominal, params, cfg, [1e-2], t_ss=0.4)
    traj = simulate_closed_loop(plant, nominal, params, cfg)
    nom = simulate_nominal(plant, nominal, replace(cfg, step=traj.step))
    m = compute_metrics(traj, nom, 0.4)
    (e,) = rep.entries
    assert e.error == ""
    assert e.ultimate_bound == m.ultimate_bound
    assert e.recovery_error == m.recovery_error
    assert e.effort_l1 == m.effort_l1


def test_sweep_rejects_ascending_taus(satellite, build_params, x0):
    with pytest.raises(ValueError, match="descending"):
        sweep_tau(*satellite, build_params(), SimConfig(t_end=0.1, x0=tuple(x0)), [1e-3, 1e-2])


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_nominal_toy_loop_stays_finite(a, b):
    plant, nominal, _ = toy_problem()
    traj = simulate_nominal(plant, nominal, SimConfig(t_end=2.0, x0=(a, b), z0=(0.0,), step=0.01))
    assert not traj.aborted
    assert np.linalg.norm(traj.x[-1]) <= np.linalg.norm([a, b]) + 1e-12
