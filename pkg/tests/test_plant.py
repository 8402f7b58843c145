import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_dob.plant import (
    NominalModel,
    NormalFormPlant,
    RelativeDegreeVector,
    SingularGainError,
    build_structural_matrices,
    check_invertible,
    plant_rhs,
)
from robust_dob.satellite import (
    SATELLITE_X0,
    SatelliteParams,
    constant_gain_nominal,
    rotation,
    satellite_gain_samples,
    satellite_plant,
    sinusoid,
)


@pytest.mark.parametrize("degrees", [(1,), (2, 2), (3, 1, 2)])
def test_structural_matrices_are_integrator_chains(degrees):
    rd = RelativeDegreeVector(degrees)
    mats = build_structural_matrices(rd)
    assert mats.A.shape == (rd.nu, rd.nu)
    assert mats.B.shape == (rd.nu, rd.m) and mats.C.shape == (rd.m, rd.nu)
    # C A^(k) B = 0 for k < nu_i - 1 and C_i A^(nu_i - 1) B = e_i
    for i, d in enumerate(degrees):
        for k in range(d):
            row = mats.C[i] @ np.linalg.matrix_power(mats.A, k) @ mats.B
            expected = np.eye(rd.m)[i] if k == d - 1 else np.zeros(rd.m)
            np.testing.assert_array_equal(row, expected)
    assert np.all(np.linalg.matrix_power(mats.A, max(degrees)) == 0)


def test_relative_degree_bookkeeping():
    rd = RelativeDegreeVector((3, 1, 2))
    assert rd.m == 3 and rd.nu == 6
    np.testing.assert_array_equal(rd.first, [0, 3, 4])
    np.testing.assert_array_equal(rd.last, [2, 3, 5])
    with pytest.raises(ValueError):
        RelativeDegreeVector((2, 0))


def test_plant_rhs_hand_computed():
    rd = RelativeDegreeVector((2,))
    plant = NormalFormPlant(
        3, rd,
        lambda z, x: -z + x[:1],
        lambda z, x: np.array([x[0] * z[0]]),
        lambda z, x, t: np.array([[2.0 + t]]),
    )
    zdot, xdot = plant_rhs(plant, np.array([0.5]), np.array([2.0, -1.0]), np.array([3.0]), 1.0)
    np.testing.assert_allclose(zdot, [1.5])
    np.testing.assert_allclose(xdot, [-1.0, 2.0 * 0.5 + 3.0 * 3.0])


def test_plant_rhs_dimension_errors():
    plant, _ = satellite_plant()
    with pytest.raises(ValueError, match="dimension"):
        plant_rhs(plant, np.empty(0), np.zeros(3), np.zeros(2), 0.0)


def test_check_invertible():
    check_invertible(np.eye(2))
    with pytest.raises(SingularGainError):
        check_invertible(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularGainError):
        check_invertible(np.array([[np.nan, 0.0], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# satellite


def polar_rhs(r, v, psi, omega, u, theta, m, k):
    ur, upsi = rotation(theta) @ u
    return np.array([v, r * omega**2 - k / r**2 + ur / m, omega, -2 * v * omega / r + upsi / (m * r)])


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-1.0, 2.0), st.floats(-3.0, 3.0), st.floats(-2.0, 2.0), st.floats(-1.0, 1.0),
    st.floats(-5.0, 5.0), st.floats(-5.0, 5.0), st.floats(0.0, 20.0),
)
def test_satellite_matches_polar_model(x11, x12, x21, x22, u1, u2, t):
    sp = SatelliteParams()
    plant, _ = satellite_plant(sp)
    rs, ws = sp.r_star, sp.omega_star
    x = np.array([x11, x12, x21, x22])
    u = np.array([u1, u2])
    r, v, omega = x11 + rs, x12, x22 / rs + ws
    psi = x21 / rs + ws * t
    theta = sp.theta_known(t) + sp.theta_unknown(t)
    d = polar_rhs(r, v, psi, omega, u, theta, sp.m_true, sp.k)
    expected = np.array([d[0], d[1], rs * (d[2] - ws), rs * d[3]])
    _, xdot = plant_rhs(plant, np.empty(0), x, u, t)
    np.testing.assert_allclose(xdot, expected, rtol=1e-12, atol=1e-12)


def test_satellite_orbit_is_equilibrium():
    plant, nominal = satellite_plant()
    zero = np.zeros(4)
    np.testing.assert_allclose(plant.F(np.empty(0), zero), 0.0, atol=1e-14)
    np.testing.assert_allclose(nominal.Ur(np.empty(0), zero, 0.3), 0.0, atol=1e-14)


def test_satellite_nominal_gain_uses_known_attitude_only():
    sp = SatelliteParams()
    plant, nominal = satellite_plant(sp)
    x = np.array(SATELLITE_X0)
    t = 0.37
    rho = sp.r_star / (x[0] + sp.r_star)
    expected = np.diag([1 / sp.m_nominal, rho / sp.m_nominal]) @ rotation(sp.theta_known(t))
    np.testing.assert_allclose(nominal.Gbar(np.empty(0), x, t), expected, rtol=1e-15)
    true = np.diag([1 / sp.m_true, rho / sp.m_true]) @ rotation(sp.theta_known(t) + sp.theta_unknown(t))
    np.testing.assert_allclose(plant.G(np.empty(0), x, t), true, rtol=1e-15)


def test_satellite_feedback_linearises_nominal_loop():
    # with G = Gbar, Ur makes xdot = (A - B K) x
    plant, nominal = satellite_plant()
    mats = build_structural_matrices(plant.rd)
    K = np.array([[3.0, 4.0, 0.0, 0.0], [0.0, 0.0, 15.0, 8.0]])
    x = np.array([0.3, -0.2, 0.5, 0.1])
    t = 1.1
    u = nominal.Ur(np.empty(0), x, t)
    xdot = mats.A @ x + mats.B @ (plant.F(np.empty(0), x) + nominal.Gbar(np.empty(0), x, t) @ u)
    np.testing.assert_allclose(xdot, (mats.A - mats.B @ K) @ x, atol=1e-13)


def test_satellite_gain_singular_at_origin_radius():
    plant, _ = satellite_plant()
    with pytest.raises(SingularGainError):
        plant.G(np.empty(0), np.array([-1.5, 0.0, 0.0, 0.0]), 0.0)


def test_satellite_params_validation():
    with pytest.raises(ValueError, match="k="):
        SatelliteParams(omega_star=2.0)
    with pytest.raises(ValueError, match="theta_unknown"):
        SatelliteParams(theta_unknown=sinusoid(1.0, 4 * math.pi))
    with pytest.raises(ValueError):
        SatelliteParams(m_true=-1.0)


def test_satellite_plants_are_shared_for_equal_parameters():
    assert satellite_plant()[0] is satellite_plant(SatelliteParams())[0]
    assert sinusoid(1.0, 2.0) is sinusoid(1.0, 2.0)


def test_gain_samples_freeze_unknown_attitude():
    sp = SatelliteParams()
    lo, mid, hi = satellite_gain_samples(sp)
    x = np.zeros(4)
    t = 0.2
    c = sp.c_theta_bound
    np.testing.assert_allclose(mid(np.empty(0), x, t), np.diag([1 / 1.2, 1 / 1.2]) @ rotation(sp.theta_known(t)))
    np.testing.assert_allclose(hi(np.empty(0), x, t), np.diag([1 / 1.2, 1 / 1.2]) @ rotation(sp.theta_known(t) + c))
    np.testing.assert_allclose(lo(np.empty(0), x, t), np.diag([1 / 1.2, 1 / 1.2]) @ rotation(sp.theta_known(t) - c))


def test_constant_gain_nominal():
    nominal = constant_gain_nominal()
    x = np.array(SATELLITE_X0)
    np.testing.assert_array_equal(nominal.Gbar(np.empty(0), x, 0.5), np.eye(2) / 1.2)
    plant, _ = satellite_plant()
    K = np.array([[3.0, 4.0, 0.0, 0.0], [0.0, 0.0, 15.0, 8.0]])
    np.testing.assert_allclose(nominal.Ur(np.empty(0), x, 0.5), 1.2 * (-plant.F(np.empty(0), x) - K @ x))


def test_nominal_model_is_plain_data():
    nm = NominalModel(lambda zb, x, t: np.eye(1), lambda zb, x, t: np.zeros(1))
    assert nm.Gbar(None, None, 0.0).shape == (1, 1)
