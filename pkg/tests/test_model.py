import math
import time

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.interpolate import PchipInterpolator

from battfd.errors import ConfigurationError, OCPDomainError, StabilityError
from battfd.model import (
    average_temperature,
    build_electrochemical,
    build_state_space,
    build_thermal,
    heat_generation,
    linearize_voltage,
    open_circuit_voltage,
    terminal_voltage,
    uniform_concentration,
    uniform_state,
)
from battfd.params import CellParams


def test_two_node_diffusion_stencil_matches_hand_values():
    # dx = 5e-6, gamma1 = 1e-14 / 25e-12 = 4e-4
    p = CellParams(N=2, D=1e-14, X=1e-5, dt=1.0)
    A1, B1 = build_electrochemical(p)
    expected = np.array([[1 - 8e-4, 8e-4], [2e-4, 1 - 2e-4]])
    np.testing.assert_allclose(A1, expected, rtol=0, atol=1e-15)
    # surface ghost node: -(1 + 1/2) / (a_a F A_a L_a dx)
    a_a = 3 * p.eps_a / 1e-5
    beta = -1.5 / (a_a * p.F * p.A_a * p.L_a * 5e-6)
    assert B1[0] == 0.0
    assert B1[1] == pytest.approx(beta, rel=1e-14)


def test_two_node_thermal_stencil_matches_hand_values():
    p = CellParams(M=2)
    dy = p.Y / 2
    g = p.k_th / (p.rho * p.C_p * dy**2)
    bi = dy * p.h_conv / p.k_th
    A2, B2, C2 = build_thermal(p)
    expected = np.eye(2) + g * np.array([[-1.5, 1.5], [0.75, -0.75 - 1.25 * bi]])
    np.testing.assert_allclose(A2, expected, rtol=1e-14)
    np.testing.assert_allclose(B2, [0.0, g * 1.25 * bi], rtol=1e-14)
    np.testing.assert_array_equal(C2, [0.0, 1.0])


def test_gamma1_uses_identified_diffusivity(params):
    A1, _ = build_electrochemical(params)
    gamma1 = 1.022e-14 / (params.X / params.N) ** 2
    assert A1[0, 1] == pytest.approx(2 * gamma1 * params.dt, rel=1e-14)


def test_convection_enters_through_h_over_k():
    base = CellParams()
    scaled = base.replace(h_conv=2 * base.h_conv, k_th=2 * base.k_th)
    _, B_base, _ = build_thermal(base)
    _, B_scaled, _ = build_thermal(scaled)
    # gamma2 doubles with k, the Biot ratio is unchanged
    assert B_scaled[-1] == pytest.approx(2 * B_base[-1], rel=1e-12)


def test_uniform_profiles_are_equilibria(params):
    A1, _ = build_electrochemical(params)
    z = np.full(params.N, 12345.0)
    np.testing.assert_allclose(A1 @ z, z, rtol=1e-14)
    A2, B2, _ = build_thermal(params)
    T = np.full(params.M, 301.0)
    np.testing.assert_allclose(A2 @ T + B2 * 301.0, T, rtol=1e-14)


def test_stability_guard_names_ratio():
    with pytest.raises(StabilityError) as err:
        build_electrochemical(CellParams(N=10, D=1e-12))
    assert err.value.ratio > 1


def test_node_count_below_two_rejected():
    with pytest.raises(ConfigurationError):
        CellParams(N=1)


def test_mass_conservation_and_runtime():
    # dt = 0.5 s keeps the ten-node thermal stencil inside the Euler guard
    p = CellParams(N=10, M=10, dt=0.5)
    A1, _ = build_electrochemical(p)
    A2, B2, _ = build_thermal(p)
    w = p.concentration_weights
    z = np.linspace(5000, 20000, 10)
    T = np.linspace(290, 320, 10)
    m0 = w @ z
    t0 = time.perf_counter()
    for _ in range(10_000):
        z = A1 @ z
        T = A2 @ T + B2 * 298.15
    elapsed = time.perf_counter() - t0
    assert abs(w @ z - m0) / m0 <= 1e-10
    assert elapsed < 5.0
    assert np.max(np.abs(T - 298.15)) < 1.0


def test_thermal_relaxation_is_monotone(params):
    A2, B2, _ = build_thermal(params)
    T = np.array([330.0, 320.0, 305.0, 299.0, 280.0])
    dist = [np.max(np.abs(T - 298.15))]
    for _ in range(20_000):
        T = A2 @ T + B2 * 298.15
        dist.append(np.max(np.abs(T - 298.15)))
    assert all(b <= a + 1e-12 for a, b in zip(dist, dist[1:]))
    assert dist[-1] < 1e-3


@given(st.sampled_from([2, 3, 5, 10, 20]), st.floats(0.05, 1.0))
def test_spectral_radius_at_most_one(n, dt):
    p = CellParams(N=n, M=n, dt=dt)
    try:
        A1, _ = build_electrochemical(p)
        A2, _, _ = build_thermal(p)
    except StabilityError:
        assume(False)
    assert np.max(np.abs(np.linalg.eigvals(A1))) <= 1 + 1e-12
    assert np.max(np.abs(np.linalg.eigvals(A2))) <= 1 + 1e-12


def test_zero_current_voltage_is_open_circuit(params):
    z = uniform_state(params, 0.5).z1
    assert terminal_voltage(z, 0.0, 298.15, params) == open_circuit_voltage(z[-1], params)


@given(st.floats(0.05, 0.95), st.floats(-4, 4), st.floats(0.01, 1.0))
def test_voltage_strictly_decreasing_in_current(soc, I, dI):
    p = CellParams()
    z = np.full(p.N, uniform_concentration(p, soc))
    assert terminal_voltage(z, I + dI, 300.0, p) < terminal_voltage(z, I, 300.0, p)


def _independent_voltage(p, c, I, T):
    ua, uc = _table("ocp_anode.csv"), _table("ocp_cathode.csv")
    Ua = PchipInterpolator(ua[:, 0], ua[:, 1])
    Uc = PchipInterpolator(uc[:, 0], uc[:, 1])
    eps_a_A_L = p.eps_a * p.A_a * p.L_a
    eps_c_A_L = p.eps_c * p.A_c * p.L_c
    y = (-(eps_a_A_L / eps_c_A_L) * c + p.m_Li / eps_c_A_L) / p.c_max_c
    a_a, a_c = 3 * p.eps_a / p.X, 3 * p.eps_c / p.X
    eta_c = p.R_gas * T / (p.alpha_c * p.F) * math.asinh(I / (2 * a_c * p.A_c * p.L_c * p.i0_c))
    eta_a = p.R_gas * T / (p.alpha_a * p.F) * math.asinh(I / (2 * a_a * p.A_a * p.L_a * p.i0_a))
    return float(Uc(y)) + float(Ua(c / p.c_max_a)) - p.R_b * I - eta_c - eta_a


def _table(name):
    from importlib import resources

    text = resources.files("battfd.data").joinpath(name).read_text()
    rows = [ln.split(",") for ln in text.splitlines() if ln[:1].isdigit() or ln[:1] in "-."]
    return np.array(rows, dtype=float)


@pytest.mark.parametrize("I", [-4.0, -1.0, 0.0, 2.5])
def test_voltage_matches_straight_line_evaluation(params, I):
    z = uniform_state(params, 0.5).z1
    got = terminal_voltage(z, I, 303.0, params)
    assert got == pytest.approx(_independent_voltage(params, z[-1], I, 303.0), abs=1e-12)


def test_heat_zero_current_and_ohmic_part(params):
    z = uniform_state(params, 0.5).z1
    V0 = terminal_voltage(z, 0.0, 298.15, params)
    assert heat_generation(z, 0.0, V0, params) == 0.0
    flat = params.replace(i0_a=1e12, i0_c=1e12)  # kinetics negligible
    V = terminal_voltage(z, -4.0, 298.15, flat)
    assert heat_generation(z, -4.0, V, flat) == pytest.approx(16 * 0.006, rel=1e-6)
    assert 16 * params.R_b == pytest.approx(0.096)


@given(st.floats(-4, 4), st.floats(0.1, 0.9))
def test_heat_nonnegative_with_model_voltage(I, soc):
    p = CellParams()
    z = np.full(p.N, uniform_concentration(p, soc))
    assert heat_generation(z, I, terminal_voltage(z, I, 310.0, p), p) >= -1e-15


def test_flat_maps_linearization_is_pure_resistance():
    from battfd.params import OCPMap

    flat = CellParams(ocp_anode=OCPMap([0, 1], [-0.1, -0.1]), ocp_cathode=OCPMap([0, 1], [4.0, 4.0]))
    lin = linearize_voltage(flat, uniform_state(flat, 0.5).z1, 0.0, 298.15)
    np.testing.assert_array_equal(lin.C1, np.zeros(flat.N))
    RT = flat.R_gas * 298.15
    expected = (
        -flat.R_b
        - (RT / (flat.alpha_c * flat.F)) / (2 * flat.a_c * flat.A_c * flat.L_c * flat.i0_c)
        - (RT / (flat.alpha_a * flat.F)) / (2 * flat.a_a * flat.A_a * flat.L_a * flat.i0_a)
    )
    assert lin.D1 == pytest.approx(expected, rel=1e-13)


def test_linearization_matches_central_differences(params, rng):
    for _ in range(10):
        soc = rng.uniform(0.1, 0.9)
        I = rng.uniform(-4, 4)
        T = rng.uniform(285, 320)
        z = np.full(params.N, uniform_concentration(params, soc))
        lin = linearize_voltage(params, z, I, T)
        assert np.all(lin.C1[:-1] == 0)
        if lin.at_knot:
            continue

        def fd_c(h):
            zp, zm = z.copy(), z.copy()
            zp[-1] += h
            zm[-1] -= h
            return (terminal_voltage(zp, I, T, params) - terminal_voltage(zm, I, T, params)) / (2 * h)

        errs = [abs(fd_c(f * z[-1]) / lin.C1[-1] - 1) for f in (1e-4, 1e-5, 1e-6)]
        assert min(errs) <= 1e-6
        fd_I = (terminal_voltage(z, I + 1e-4, T, params) - terminal_voltage(z, I - 1e-4, T, params)) / 2e-4
        assert lin.D1 == pytest.approx(fd_I, rel=1e-6)


def test_affine_offset_reproduces_operating_voltage(params):
    ss = build_state_space(params, soc_op=0.4, I_op=-2.0, T_op=300.0)
    z = np.full(params.N, uniform_concentration(params, 0.4))
    assert ss.C1 @ z + ss.D1 * -2.0 + ss.v_offset == pytest.approx(terminal_voltage(z, -2.0, 300.0, params), abs=1e-12)


@given(st.lists(st.floats(250, 350), min_size=5, max_size=5))
def test_C2_selects_surface_node(z2):
    _, _, C2 = build_thermal(CellParams())
    assert C2 @ np.array(z2) == z2[-1]


def test_average_temperature_of_uniform_field(params):
    assert average_temperature(np.full(params.M, 310.0), params) == pytest.approx(310.0)


def test_ocp_domain_error_names_electrode(params):
    z = np.full(params.N, params.c_max_a * 1.001)
    with pytest.raises(OCPDomainError) as err:
        terminal_voltage(z, 0.0, 298.15, params)
    assert err.value.electrode in ("anode", "cathode")
