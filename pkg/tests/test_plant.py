import math

import numpy as np
import pytest

from battfd.errors import ConfigurationError, SimulationDivergedError
from battfd.model import (
    build_electrochemical,
    build_thermal,
    heat_generation,
    state_of_charge,
    terminal_voltage,
    uniform_state,
)
from battfd.params import CellParams
from battfd.plant import (
    CycleRecord,
    FaultConfig,
    Plant,
    PlantState,
    Protocol,
    ThermalFault,
    ThermalUncertainty,
    UncertaintyConfig,
    VoltageFault,
    VoltageUncertainty,
    run_cycle,
    step,
    thermal_fault_power,
    voltage_fault_signal,
)

NOISY = UncertaintyConfig(
    voltage=VoltageUncertainty(noise_std=5e-4, bias=2e-3, smooth_std=1e-3),
    thermal=ThermalUncertainty(noise_std=0.01, smooth_std=0.01, convection_factor=1.1, reversible_heat=0.2),
    pattern_seed=7,
)
CASE1 = VoltageFault(a1=0.003, a2=0.0075, t_on=300.0, t_off=900.0)


def test_rest_at_ambient_is_an_equilibrium(params):
    T_inf = 298.15
    s = uniform_state(params, soc=0.4, T=T_inf)
    plant = Plant(params)
    state, first = plant.step(s, 0.0, T_inf)
    for _ in range(50):
        state, sample = plant.step(state, 0.0, T_inf)
        assert sample.V_meas == pytest.approx(first.V_meas, abs=1e-12)
        assert sample.T_meas == pytest.approx(T_inf, abs=1e-12)
    np.testing.assert_allclose(state.z1, s.z1, atol=1e-9)
    np.testing.assert_allclose(state.z2, s.z2, atol=1e-12)


def test_thermal_fault_adds_uniform_forcing(params):
    s = uniform_state(params, soc=0.3)
    fault = FaultConfig(thermal=ThermalFault(power=310.0, t_on=0.0, t_off=30.0))
    s1, _ = Plant(params, fault).step(s, -4.0, 298.15)
    s0, _ = Plant(params).step(s, -4.0, 298.15)
    per_second = 310.0 / (params.rho * params.C_p * params.V_b)
    np.testing.assert_allclose(s1.z2 - s0.z2, per_second * params.dt, rtol=1e-12)
    np.testing.assert_array_equal(s1.z1, s0.z1)


def test_step_matches_independent_recomposition(params, rng):
    A1, B1 = build_electrochemical(params)
    A2, B2, C2 = build_thermal(params)
    plant = Plant(params)
    for _ in range(5):
        z1 = params.c_max_a * rng.uniform(0.2, 0.7) * (1 + 0.01 * rng.standard_normal(params.N))
        z2 = 298.15 + rng.uniform(0, 15, params.M)
        I = rng.uniform(-4, 4)
        state = PlantState(z1, z2, 5.0)
        new, sample = plant.step(state, I, 295.0)
        T_avg = float(params.temperature_weights @ z2)
        V = terminal_voltage(z1, I, T_avg, params)
        q = heat_generation(z1, I, V, params)
        np.testing.assert_allclose(new.z1, A1 @ z1 + B1 * I, rtol=1e-14)
        expect_z2 = A2 @ z2 + B2 * 295.0 + params.dt * q / params.heat_capacity
        np.testing.assert_allclose(new.z2, expect_z2, rtol=1e-14)
        assert sample.V_true == pytest.approx(V, abs=1e-14)
        assert sample.T_true == pytest.approx(float(C2 @ z2), abs=1e-12)
        assert new.t == 5.0 + params.dt


def test_module_level_step_with_white_noise(params):
    s = uniform_state(params, soc=0.5)
    unc = UncertaintyConfig(voltage=VoltageUncertainty(noise_std=1e-3))
    _, a = step(s, -1.0, 298.15, FaultConfig(), unc, rng=np.random.default_rng(3), params=params)
    _, b = step(s, -1.0, 298.15, FaultConfig(), unc, rng=np.random.default_rng(3), params=params)
    assert a == b
    assert a.wV != 0.0


def test_divergence_reports_step_index(params):
    s = uniform_state(params, soc=0.5, T=499.9)
    fault = FaultConfig(thermal=ThermalFault(power=5000.0, t_on=0.0, t_off=100.0))
    with pytest.raises(SimulationDivergedError) as info:
        run_cycle(s, Protocol(kind="constant_current", current=0.0, duration=50), fault, params=params, T_inf=499.9)
    assert info.value.exit_code == 5


def test_zero_amplitude_voltage_fault_is_silent():
    cfg = FaultConfig(voltage=VoltageFault(0.0, 0.0, 10.0, 20.0))
    assert all(voltage_fault_signal(t, cfg) == 0.0 for t in np.linspace(0, 30, 61))


def test_voltage_fault_midpoint():
    t_mid = 0.5 * (CASE1.t_on + CASE1.t_off)
    expected = CASE1.a1 + CASE1.a2 * math.sin(2 * math.pi / 3)
    assert voltage_fault_signal(t_mid, FaultConfig(voltage=CASE1)) == pytest.approx(expected, rel=1e-14)


def test_voltage_fault_peak_matches_dense_grid():
    # oracle: direct evaluation of the closed form on 10^4 points of the window
    s = np.linspace(0.0, 1.0, 10_000)
    x1 = -math.pi + 2 * math.pi * s
    x2 = math.pi / 3 + 2 * math.pi / 3 * s
    oracle = CASE1.a1 * np.exp(-0.5 * x1) + CASE1.a2 * np.sin(x2)
    t = CASE1.t_on + s * (CASE1.t_off - CASE1.t_on)
    ours = np.array([voltage_fault_signal(x, CASE1) for x in t])
    np.testing.assert_allclose(ours, oracle, rtol=1e-12, atol=1e-15)
    assert ours.max() <= CASE1.a1 * math.exp(math.pi / 2) + CASE1.a2
    assert t[ours.argmax()] == t[oracle.argmax()]


def test_fault_channels_vanish_outside_window():
    vf = VoltageFault(0.01, 0.01, 100.0, 200.0, onset_ramp=20.0)
    tf = ThermalFault(50.0, 100.0, 200.0, rise_time=10.0)
    for t in [0.0, 99.999, 200.001, 1e4]:
        assert voltage_fault_signal(t, vf) == 0.0
        assert thermal_fault_power(t, tf) == 0.0
    assert voltage_fault_signal(100.0, vf) == 0.0  # ramp starts from zero
    assert thermal_fault_power(150.0, tf) == 50.0


def test_fault_config_validation():
    with pytest.raises(ConfigurationError):
        VoltageFault(0.1, 0.1, 10.0, 10.0)
    with pytest.raises(ConfigurationError):
        ThermalFault(-1.0, 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        Protocol(kind="cccv", current=2.0)
    with pytest.raises(ConfigurationError):
        Protocol(kind="constant_current", current=-6.0)


def test_cc_charge_to_eighty_percent_takes_about_2160_s(params):
    s = uniform_state(params, soc=0.0)
    rec = run_cycle(s, Protocol(kind="constant_current", current=-4.0, soc_stop=0.8), params=params)
    expected = 0.8 * 3.0 * 3600 / 4.0
    assert rec.t[-1] == pytest.approx(expected, rel=0.05)


def test_zero_duration_protocol_gives_one_sample(params):
    s = uniform_state(params, soc=0.5)
    rec = run_cycle(s, Protocol(kind="constant_current", current=-1.0, duration=0.0), params=params)
    assert len(rec) == 1
    assert rec.t[0] == 0.0
    assert rec.T_true[0] == pytest.approx(298.15)


def test_replay_is_bit_identical(params, tmp_path):
    t = np.arange(300.0)
    cur = -2.0 + np.sin(t / 20.0)
    path = tmp_path / "replay.csv"
    path.write_text("t,I\n" + "".join(f"{a!r},{b!r}\n" for a, b in zip(t.tolist(), cur.tolist())))
    proto = Protocol.from_csv(path)
    s = uniform_state(params, soc=0.4)
    a = run_cycle(s, proto, unc=NOISY, seed=11, params=params)
    b = run_cycle(s, proto, unc=NOISY, seed=11, params=params)
    assert a.to_csv() == b.to_csv()
    c = run_cycle(s, proto, unc=NOISY, seed=12, params=params)
    assert a.to_csv() != c.to_csv()


def test_replay_rejects_irregular_spacing(params):
    proto = Protocol(kind="csv_replay", samples=((0.0, -1.0), (1.0, -1.0), (3.0, -1.0)))
    with pytest.raises(ConfigurationError):
        run_cycle(uniform_state(params), proto, params=params)


@pytest.fixture(scope="module")
def faulty_cccv():
    p = CellParams()
    fault = FaultConfig(voltage=CASE1, thermal=ThermalFault(100.0, 311.0, 341.0, rise_time=15.0))
    return run_cycle(uniform_state(p, soc=0.1), Protocol(), fault, NOISY, seed=2, params=p)


def test_measurement_bookkeeping_is_exact(faulty_cccv):
    r = faulty_cccv
    assert np.all(r.V_meas - r.V_true - r.wV - r.dV == 0.0)
    assert np.all(r.T_meas - r.T_true - r.wT == 0.0)


def test_recorded_fault_channels_follow_windows(faulty_cccv):
    r = faulty_cccv
    outside_v = (r.t < 300.0) | (r.t > 900.0)
    outside_t = (r.t < 311.0) | (r.t > 341.0)
    assert np.all(r.dV[outside_v] == 0.0)
    assert np.all(r.dT[outside_t] == 0.0)
    assert r.dV[~outside_v].max() > 0 and r.dT[~outside_t].max() == 100.0


def test_cv_phase_holds_the_limit(faulty_cccv):
    r = faulty_cccv
    start = r.meta["cv_start"]
    assert start is not None
    cv = r.t >= start + 10 * r.dt
    assert cv.sum() > 100
    assert np.max(np.abs(r.V_true[cv] - 4.2)) <= 5e-3
    assert abs(r.I[-1]) <= 0.15
    assert np.all(r.I <= 0.0)


def test_record_round_trip(faulty_cccv, tmp_path):
    path = tmp_path / "rec.csv"
    faulty_cccv.save(path)
    back = CycleRecord.load(path)
    assert path.read_text().splitlines()[0] == "t,I,V_meas,T_meas,V_true,T_true,dV,dT,wV,wT"
    for name in ("t", "V_meas", "T_meas", "dV", "wT"):
        np.testing.assert_array_equal(getattr(back, name), getattr(faulty_cccv, name))
    assert back.meta["seed"] == 2
    np.testing.assert_array_equal(back.initial_state.z1, faulty_cccv.initial_state.z1)
    assert back.to_csv() == faulty_cccv.to_csv()


def test_resistance_growth_ages_the_plant(params):
    unc = UncertaintyConfig(voltage=VoltageUncertainty(resistance_growth=0.01))
    assert Plant(params, unc=unc, cycle=10).params.R_b == pytest.approx(params.R_b * 1.01 ** 10)
    assert state_of_charge(uniform_state(params, soc=0.25).z1, params) == pytest.approx(0.25)
