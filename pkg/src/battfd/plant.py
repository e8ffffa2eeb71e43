"""Truth-model simulator: charging protocols, uncertainty and fault injection.

Every cycle is reproducible from (initial state, protocol, fault config,
uncertainty config, seed). Ground-truth channels are kept alongside the
measurements so that ``V_meas == V_true + wV + dV`` holds sample by sample.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigurationError, SimulationDivergedError
from .model import (
    PlantState,
    build_electrochemical,
    build_thermal,
    open_circuit_voltage,
    overpotential_per_kelvin,
    state_of_charge,
)
from .params import CellParams

RECORD_COLUMNS = ("t", "I", "V_meas", "T_meas", "V_true", "T_true", "dV", "dT", "wV", "wT")
RECORD_SCHEMA_VERSION = 1

PROTOCOL_KINDS = ("constant_current", "cccv", "fast_charge_profile", "csv_replay")


# -- configuration types ------------------------------------------------------------


@dataclass(frozen=True)
class Protocol:
    """Current schedule for one cycle. Currents are signed: negative charges the cell."""

    kind: str = "cccv"
    current: float = -4.0
    duration: float | None = None
    v_limit: float = 4.2
    cutoff_current: float = 0.15
    soc_stop: float | None = None
    stages: tuple = ()  # fast_charge_profile: ((duration_s, current_A), ...)
    samples: tuple = ()  # csv_replay: ((t_s, current_A), ...)
    i_max: float = 4.0
    cv_gain: float = 0.8
    max_steps: int = 200_000

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ConfigurationError(f"unknown protocol kind {self.kind!r}")
        if not (2.5 <= self.v_limit <= 4.2):
            raise ConfigurationError(f"CV limit {self.v_limit} V outside [2.5, 4.2]")
        imax = abs(self.i_max)
        currents = [self.current] + [c for _, c in self.stages] + [c for _, c in self.samples]
        for c in currents:
            if abs(c) > imax + 1e-12:
                raise ConfigurationError(f"current {c} A exceeds |I_max| = {imax} A")
        if self.duration is not None and self.duration < 0:
            raise ConfigurationError("duration must be >= 0")
        if self.kind == "cccv" and self.current >= 0:
            raise ConfigurationError("cccv needs a negative (charging) current")
        if self.kind == "csv_replay" and not self.samples:
            raise ConfigurationError("csv_replay needs current samples")
        object.__setattr__(self, "stages", tuple(tuple(map(float, s)) for s in self.stages))
        object.__setattr__(self, "samples", tuple(tuple(map(float, s)) for s in self.samples))

    @classmethod
    def from_csv(cls, path, **kwargs):
        header, data = io.read_csv(path)
        if data.shape[1] != 2:
            raise ConfigurationError("replay CSV needs two columns (t, I)", source=str(path))
        return cls(kind="csv_replay", samples=tuple(map(tuple, data)), **kwargs)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class VoltageFault:
    """Plating-like voltage signature a1*exp(-0.5(x1-mu)) + a2*sin(x2) over [t_on, t_off].

    x1 ramps from -pi to pi and x2 from pi/3 to pi across the window.
    ``onset_ramp`` (s) scales the signature up linearly from zero at t_on;
    0 injects it abruptly.
    """

    a1: float
    a2: float
    t_on: float
    t_off: float
    mu: float = 0.0
    gaussian_bump: bool = False
    onset_ramp: float = 0.0

    def __post_init__(self):
        if not self.t_on < self.t_off:
            raise ConfigurationError("voltage fault needs t_on < t_off")
        if self.a1 < 0 or self.a2 < 0 or self.onset_ramp < 0:
            raise ConfigurationError("voltage fault amplitudes and ramp must be >= 0")


@dataclass(frozen=True)
class ThermalFault:
    """Abnormal heat of ``power`` watts over [t_on, t_off], delivered to every node.

    ``rise_time`` (s) shapes both edges of the window with a raised-cosine
    taper, as a heater coupled through a contact resistance would; 0 gives
    a rectangular pulse.
    """

    power: float
    t_on: float
    t_off: float
    rise_time: float = 0.0

    def __post_init__(self):
        if not self.t_on < self.t_off:
            raise ConfigurationError("thermal fault needs t_on < t_off")
        if self.power < 0 or self.rise_time < 0:
            raise ConfigurationError("thermal fault power and rise time must be >= 0")


@dataclass(frozen=True)
class FaultConfig:
    voltage: VoltageFault | None = None
    thermal: ThermalFault | None = None

    @property
    def any(self):
        return self.voltage is not None or self.thermal is not None

    def to_dict(self):
        return {
            "voltage": dataclasses.asdict(self.voltage) if self.voltage else None,
            "thermal": dataclasses.asdict(self.thermal) if self.thermal else None,
        }

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        v = d.get("voltage")
        th = d.get("thermal")
        return cls(
            voltage=VoltageFault(**v) if v else None,
            thermal=ThermalFault(**th) if th else None,
        )


@dataclass(frozen=True)
class VoltageUncertainty:
    noise_std: float = 0.0  # V, white sensor noise
    bias: float = 0.0  # V
    drift: float = 0.0  # V/s
    smooth_std: float = 0.0  # V, band-limited component
    resistance_growth: float = 0.0  # fractional R_b increase per cycle


@dataclass(frozen=True)
class ThermalUncertainty:
    noise_std: float = 0.0  # K
    bias: float = 0.0  # K
    smooth_std: float = 0.0  # K
    convection_factor: float = 1.0  # true h / nominal h
    reversible_heat: float = 0.0  # W, amplitude of the entropic-heat surrogate


@dataclass(frozen=True)
class UncertaintyConfig:
    """Additive measurement uncertainty plus plant-side mismatch.

    The band-limited components are drawn from ``pattern_seed`` so that the
    same unmodelled behaviour repeats from cycle to cycle, while white
    sensor noise comes from the per-run ``seed``.
    """

    voltage: VoltageUncertainty = field(default_factory=VoltageUncertainty)
    thermal: ThermalUncertainty = field(default_factory=ThermalUncertainty)
    seed: int = 0
    pattern_seed: int | None = None
    smooth_cutoff_hz: float = 0.01

    def __post_init__(self):
        for name in ("noise_std", "smooth_std"):
            if getattr(self.voltage, name) < 0 or getattr(self.thermal, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.thermal.convection_factor <= 0:
            raise ConfigurationError("convection_factor must be > 0")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        v = VoltageUncertainty(**d.pop("voltage", {}) or {})
        th = ThermalUncertainty(**d.pop("thermal", {}) or {})
        return cls(voltage=v, thermal=th, **d)


# -- fault signals ----------------------------------------------------------------


def voltage_fault_signal(t, cfg):
    """Voltage fault in volts at time t (0 outside the window or with no voltage fault)."""
    vf = cfg.voltage if isinstance(cfg, FaultConfig) else cfg
    if vf is None or t < vf.t_on or t > vf.t_off:
        return 0.0
    s = (t - vf.t_on) / (vf.t_off - vf.t_on)
    x1 = -math.pi + 2.0 * math.pi * s
    x2 = math.pi / 3.0 + (2.0 * math.pi / 3.0) * s
    arg = -0.5 * (x1 - vf.mu) ** 2 if vf.gaussian_bump else -0.5 * (x1 - vf.mu)
    value = vf.a1 * math.exp(arg) + vf.a2 * math.sin(x2)
    if vf.onset_ramp > 0:
        value *= min(1.0, (t - vf.t_on) / vf.onset_ramp)
    return value


def thermal_fault_power(t, cfg, dt=1.0):
    """Fault heat in W delivered during the step starting at t."""
    tf = cfg.thermal if isinstance(cfg, FaultConfig) else cfg
    if tf is None or t < tf.t_on or t > tf.t_off:
        return 0.0
    if tf.rise_time <= 0:
        return tf.power
    edge = min(t - tf.t_on, tf.t_off - t) / tf.rise_time
    if edge >= 1.0:
        return tf.power
    return tf.power * 0.5 * (1.0 - math.cos(math.pi * edge))


# -- record --------------------------------------------------------------------------


@dataclass(frozen=True)
class CycleRecord:
    t: np.ndarray
    I: np.ndarray
    V_meas: np.ndarray
    T_meas: np.ndarray
    V_true: np.ndarray
    T_true: np.ndarray
    dV: np.ndarray
    dT: np.ndarray
    wV: np.ndarray
    wT: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in RECORD_COLUMNS:
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if len(arr) != n:
                raise ValueError(f"channel {name} has length {len(arr)} != {n}")

    def __len__(self):
        return len(self.t)

    @property
    def dt(self):
        return float(self.meta.get("dt", 1.0))

    @property
    def cycle(self):
        return int(self.meta.get("cycle", 0))

    @property
    def T_inf(self):
        return float(self.meta.get("T_inf", 298.15))

    @property
    def initial_state(self):
        return PlantState(
            np.asarray(self.meta["z1_0"], dtype=float), np.asarray(self.meta["z2_0"], dtype=float), 0.0
        )

    def to_csv(self):
        return io.format_csv(RECORD_COLUMNS, [getattr(self, c) for c in RECORD_COLUMNS])

    def save(self, path):
        """Write ``<path>`` (CSV) and ``<path minus .csv>.json`` (metadata)."""
        path = Path(path)
        io.atomic_write_text(path, self.to_csv())
        meta = dict(self.meta)
        meta["schema"] = {"name": "cycle_record", "version": RECORD_SCHEMA_VERSION, "columns": list(RECORD_COLUMNS)}
        io.write_json(path.with_suffix(".json"), meta)

    @classmethod
    def load(cls, path):
        path = Path(path)
        header, data = io.read_csv(path)
        if tuple(header) != RECORD_COLUMNS:
            raise ConfigurationError(f"unexpected record header {header}", source=str(path))
        meta_path = path.with_suffix(".json")
        meta = io.read_json(meta_path) if meta_path.exists() else {}
        meta.pop("schema", None)
        cols = {name: data[:, i] for i, name in enumerate(header)}
        return cls(meta=meta, **cols)


# -- simulator -----------------------------------------------------------------------


def truth_params(params: CellParams, unc: UncertaintyConfig, cycle=0):
    """Plant parameters after aging and convection mismatch."""
    changes = {}
    g = unc.voltage.resistance_growth
    if g:
        changes["R_b"] = params.R_b * (1.0 + g) ** cycle
    if unc.thermal.convection_factor != 1.0:
        changes["h_conv"] = params.h_conv * unc.thermal.convection_factor
    return params.replace(**changes) if changes else params


# Recorded channels live on power-of-two grids far below sensor resolution, so
# V_meas - V_true - wV - dV (and the thermal counterpart) vanishes exactly.
V_GRID = 2.0**-48  # V
T_GRID = 2.0**-40  # K


def _grid(x, step):
    return round(x / step) * step


class _AR1:
    """First-order low-pass filtered white noise with stationary std ``std``."""

    def __init__(self, std, cutoff_hz, dt, rng):
        self.std = std
        self.a = math.exp(-2.0 * math.pi * cutoff_hz * dt)
        self.b = math.sqrt(1.0 - self.a * self.a) * std
        self.rng = rng
        self.x = std * rng.standard_normal() if std > 0 else 0.0

    def __call__(self):
        if self.std <= 0:
            return 0.0
        x = self.x
        self.x = self.a * x + self.b * self.rng.standard_normal()
        return x


@dataclass
class Sample:
    t: float
    I: float
    V_meas: float
    T_meas: float
    V_true: float
    T_true: float
    dV: float
    dT: float
    wV: float
    wT: float


class Plant:
    """Stateful stepping engine for one cycle (noise generators, fault timing)."""

    def __init__(self, params: CellParams, fault: FaultConfig | None = None,
                 unc: UncertaintyConfig | None = None, seed=None, cycle=0):
        self.nominal = params
        self.fault = fault or FaultConfig()
        self.unc = unc or UncertaintyConfig()
        self.cycle = cycle
        self.params = p = truth_params(params, self.unc, cycle)
        self.A1, self.B1 = build_electrochemical(p)
        self.A2, self.B2, self.C2 = build_thermal(p)
        self.w_T = p.temperature_weights
        self.heat_gain = p.dt / p.heat_capacity
        seed = self.unc.seed if seed is None else seed
        pattern = self.unc.pattern_seed if self.unc.pattern_seed is not None else seed
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        prng = np.random.default_rng(pattern)
        fc = self.unc.smooth_cutoff_hz
        self._smooth_v = _AR1(self.unc.voltage.smooth_std, fc, p.dt, prng)
        self._smooth_t = _AR1(self.unc.thermal.smooth_std, fc, p.dt, prng)
        self.step_index = 0

    def dV_dI(self, I, T_avg):
        """Slope of the terminal voltage with respect to current (negative)."""
        p = self.params
        sc = 2.0 * p.a_c * p.A_c * p.L_c * p.i0_c
        sa = 2.0 * p.a_a * p.A_a * p.L_a * p.i0_a
        d = (p.R_gas / (p.alpha_c * p.F)) / sc / math.sqrt(1 + (I / sc) ** 2)
        d += (p.R_gas / (p.alpha_a * p.F)) / sa / math.sqrt(1 + (I / sa) ** 2)
        return -p.R_b - T_avg * d

    def voltage(self, state: PlantState, I):
        p = self.params
        T_avg = float(self.w_T @ state.z2)
        return open_circuit_voltage(float(state.z1[-1]), p) - p.R_b * I - T_avg * overpotential_per_kelvin(I, p)

    def step(self, state: PlantState, I, T_inf):
        """Emit the measurement at ``state.t`` and advance the state by one sample."""
        p = self.params
        t = state.t
        z1, z2 = state.z1, state.z2
        c_surf = float(z1[-1])
        T_avg = float(self.w_T @ z2)
        ocv = open_circuit_voltage(c_surf, p)
        V_true = ocv - p.R_b * I - T_avg * overpotential_per_kelvin(I, p)
        q = I * (ocv - V_true)
        th = self.unc.thermal
        if th.reversible_heat:
            soc = state_of_charge(z1, p)
            q += th.reversible_heat * (I / 4.0) * (1.0 - 2.0 * soc)
        dV = voltage_fault_signal(t, self.fault)
        dT = thermal_fault_power(t, self.fault, p.dt)
        vu = self.unc.voltage
        wV = vu.bias + vu.drift * t + self._smooth_v()
        if vu.noise_std > 0:
            wV += vu.noise_std * self.rng.standard_normal()
        wT = th.bias + self._smooth_t()
        if th.noise_std > 0:
            wT += th.noise_std * self.rng.standard_normal()
        Vg, wV, dV = _grid(V_true, V_GRID), _grid(wV, V_GRID), _grid(dV, V_GRID)
        Tg, wT = _grid(float(z2[-1]), T_GRID), _grid(wT, T_GRID)
        sample = Sample(t, I, Vg + wV + dV, Tg + wT, Vg, Tg, dV, dT, wV, wT)

        z1n = self.A1 @ z1 + self.B1 * I
        z2n = self.A2 @ z2 + self.heat_gain * (q + dT) + self.B2 * T_inf
        new = PlantState(z1n, z2n, t + p.dt)
        self.step_index += 1
        new.check(p, self.step_index)
        return new, sample


def step(state: PlantState, I, T_inf, fault, unc, rng=None, params: CellParams | None = None):
    """Single plant step with white-noise uncertainty drawn from ``rng``.

    Band-limited components need filter state across steps; use ``Plant``
    (or ``run_cycle``) for those.
    """
    params = params or CellParams()
    plant = Plant(params, fault, unc)
    if rng is not None:
        plant.rng = rng
    return plant.step(state, I, T_inf)


def _schedule(protocol: Protocol, dt):
    """Fixed current samples for schedule-driven protocols, or None."""
    if protocol.kind == "constant_current":
        if protocol.duration is None:
            return None
        n = int(round(protocol.duration / dt)) + 1
        return np.full(n, float(protocol.current))
    if protocol.kind == "fast_charge_profile":
        out = []
        for dur, cur in protocol.stages:
            out.extend([cur] * int(round(dur / dt)))
        return np.array(out + [protocol.stages[-1][1]] if out else [0.0], dtype=float)
    if protocol.kind == "csv_replay":
        t = np.array([s[0] for s in protocol.samples])
        cur = np.array([s[1] for s in protocol.samples])
        if len(t) > 1 and not np.allclose(np.diff(t), dt, rtol=0, atol=1e-9 * max(1.0, dt)):
            raise ConfigurationError(f"replay samples must be spaced by dt = {dt} s")
        return cur
    return None


def run_cycle(initial: PlantState, protocol: Protocol, fault: FaultConfig | None = None,
              unc: UncertaintyConfig | None = None, seed=None, params: CellParams | None = None,
              T_inf=298.15, cycle=0):
    """Simulate one cycle until the protocol terminates and return its record."""
    params = params or CellParams()
    unc = unc or UncertaintyConfig()
    fault = fault or FaultConfig()
    plant = Plant(params, fault, unc, seed=seed, cycle=cycle)
    dt = params.dt
    state = PlantState(np.array(initial.z1, dtype=float), np.array(initial.z2, dtype=float), 0.0)
    state.check(plant.params, 0)
    schedule = _schedule(protocol, dt)
    samples = []
    phase = "cc"
    I_prev = float(protocol.current)
    V_prev = None
    charging = protocol.current < 0
    soc_stop = protocol.soc_stop
    phase_switch = None

    k = 0
    while True:
        if k > protocol.max_steps:
            raise SimulationDivergedError(k, f"protocol did not terminate within {protocol.max_steps} steps")
        last = False
        if schedule is not None:
            I = float(schedule[k])
            last = k == len(schedule) - 1
        elif protocol.kind == "constant_current":
            I = float(protocol.current)
        else:  # cccv
            if phase == "cc":
                I = float(protocol.current)
                if plant.voltage(state, I) >= protocol.v_limit:
                    phase = "cv"
                    phase_switch = state.t
            else:
                T_avg = float(plant.w_T @ state.z2)
                slope = plant.dV_dI(I_prev, T_avg)
                I = I_prev + protocol.cv_gain * (V_prev - protocol.v_limit) / abs(slope)
                I = min(0.0, max(-abs(protocol.i_max), I))
        if soc_stop is not None:
            soc = state_of_charge(state.z1, plant.params)
            if (charging and soc >= soc_stop) or (not charging and soc <= soc_stop):
                last = True
        if phase == "cv" and abs(I) <= protocol.cutoff_current:
            last = True
        new_state, sample = plant.step(state, I, T_inf)
        samples.append(sample)
        if last:
            break
        state = new_state
        I_prev, V_prev = I, sample.V_true
        k += 1

    cols = {name: np.array([getattr(s, name) for s in samples]) for name in RECORD_COLUMNS}
    meta = {
        "cycle": cycle,
        "dt": dt,
        "T_inf": T_inf,
        "seed": plant.seed,
        "protocol": protocol.to_dict(),
        "fault": fault.to_dict(),
        "uncertainty": unc.to_dict(),
        "z1_0": [float(v) for v in initial.z1],
        "z2_0": [float(v) for v in initial.z2],
        "cv_start": phase_switch,
    }
    return CycleRecord(meta=meta, **cols)
