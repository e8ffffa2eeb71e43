"""Electrochemical-thermal cell model in discrete state-space form.

The anode single-particle diffusion equation and the radial heat equation of
a cylindrical cell are discretized by the method of lines (central
differences, ghost nodes at both boundaries) and stepped with forward Euler.
Terminal voltage and irreversible heat are nonlinear output maps of the
surface concentration.

Sign convention: positive current discharges the cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SimulationDivergedError, StabilityError
from .params import CellParams

T_ENVELOPE = (200.0, 500.0)


@dataclass
class PlantState:
    z1: np.ndarray  # anode concentration per node, mol/m^3
    z2: np.ndarray  # temperature per node, K
    t: float = 0.0

    def copy(self):
        return PlantState(self.z1.copy(), self.z2.copy(), self.t)

    def check(self, params: CellParams, step=None):
        if self.z1.shape != (params.N,) or self.z2.shape != (params.M,):
            raise ConfigurationError(
                f"state shapes {self.z1.shape}/{self.z2.shape} do not match N={params.N}, M={params.M}"
            )
        if not np.all(np.isfinite(self.z1)) or not np.all(np.isfinite(self.z2)):
            raise SimulationDivergedError(step, "non-finite state")
        if self.z1.min() < 0 or self.z1.max() > params.c_max_a:
            raise SimulationDivergedError(
                step, f"concentration {self.z1.min():.4g}..{self.z1.max():.4g} outside [0, c_max_a]"
            )
        lo, hi = T_ENVELOPE
        if self.z2.min() < lo or self.z2.max() > hi:
            raise SimulationDivergedError(
                step, f"temperature {self.z2.min():.4g}..{self.z2.max():.4g} K outside [{lo}, {hi}]"
            )


@dataclass(frozen=True)
class StateSpace:
    """Discrete-time matrices of the model, linearized voltage output included.

    ``v_offset`` is the affine term of the voltage linearization, so that
    ``V ~ C1 @ z1 + D1 * I + v_offset`` near the operating point.
    """

    A1: np.ndarray
    B1: np.ndarray
    C1: np.ndarray
    D1: float
    v_offset: float
    A2: np.ndarray
    B2: np.ndarray
    C2: np.ndarray
    heat_gain: float  # dt / (rho C_p V_b), K per J
    params: CellParams = field(repr=False)
    operating_point: dict = field(default_factory=dict)

    def heat_forcing(self, q):
        """f2 term: the same temperature increment on every node for heat rate q (W)."""
        return np.full(self.params.M, self.heat_gain * q)


def _check_stability(name, G, dt):
    ratio = dt * float(np.max(np.abs(np.diag(G))))
    if ratio > 1.0:
        raise StabilityError(name, ratio)
    return ratio


def electrochemical_generator(params: CellParams):
    """Continuous-time (G, b) with dc/dt = G c + b I."""
    n = params.N
    gamma1 = params.D / params.dx**2
    beta1 = -(1.0 / (params.a_a * params.F * params.A_a * params.L_a * params.dx)) * (1.0 + 1.0 / n)
    G = np.zeros((n, n))
    G[0, 0] = -2.0
    G[0, 1] = 2.0
    for i in range(2, n):
        r = i - 1
        G[r, r - 1] = 1.0 - 1.0 / i
        G[r, r] = -2.0
        G[r, r + 1] = 1.0 + 1.0 / i
    G[n - 1, n - 2] = 1.0 - 1.0 / n
    G[n - 1, n - 1] = -(1.0 - 1.0 / n)
    G *= gamma1
    b = np.zeros(n)
    b[-1] = beta1
    return G, b


def build_electrochemical(params: CellParams):
    """Euler-discretized (A1, B1) of the particle diffusion model.

    The center ghost node mirrors node 1 and the surface ghost node carries
    the current flux by a one-sided difference, which yields the boundary
    gain ``beta1 = -(1 + 1/N) / (a_a F A_a L_a dx)``.
    """
    if params.N < 2:
        raise ConfigurationError("N must be >= 2")
    G, b = electrochemical_generator(params)
    _check_stability("electrochemical", G, params.dt)
    A1 = np.eye(params.N) + params.dt * G
    B1 = params.dt * b
    return A1, B1


def thermal_generator(params: CellParams):
    """Continuous-time (G, b) with dT/dt = G T + b T_inf + Q / (rho C_p V_b)."""
    m = params.M
    gamma2 = params.k_th / (params.rho * params.C_p * params.dy**2)
    biot = params.dy * params.h_conv / params.k_th
    G = np.zeros((m, m))
    G[0, 0] = -1.5
    G[0, 1] = 1.5
    for j in range(2, m):
        r = j - 1
        G[r, r - 1] = 1.0 - 1.0 / (2 * j)
        G[r, r] = -2.0
        G[r, r + 1] = 1.0 + 1.0 / (2 * j)
    G[m - 1, m - 2] = 1.0 - 1.0 / (2 * m)
    G[m - 1, m - 1] = -(1.0 - 1.0 / (2 * m)) - (1.0 + 1.0 / (2 * m)) * biot
    G *= gamma2
    b = np.zeros(m)
    b[-1] = gamma2 * (1.0 + 1.0 / (2 * m)) * biot
    return G, b


def build_thermal(params: CellParams):
    """Euler-discretized (A2, B2, C2) of the radial heat equation with surface convection."""
    if params.M < 2:
        raise ConfigurationError("M must be >= 2")
    G, b = thermal_generator(params)
    _check_stability("thermal", G, params.dt)
    A2 = np.eye(params.M) + params.dt * G
    B2 = params.dt * b
    C2 = np.zeros(params.M)
    C2[-1] = 1.0
    return A2, B2, C2


# -- output maps --------------------------------------------------------------


def _surface(z1):
    z1 = np.asarray(z1, dtype=float)
    return float(z1[-1]) if z1.ndim else float(z1)


def cathode_stoichiometry(c_surf, params: CellParams):
    return (params.alpha1 * c_surf + params.alpha2) / params.c_max_c


def open_circuit_voltage(c_surf, params: CellParams):
    """U_c(alpha1 c + alpha2) + U_a(c) at surface concentration c (scalar)."""
    return params.ocp_cathode.value(cathode_stoichiometry(c_surf, params)) + params.ocp_anode.value(
        c_surf / params.c_max_a
    )


def _kinetic_scales(params: CellParams):
    """Denominators 2 a A L i0 of the Butler-Volmer arguments (cathode, anode)."""
    sc = 2.0 * params.a_c * params.A_c * params.L_c * params.i0_c
    sa = 2.0 * params.a_a * params.A_a * params.L_a * params.i0_a
    return sc, sa


def overpotential_per_kelvin(I, params: CellParams):
    """Sum of both electrode overpotentials divided by temperature (V/K)."""
    sc, sa = _kinetic_scales(params)
    R, F = params.R_gas, params.F
    return R / (params.alpha_c * F) * math.asinh(I / sc) + R / (params.alpha_a * F) * math.asinh(I / sa)


def terminal_voltage(z1, I, T_avg, params: CellParams):
    """Terminal voltage from surface concentration, current and average temperature.

    Overpotentials enter with a negative sign so that V falls monotonically
    with current and the irreversible heat is non-negative.
    """
    c = _surface(z1)
    return open_circuit_voltage(c, params) - params.R_b * I - T_avg * overpotential_per_kelvin(I, params)


def heat_generation(z1, I, V_term, params: CellParams):
    """Irreversible heat rate I * (OCV - V) in W."""
    return I * (open_circuit_voltage(_surface(z1), params) - V_term)


@dataclass(frozen=True)
class VoltageLinearization:
    C1: np.ndarray
    D1: float
    offset: float
    at_knot: bool


def linearize_voltage(params: CellParams, z1_op, I_op=0.0, T_op=298.15):
    """First-order expansion of the terminal voltage about an operating point.

    Only the surface node enters, so C1 has a single nonzero entry. The
    affine offset is returned so callers can carry it explicitly.
    """
    z1_op = np.asarray(z1_op, dtype=float)
    c = _surface(z1_op)
    y = cathode_stoichiometry(c, params)
    xa = c / params.c_max_a
    dV_dc = (
        params.alpha1 * params.ocp_cathode.slope(y) / params.c_max_c
        + params.ocp_anode.slope(xa) / params.c_max_a
    )
    sc, sa = _kinetic_scales(params)
    R, F = params.R_gas, params.F
    d_eta = (R * T_op / (params.alpha_c * F)) / sc / math.sqrt(1.0 + (I_op / sc) ** 2) + (
        R * T_op / (params.alpha_a * F)
    ) / sa / math.sqrt(1.0 + (I_op / sa) ** 2)
    D1 = -params.R_b - d_eta
    C1 = np.zeros(params.N)
    C1[-1] = dV_dc
    V_op = terminal_voltage(z1_op, I_op, T_op, params)
    offset = V_op - dV_dc * c - D1 * I_op
    knot = params.ocp_cathode.at_knot(y) or params.ocp_anode.at_knot(xa)
    return VoltageLinearization(C1, D1, offset, knot)


def thermal_forcing(z1, y1, u1, params: CellParams):
    """f2(z1, y1, u1): per-node temperature increment over one step from irreversible heat."""
    q = heat_generation(z1, u1, y1, params)
    return np.full(params.M, params.dt * q / params.heat_capacity)


# -- state helpers --------------------------------------------------------------


def state_of_charge(z1, params: CellParams):
    lo, hi = params.anode_window
    x = float(params.concentration_weights @ np.asarray(z1, dtype=float)) / params.c_max_a
    return (x - lo) / (hi - lo)


def uniform_concentration(params: CellParams, soc):
    lo, hi = params.anode_window
    return (lo + soc * (hi - lo)) * params.c_max_a


def uniform_state(params: CellParams, soc=0.5, T=298.15, t=0.0):
    c = uniform_concentration(params, soc)
    return PlantState(np.full(params.N, c), np.full(params.M, float(T)), t)


def average_temperature(z2, params: CellParams):
    return float(params.temperature_weights @ np.asarray(z2, dtype=float))


def build_state_space(params: CellParams, soc_op=0.5, I_op=0.0, T_op=298.15):
    """Assemble every discrete matrix, linearizing the voltage at a uniform state of charge."""
    A1, B1 = build_electrochemical(params)
    A2, B2, C2 = build_thermal(params)
    z_op = np.full(params.N, uniform_concentration(params, soc_op))
    lin = linearize_voltage(params, z_op, I_op, T_op)
    return StateSpace(
        A1=A1, B1=B1, C1=lin.C1, D1=lin.D1, v_offset=lin.offset,
        A2=A2, B2=B2, C2=C2, heat_gain=params.dt / params.heat_capacity,
        params=params,
        operating_point={"soc": soc_op, "I": I_op, "T": T_op, "at_knot": lin.at_knot},
    )
