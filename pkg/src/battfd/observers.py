"""Detection observers, gain synthesis and Lyapunov verification.

Error dynamics of either observer have the form ``e+ = (A - L C) e + eta``.
A gain is accepted when the discrete Lyapunov solution P of
``(A-LC)^T P (A-LC) - P = -I`` gives ``lambda_Q + Gamma * x < 0`` for some
Gamma > 0, where ``x = ||(A-LC)^T P||``. The same quantities bound the
estimation error under a bounded disturbance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.signal import place_poles

from . import io
from .errors import BoundUndefinedError, DesignError, ObserverDivergedError
from .gpr import GPModel, MeanPredictor
from .model import StateSpace, T_ENVELOPE, open_circuit_voltage
from .params import CellParams

DEFAULT_GAMMAS = tuple(float(g) for g in np.logspace(-4, 0, 41))
DEFAULT_VOLTAGE_POLES = (0.99,)
DEFAULT_THERMAL_POLES = (0.07, 0.14, 0.21, 0.28, 0.35)


# -- gain design ----------------------------------------------------------------------


def unobservable_modes(A, C, tol=1e-9):
    """Eigenvalues of A that fail the PBH rank test for output row C."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    lost = []
    for lam in np.linalg.eigvals(A):
        M = np.vstack([A - lam * np.eye(n), C])
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            lost.append(lam)
    return lost


def partial_spectrum(A, moved):
    """Open-loop eigenvalues of A with the slowest ``len(moved)`` replaced by ``moved``.

    Diffusion modes far from the measured surface are barely observable from
    one output; moving only the slow modes keeps the gain well conditioned.
    """
    ev = np.sort(np.real(np.linalg.eigvals(A)))[::-1]
    moved = np.asarray(moved, dtype=float)
    if len(moved) > len(ev):
        raise DesignError(f"{len(moved)} targets for a {len(ev)}-state system")
    return np.concatenate([moved, ev[len(moved):]])


def design_gain(A, C, spectrum):
    """Observer gain L placing the eigenvalues of A - L C at ``spectrum``.

    A spectrum shorter than the state dimension is completed with the
    fastest open-loop eigenvalues (see ``partial_spectrum``).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float)).reshape(1, -1)
    n = A.shape[0]
    spectrum = np.atleast_1d(np.asarray(spectrum, dtype=float))
    if len(spectrum) < n:
        spectrum = partial_spectrum(A, spectrum)
    if len(spectrum) != n:
        raise DesignError(f"spectrum has {len(spectrum)} entries for {n} states")
    if np.any(np.abs(spectrum) >= 1.0):
        raise DesignError("requested eigenvalues must lie inside the unit disk")
    lost = unobservable_modes(A, C)
    if lost:
        raise DesignError(
            f"(A, C) is not observable: observability rank deficiency {len(lost)} of {n}"
        )
    if n == 1:
        return np.array([(A[0, 0] - spectrum[0]) / C[0, 0]])
    if len(np.unique(spectrum)) != n:
        raise DesignError("single-output placement needs distinct eigenvalues")
    res = place_poles(A.T, C.T, spectrum, method="YT")
    L = res.gain_matrix.ravel()
    got = np.sort(np.linalg.eigvals(A - np.outer(L, C)).real)
    err = np.max(np.abs(got - np.sort(spectrum)))
    if err > 1e-6:
        raise DesignError(f"eigenvalue placement inaccurate (max error {err:.3g}); move fewer modes")
    return L


def spectral_radius(M):
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


# -- verification -----------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    P: np.ndarray | None
    lambda_Q: float
    x: float
    gamma: float
    margin: float
    lambda_P_max: float
    spectral_radius: float
    schur_stable: bool

    @property
    def passing(self):
        return self.schur_stable and self.margin < 0

    def ultimate_bound_radius(self, eta_bound):
        return ultimate_bound(self, eta_bound)

    def to_dict(self):
        return {
            "P": None if self.P is None else self.P.tolist(),
            "lambda_Q": self.lambda_Q,
            "x": self.x,
            "gamma": self.gamma,
            "margin": self.margin,
            "lambda_P_max": self.lambda_P_max,
            "spectral_radius": self.spectral_radius,
            "schur_stable": self.schur_stable,
            "passing": self.passing,
        }


def closed_loop(A, C, L):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float)).reshape(1, -1)
    L = np.asarray(L, dtype=float).reshape(-1, 1)
    return A - L @ C


def verify_lyapunov(A, C, L, gamma):
    if not gamma > 0:
        raise DesignError("gamma must be > 0")
    Acl = closed_loop(A, C, L)
    rho = spectral_radius(Acl)
    if rho >= 1.0:
        return VerificationReport(None, math.inf, math.inf, float(gamma), math.inf, math.inf, rho, False)
    n = Acl.shape[0]
    # solve_discrete_lyapunov(a, q) solves a X a^T - X + q = 0
    P = solve_discrete_lyapunov(Acl.T, np.eye(n))
    P = 0.5 * (P + P.T)
    Q = Acl.T @ P @ Acl - P
    lam_Q = float(np.linalg.eigvalsh(0.5 * (Q + Q.T)).min())
    x = float(np.linalg.norm(Acl.T @ P, 2))
    lam_P = float(np.linalg.eigvalsh(P).max())
    margin = lam_Q + gamma * x
    return VerificationReport(P, lam_Q, x, float(gamma), margin, lam_P, rho, True)


def gamma_sweep(A, C, L, gammas=DEFAULT_GAMMAS):
    """One report per Gamma; P is solved once and shared."""
    base = verify_lyapunov(A, C, L, gammas[0])
    out = []
    for g in gammas:
        if not base.schur_stable:
            out.append(VerificationReport(None, math.inf, math.inf, float(g), math.inf, math.inf,
                                          base.spectral_radius, False))
            continue
        out.append(VerificationReport(base.P, base.lambda_Q, base.x, float(g),
                                      base.lambda_Q + g * base.x, base.lambda_P_max,
                                      base.spectral_radius, True))
    return out


def best_report(A, C, L, gammas=DEFAULT_GAMMAS):
    """Passing report whose ultimate bound is tightest, or the first failing one."""
    reports = gamma_sweep(A, C, L, gammas)
    passing = [r for r in reports if r.passing]
    if not passing:
        return reports[0]
    return min(passing, key=lambda r: ultimate_bound(r, 1.0))


def ultimate_bound(report: VerificationReport, eta_bound):
    """Radius of the ball outside which the Lyapunov function strictly decreases."""
    if not report.passing:
        raise BoundUndefinedError(
            f"bound undefined: margin {report.margin:.4g}, spectral radius {report.spectral_radius:.4g}"
        )
    if eta_bound < 0:
        raise BoundUndefinedError("disturbance bound must be >= 0")
    r2 = -(report.lambda_P_max + report.x / report.gamma) / report.margin
    return math.sqrt(r2) * float(eta_bound)


# -- runtime ------------------------------------------------------------------------------


@dataclass
class ObserverState:
    z1_hat: np.ndarray
    z2_hat: np.ndarray
    t: float = 0.0

    def copy(self):
        return ObserverState(self.z1_hat.copy(), self.z2_hat.copy(), self.t)


@dataclass(frozen=True)
class ObserverGains:
    L_V: np.ndarray
    L_T: np.ndarray

    def check(self, ss: StateSpace):
        rv = spectral_radius(closed_loop(ss.A1, ss.C1, self.L_V))
        rt = spectral_radius(closed_loop(ss.A2, ss.C2, self.L_T))
        if rv >= 1 or rt >= 1:
            raise DesignError(f"gains are not Schur stable (radii {rv:.6g}, {rt:.6g})")
        return rv, rt

    def to_dict(self):
        return {"L_V": [float(v) for v in self.L_V], "L_T": [float(v) for v in self.L_T]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["L_V"], dtype=float), np.asarray(d["L_T"], dtype=float))

    def save(self, path):
        io.write_json(path, {"schema": {"name": "observer_gains", "version": 1}, **self.to_dict()})

    @classmethod
    def load(cls, path):
        return cls.from_dict(io.read_json(path))


def default_gains(ss: StateSpace, voltage_poles=DEFAULT_VOLTAGE_POLES, thermal_poles=DEFAULT_THERMAL_POLES):
    return ObserverGains(design_gain(ss.A1, ss.C1, voltage_poles), design_gain(ss.A2, ss.C2, thermal_poles))


@dataclass(frozen=True)
class Residuals:
    r_V: float
    r_T: float
    t: float


class _Evaluator:
    """Observer-side model pieces that stay fixed over a run."""

    def __init__(self, ss: StateSpace, params: CellParams, gp_v, gp_t):
        self.ss = ss
        self.params = params
        self.wv = _as_predictor(gp_v)
        self.wt = _as_predictor(gp_t)
        self.c_lo, self.c_hi = _admissible_surface(params)

    def ocv(self, c):
        if not math.isfinite(c):
            raise ObserverDivergedError(None, "non-finite surface concentration estimate")
        return open_circuit_voltage(min(max(c, self.c_lo), self.c_hi), self.params)


def _as_predictor(gp):
    if gp is None:
        return None
    if isinstance(gp, GPModel):
        return MeanPredictor(gp)
    return gp


def _admissible_surface(params: CellParams):
    """Surface concentrations for which both OCP maps are defined."""
    a = params.ocp_anode
    c = params.ocp_cathode
    lo, hi = a.lo * params.c_max_a, a.hi * params.c_max_a
    # cathode stoichiometry decreases with c (alpha1 < 0)
    c_from_hi = (c.hi * params.c_max_c - params.alpha2) / params.alpha1
    c_from_lo = (c.lo * params.c_max_c - params.alpha2) / params.alpha1
    return max(lo, c_from_hi, 0.0), min(hi, c_from_lo)


def _step(ev: _Evaluator, obs: ObserverState, I, V, T, T_inf, gains: ObserverGains):
    ss = ev.ss
    z1, z2 = obs.z1_hat, obs.z2_hat
    y1 = float(ss.C1 @ z1) + ss.D1 * I + ss.v_offset
    if ev.wv is not None:
        y1 += ev.wv(I, V)
    r_V = V - y1
    y2 = float(z2[-1])
    if ev.wt is not None:
        y2 += ev.wt(I, V, T)
    r_T = T - y2
    q = I * (ev.ocv(float(z1[-1])) - V)
    z1n = ss.A1 @ z1 + ss.B1 * I + gains.L_V * r_V
    z2n = ss.A2 @ z2 + ss.heat_gain * q + ss.B2 * T_inf + gains.L_T * r_T
    return ObserverState(z1n, z2n, obs.t + ev.params.dt), Residuals(r_V, r_T, obs.t)


def _check(obs: ObserverState, params: CellParams, k):
    z1, z2 = obs.z1_hat, obs.z2_hat
    if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
        raise ObserverDivergedError(k, "non-finite estimate")
    if z1.min() < -params.c_max_a or z1.max() > 2 * params.c_max_a:
        raise ObserverDivergedError(k, "concentration estimate far outside [0, c_max_a]")
    lo, hi = T_ENVELOPE
    if z2.min() < lo or z2.max() > hi:
        raise ObserverDivergedError(k, "temperature estimate outside the sanity envelope")


def observer_step(obs: ObserverState, meas, gains: ObserverGains, gp_v, gp_t,
                  statespace: StateSpace, params: CellParams, T_inf=298.15):
    """One update of both observers from a measurement with fields I, V_meas, T_meas."""
    ev = _Evaluator(statespace, params, gp_v, gp_t)
    new, res = _step(ev, obs, float(meas.I), float(meas.V_meas), float(meas.T_meas), T_inf, gains)
    _check(new, params, None)
    return new, res


@dataclass(frozen=True)
class ResidualTrace:
    t: np.ndarray
    r_V: np.ndarray
    r_T: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)


def initial_estimate(record, params: CellParams, soc_offset=0.0, T_offset=0.0):
    """Observer start: the record's rested initial state, optionally shifted."""
    from .model import uniform_concentration, state_of_charge

    s0 = record.initial_state
    z1 = np.array(s0.z1, dtype=float)
    if soc_offset:
        soc = state_of_charge(z1, params)
        z1 = z1 + uniform_concentration(params, soc + soc_offset) - uniform_concentration(params, soc)
    return ObserverState(z1, np.array(s0.z2, dtype=float) + T_offset, 0.0)


def run_observers(record, gains: ObserverGains, statespace: StateSpace, params: CellParams,
                  gp_v=None, gp_t=None, initial: ObserverState | None = None):
    """Residual traces of both observers over a whole cycle record."""
    ev = _Evaluator(statespace, params, gp_v, gp_t)
    obs = initial.copy() if initial is not None else initial_estimate(record, params)
    n = len(record)
    rV = np.empty(n)
    rT = np.empty(n)
    I, V, T = record.I, record.V_meas, record.T_meas
    T_inf = record.T_inf
    for k in range(n):
        obs, res = _step(ev, obs, float(I[k]), float(V[k]), float(T[k]), T_inf, gains)
        rV[k] = res.r_V
        rT[k] = res.r_T
        if k % 64 == 0:
            _check(obs, params, k)
    _check(obs, params, n)
    return ResidualTrace(np.array(record.t, dtype=float), rV, rT)


def settling_steps(gains: ObserverGains, ss: StateSpace, factor=10.0):
    """Rate-derived settling horizon factor / (1 - rho) for each observer."""
    rv, rt = gains.check(ss)
    return int(math.ceil(factor / (1.0 - rv))), int(math.ceil(factor / (1.0 - rt)))
