"""Parameter identification by weighted RMS fitting of voltage and surface temperature.

The optimizer works on log-scaled coordinates normalized to [0, 1] within
the bounds, so that a single simplex size suits parameters spanning many
orders of magnitude.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize
from scipy.signal import lfilter

from . import io
from .errors import BattFDError, ConfigurationError
from .model import build_electrochemical, build_thermal
from .params import IDENTIFIED, CellParams

PENALTY = 1e3


@dataclass
class IdentificationProblem:
    records: list
    theta0: dict
    bounds: dict
    weights: tuple = (1.0, 0.01)  # (voltage per V, temperature per K)
    base: CellParams = field(default_factory=CellParams)
    names: tuple = IDENTIFIED

    def __post_init__(self):
        self.names = tuple(self.names)
        if not self.records:
            raise ConfigurationError("identification needs at least one record")
        wv, wt = self.weights
        if wv < 0 or wt < 0 or (wv == 0 and wt == 0):
            raise ConfigurationError("weights must be >= 0 and not both zero")
        for n in self.names:
            if n not in self.theta0 or n not in self.bounds:
                raise ConfigurationError(f"parameter {n!r} needs theta0 and bounds")
            lo, hi = self.bounds[n]
            if not (0 < lo <= self.theta0[n] <= hi):
                raise ConfigurationError(f"theta0[{n}] = {self.theta0[n]} outside bounds [{lo}, {hi}]")
        self.penalties = 0

    def params_for(self, theta):
        return self.base.replace(**dict(zip(self.names, map(float, theta))))

    def residuals(self, theta):
        """Stacked weighted residuals whose squared norm is the sum of weighted mean squares."""
        p = self.params_for(theta)
        wv, wt = self.weights
        parts = []
        for rec in self.records:
            V, T = simulate_outputs(p, rec)
            n = math.sqrt(len(V))
            parts.append(wv * (rec.V_meas - V) / n)
            parts.append(wt * (rec.T_meas - T) / n)
        r = np.concatenate(parts)
        if not np.all(np.isfinite(r)):
            raise FloatingPointError("non-finite residual")
        return r

    def cost(self, theta):
        """Weighted RMS misfit; divergent or invalid candidates get a finite penalty."""
        try:
            p = self.params_for(theta)
            total = 0.0
            wv, wt = self.weights
            for rec in self.records:
                V, T = simulate_outputs(p, rec)
                if wv:
                    total += wv * math.sqrt(float(np.mean((rec.V_meas - V) ** 2)))
                if wt:
                    total += wt * math.sqrt(float(np.mean((rec.T_meas - T) ** 2)))
            if not math.isfinite(total):
                raise FloatingPointError("non-finite cost")
            return total
        except (BattFDError, FloatingPointError, ValueError):
            self.penalties += 1
            return PENALTY


def _modal_filter(A, z0, inputs, rows):
    """Outputs ``rows @ z_k`` of z_{k+1} = A z_k + inputs_k, computed mode by mode.

    ``inputs`` is (n_steps, n_states). The matrices here are similar to
    symmetric ones, so their eigenvalues are real.
    """
    lam, V = np.linalg.eig(A)
    lam, V = lam.real, V.real
    Vinv = np.linalg.inv(V)
    y0 = Vinv @ z0
    e = inputs @ Vinv.T  # (n_steps, modes)
    n = len(e)
    k = np.arange(n)
    out_w = rows @ V  # (n_rows, modes)
    Y = np.empty((n, len(lam)))
    for m, l in enumerate(lam):
        forced = lfilter([0.0, 1.0], [1.0, -l], e[:, m])
        Y[:, m] = forced + y0[m] * l**k
    return Y @ out_w.T


def simulate_outputs(params: CellParams, record, tol=1e-11, max_iter=60):
    """Nominal model outputs (terminal voltage, surface temperature) along a record's current.

    Same discrete equations as the plant. The irreversible heat is affine in
    the average temperature, so the thermal response is obtained by a
    fixed-point iteration on T_avg that contracts by roughly
    ``dt * I * s(I) / (rho C_p V_b)`` per step of horizon.
    """
    A1, B1 = build_electrochemical(params)
    A2, B2, C2 = build_thermal(params)
    I = np.asarray(record.I, dtype=float)
    n = len(I)
    s0 = record.initial_state
    e_row = np.zeros((1, params.N))
    e_row[0, -1] = 1.0
    c_surf = _modal_filter(A1, np.asarray(s0.z1, dtype=float), np.outer(I, B1), e_row)[:, 0]
    if c_surf.min() < 0 or c_surf.max() > params.c_max_a:
        raise ConfigurationError("concentration left [0, c_max_a]")
    x_a = c_surf / params.c_max_a
    y_c = (params.alpha1 * c_surf + params.alpha2) / params.c_max_c
    ocv = params.ocp_cathode(y_c) + params.ocp_anode(x_a)
    s = _overpotential_vec(I, params)

    gain = params.dt / params.heat_capacity
    rows = np.vstack([C2, params.temperature_weights])
    ones = np.ones(params.M)
    base = np.outer(gain * params.R_b * I * I, ones) + np.outer(np.ones(n), B2 * record.T_inf)
    coupling = gain * I * s
    z0 = np.asarray(s0.z2, dtype=float)
    T_avg = np.full(n, float(params.temperature_weights @ z0))
    for _ in range(max_iter):
        out = _modal_filter(A2, z0, base + np.outer(coupling * T_avg, ones), rows)
        change = float(np.max(np.abs(out[:, 1] - T_avg)))
        T_avg = out[:, 1]
        if change < tol:
            break
    T = out[:, 0]
    if T.min() < 200.0 or T.max() > 500.0:
        raise ConfigurationError("temperature left the sanity envelope")
    V = ocv - params.R_b * I - T_avg * s
    return V, T


def _overpotential_vec(I, p: CellParams):
    sc = 2.0 * p.a_c * p.A_c * p.L_c * p.i0_c
    sa = 2.0 * p.a_a * p.A_a * p.L_a * p.i0_a
    return p.R_gas / (p.alpha_c * p.F) * np.arcsinh(I / sc) + p.R_gas / (p.alpha_a * p.F) * np.arcsinh(I / sa)


# -- optimizer -----------------------------------------------------------------------------


class _Scaled:
    """Map between physical parameters and [0, 1] log coordinates."""

    def __init__(self, names, bounds):
        self.lo = np.log([bounds[n][0] for n in names])
        self.hi = np.log([bounds[n][1] for n in names])
        self.span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)

    def to_unit(self, theta):
        return (np.log(theta) - self.lo) / self.span

    def from_unit(self, u):
        return np.exp(self.lo + np.clip(u, 0.0, 1.0) * self.span)


@dataclass
class IdentificationReport:
    names: tuple
    theta0: list
    theta_star: list
    cost0: float
    cost: float
    evaluations: int
    converged: bool
    restarts: int
    trace: list
    sensitivity: dict
    penalties: int
    elapsed_s: float

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["schema"] = {"name": "identification_report", "version": 1}
        return d

    def save(self, path):
        # elapsed time is not reproducible; keep artifacts byte-stable
        d = self.to_dict()
        d.pop("elapsed_s")
        io.write_json(path, d)

    def flat(self, rel=1e-3):
        if not self.sensitivity:
            return []
        top = max(v["delta_cost"] for v in self.sensitivity.values())
        return [n for n, v in self.sensitivity.items() if v["delta_cost"] < rel * top]


def minimize_bounded(fun, x0, bounds, budget=2000, restarts=3, seed=0, xatol=1e-4, fatol=1e-12,
                     initial_step=0.2):
    """Bounded Nelder-Mead in unit log coordinates with seeded restarts.

    ``bounds`` is a list of (lo, hi) with lo > 0. Returns (x_best, f_best,
    evaluations, converged, trace).
    """
    names = list(range(len(x0)))
    sc = _Scaled(names, dict(zip(names, bounds)))
    rng = np.random.default_rng(seed)
    n = len(x0)
    state = {"evals": 0, "best_f": math.inf, "best_u": sc.to_unit(np.asarray(x0, dtype=float))}
    trace = []

    def f_unit(u):
        if state["evals"] >= budget:
            return state["best_f"] + 1.0
        state["evals"] += 1
        val = float(fun(sc.from_unit(u)))
        if val < state["best_f"]:
            state["best_f"] = val
            state["best_u"] = np.clip(u, 0.0, 1.0).copy()
        return val

    f0 = f_unit(state["best_u"])
    trace.append({"restart": 0, "evaluations": state["evals"], "cost": f0})
    converged = False
    unit_bounds = [(0.0, 1.0)] * n
    runs = restarts + 1
    for r in range(runs):
        remaining = budget - state["evals"]
        if remaining <= n + 1:
            break
        u0 = state["best_u"].copy()
        # restarts rebuild a full-size simplex with random orientation
        signs = np.ones(n) if r == 0 else rng.choice([-1.0, 1.0], size=n)
        simplex = [u0]
        for i in range(n):
            v = u0.copy()
            d = signs[i] * initial_step
            v[i] = v[i] + d if 0.0 <= v[i] + d <= 1.0 else v[i] - d
            simplex.append(v)
        before = state["best_f"]
        res = minimize(
            f_unit, u0, method="Nelder-Mead", bounds=unit_bounds,
            options={"initial_simplex": np.array(simplex), "maxfev": remaining // (runs - r),
                     "xatol": xatol, "fatol": fatol, "adaptive": n > 4},
        )
        trace.append({"restart": r, "evaluations": state["evals"], "cost": state["best_f"]})
        converged = bool(res.success)
        if r > 0 and converged and before - state["best_f"] <= fatol:
            break
    return sc.from_unit(state["best_u"]), state["best_f"], state["evals"], converged, trace


def polish(problem, theta, max_nfev=600):
    """Bounded least-squares refinement in unit log coordinates.

    Returns (theta, evaluations, converged). Candidates that fail to simulate get a
    large constant residual so the trust region shrinks away from them.
    """
    names = tuple(problem.names)
    sc = _Scaled(names, problem.bounds)
    size = len(problem.residuals(theta))
    count = [1]

    def fun(u):
        count[0] += 1
        try:
            return problem.residuals(sc.from_unit(u))
        except (BattFDError, FloatingPointError, ValueError):
            problem.penalties += 1
            return np.full(size, PENALTY / math.sqrt(size))

    u0 = np.clip(sc.to_unit(np.asarray(theta, dtype=float)), 0.0, 1.0)
    res = least_squares(fun, u0, bounds=(0.0, 1.0), method="trf", diff_step=1e-7,
                        x_scale=1.0, xtol=1e-12, ftol=1e-14, gtol=1e-14, max_nfev=max_nfev)
    return sc.from_unit(res.x), count[0], bool(res.status > 0)


def sensitivity(problem, theta, rel=0.05):
    """Cost increase under +/- rel perturbation of each parameter separately."""
    base = problem.cost(theta)
    out = {}
    for i, name in enumerate(problem.names):
        worst = 0.0
        for sgn in (-1.0, 1.0):
            th = np.array(theta, dtype=float)
            th[i] *= 1.0 + sgn * rel
            worst = max(worst, problem.cost(th) - base)
        out[name] = {"delta_cost": float(worst)}
    return out


def identify(problem, budget=2000, restarts=3, seed=0, with_sensitivity=True, polish_nfev=600,
             cost_floor=1e-9):
    """Fit the problem's parameters. Returns (theta_star dict, IdentificationReport).

    Nelder-Mead with restarts does the global part; a least-squares polish
    (skipped when ``polish_nfev`` is 0) then walks along the shallow valleys
    that the simplex crawls through slowly. A starting point whose cost is
    already at or below ``cost_floor`` is returned unchanged.
    """
    t0 = time.perf_counter()
    names = tuple(problem.names)
    theta0 = np.array([problem.theta0[n] for n in names], dtype=float)
    bounds = [tuple(problem.bounds[n]) for n in names]
    cost0 = float(problem.cost(theta0))
    if cost0 <= cost_floor:
        x, f, evals, converged = theta0, cost0, 1, True
        trace = [{"restart": 0, "evaluations": 1, "cost": cost0}]
    else:
        x, f, evals, converged, trace = minimize_bounded(problem.cost, theta0, bounds, budget, restarts, seed)
    if polish_nfev > 0 and cost_floor < f < PENALTY:
        xp, extra, ok = polish(problem, x, polish_nfev)
        fp = float(problem.cost(xp))
        evals += extra + 1
        if fp < f:
            x, f = xp, fp
            converged = converged or ok
        trace.append({"restart": "polish", "evaluations": evals, "cost": f})
    if not f < cost0:
        x, f = theta0, cost0
    # clip against round-off at the box edges
    x = np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(x, bounds)])
    sens = sensitivity(problem, x) if with_sensitivity else {}
    report = IdentificationReport(
        names=names, theta0=theta0.tolist(), theta_star=x.tolist(), cost0=cost0, cost=float(f),
        evaluations=int(evals), converged=converged, restarts=restarts, trace=trace,
        sensitivity=sens, penalties=int(getattr(problem, "penalties", 0)),
        elapsed_s=time.perf_counter() - t0,
    )
    return dict(zip(names, x.tolist())), report


def default_bounds(theta, spread=0.5):
    """Box of +/- ``spread`` (relative) around each value."""
    return {k: (v * (1 - spread), v * (1 + spread)) for k, v in theta.items()}


def identified_values(params: CellParams | None = None, names=IDENTIFIED):
    params = params or CellParams()
    return {n: float(getattr(params, n)) for n in names}
