"""Gaussian-process regression of the lumped model uncertainty.

Zero-mean GP with a squared-exponential kernel over standardized inputs.
The covariance is factorized once by Cholesky at fit time; predictions
reuse the factor. Two separate models are trained: one for the voltage
uncertainty with inputs (I, V_meas), one for the thermal uncertainty with
inputs (I, V_meas, T_meas).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import io
from .errors import ConditioningError, ConfigurationError
from .model import StateSpace, build_state_space, open_circuit_voltage
from .params import CellParams

DEFAULT_CAP = 500
ARTIFACT_VERSION = 1
_ESCALATIONS = 3


@dataclass(frozen=True)
class GPHyper:
    sigma_p2: float
    length_scales: tuple
    jitter: float

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", ls)
        if not self.sigma_p2 > 0:
            raise ConfigurationError("sigma_p2 must be > 0")
        if not all(v > 0 for v in ls):
            raise ConfigurationError("length scales must be > 0")
        if self.jitter < 1e-12 * self.sigma_p2:
            raise ConfigurationError("jitter must be >= 1e-12 * sigma_p2")

    @property
    def dim(self):
        return len(self.length_scales)

    @classmethod
    def default(cls, labels, dim, jitter=None, length_scale=1.0):
        """Label variance as signal variance, unit length scales, jitter 1e-6 of it."""
        var = float(np.var(labels)) if len(labels) > 1 else 0.0
        var = max(var, 1e-12)
        return cls(var, (length_scale,) * dim, 1e-6 * var if jitter is None else jitter)


def kernel(v1, v2, hyper: GPHyper):
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape or v1.shape[-1] != hyper.dim:
        raise ConfigurationError(f"kernel inputs {v1.shape}, {v2.shape} do not match {hyper.dim} length scales")
    d = (v1 - v2) / np.asarray(hyper.length_scales)
    return float(hyper.sigma_p2 * np.exp(-0.5 * d @ d))


def kernel_matrix(X1, X2, hyper: GPHyper):
    """Cross-covariance between the rows of X1 and X2 (inputs already standardized)."""
    ls = np.asarray(hyper.length_scales)
    A = np.atleast_2d(X1) / ls
    B = np.atleast_2d(X2) / ls
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return hyper.sigma_p2 * np.exp(-0.5 * sq)


@dataclass(frozen=True)
class UncertaintyDataset:
    kind: str  # "voltage" | "thermal"
    inputs: np.ndarray
    labels: np.ndarray
    source_cycle: int = 0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.labels, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ConfigurationError(f"{X.shape[0]} input rows but {y.shape[0]} labels")
        want = {"voltage": 2, "thermal": 3}.get(self.kind)
        if want is not None and X.shape[1] != want:
            raise ConfigurationError(f"{self.kind} inputs must be {want}-d, got {X.shape[1]}")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class GPModel:
    X: np.ndarray  # standardized training inputs
    y: np.ndarray
    hyper: GPHyper
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    mean: np.ndarray
    scale: np.ndarray
    X_raw: np.ndarray = field(repr=False)
    kind: str = "generic"
    source_cycle: int = 0

    @property
    def n(self):
        return len(self.y)

    @property
    def raw_inputs(self):
        return self.X_raw

    def standardize(self, Q):
        return (np.atleast_2d(np.asarray(Q, dtype=float)) - self.mean) / self.scale

    def to_dict(self):
        return {
            "schema": {"name": "gp_model", "version": ARTIFACT_VERSION},
            "kind": self.kind,
            "source_cycle": self.source_cycle,
            "inputs": self.raw_inputs.tolist(),
            "labels": self.y.tolist(),
            "hyper": {
                "sigma_p2": self.hyper.sigma_p2,
                "length_scales": list(self.hyper.length_scales),
                "jitter": self.hyper.jitter,
            },
            "standardization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
        }

    def save(self, path):
        io.write_json(path, self.to_dict())

    @classmethod
    def from_dict(cls, d):
        schema = d.get("schema", {})
        if schema.get("name") != "gp_model" or schema.get("version") != ARTIFACT_VERSION:
            raise ConfigurationError(f"not a version-{ARTIFACT_VERSION} GP artifact")
        h = d["hyper"]
        hyper = GPHyper(h["sigma_p2"], tuple(h["length_scales"]), h["jitter"])
        st = d["standardization"]
        X_raw = np.asarray(d["inputs"], dtype=float)
        return _factorize(
            X_raw, np.asarray(d["labels"], dtype=float), hyper,
            np.asarray(st["mean"], dtype=float), np.asarray(st["scale"], dtype=float),
            d.get("kind", "generic"), d.get("source_cycle", 0),
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(io.read_json(path))


def _factorize(X_raw, y, hyper, mean, scale, kind, source_cycle):
    X = (X_raw - mean) / scale
    K = kernel_matrix(X, X, hyper)
    jitter = hyper.jitter
    for attempt in range(_ESCALATIONS + 1):
        try:
            chol = np.linalg.cholesky(K + jitter * np.eye(len(y)))
            if not np.all(np.isfinite(chol)):
                raise np.linalg.LinAlgError("non-finite factor")
            break
        except np.linalg.LinAlgError:
            if attempt == _ESCALATIONS:
                raise ConditioningError(jitter) from None
            jitter *= 10.0
    if jitter != hyper.jitter:
        hyper = GPHyper(hyper.sigma_p2, hyper.length_scales, jitter)
    alpha = cho_solve((chol, True), y)
    return GPModel(X, y, hyper, chol, alpha, mean, scale, X_raw, kind, source_cycle)


def subsample_indices(n, cap):
    """Uniform-stride indices keeping at most ``cap`` of ``n`` time-ordered rows."""
    if n <= cap:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, cap).round().astype(int))


def fit(data: UncertaintyDataset, hyper: GPHyper | None = None, cap=DEFAULT_CAP,
        standardization=None) -> GPModel:
    """Factorize the training covariance.

    ``standardization=(mean, scale)`` reuses fixed input constants instead of
    deriving them from ``data`` (e.g. to compare models on nested datasets).
    """
    X_raw = data.inputs
    y = data.labels
    if len(y) < 1:
        raise ConfigurationError("cannot fit a GP on an empty dataset")
    if not (np.all(np.isfinite(X_raw)) and np.all(np.isfinite(y))):
        raise ConfigurationError("non-finite training data")
    idx = subsample_indices(len(y), cap)
    X_raw, y = X_raw[idx], y[idx]
    if hyper is None:
        hyper = GPHyper.default(y, X_raw.shape[1])
    if hyper.dim != X_raw.shape[1]:
        raise ConfigurationError(f"{hyper.dim} length scales for {X_raw.shape[1]}-d inputs")
    if standardization is not None:
        mean, scale = (np.asarray(v, dtype=float) for v in standardization)
        if not np.all(scale > 0):
            raise ConfigurationError("standardization scales must be > 0")
    else:
        mean = X_raw.mean(axis=0)
        scale = X_raw.std(axis=0)
        scale[scale <= 1e-12 * np.maximum(1.0, np.abs(mean))] = 1.0
    return _factorize(X_raw, y, hyper, mean, scale, data.kind, data.source_cycle)


def predict_many(model: GPModel, Q):
    """Posterior means and variances at the rows of Q (raw, unstandardized units)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != model.X.shape[1]:
        raise ConfigurationError(f"query dim {Q.shape[1]} != model dim {model.X.shape[1]}")
    Ks = kernel_matrix(model.standardize(Q), model.X, model.hyper)
    mean = Ks @ model.alpha
    v = solve_triangular(model.chol, Ks.T, lower=True)
    var = model.hyper.sigma_p2 - (v * v).sum(axis=0)
    return mean, np.maximum(var, 0.0)


def predict(model: GPModel, query):
    q = np.asarray(query, dtype=float).ravel()
    mean, var = predict_many(model, q[None, :])
    return float(mean[0]), float(var[0])


class MeanPredictor:
    """Fast single-query posterior mean for use inside observer loops."""

    def __init__(self, model: GPModel):
        self.model = model
        self._Xs = model.X / np.asarray(model.hyper.length_scales)
        self._inv = 1.0 / (model.scale * np.asarray(model.hyper.length_scales))
        self._shift = model.mean

    def __call__(self, *q):
        z = (np.asarray(q, dtype=float) - self._shift) * self._inv
        d = self._Xs - z
        k = np.exp(-0.5 * np.einsum("ij,ij->i", d, d))
        return self.model.hyper.sigma_p2 * float(k @ self.model.alpha)


# -- dataset builders ------------------------------------------------------------------


def _open_loop(cycle, params: CellParams, ss: StateSpace):
    if len(cycle) < 10:
        raise ConfigurationError(f"cycle has {len(cycle)} samples; at least 10 are needed")
    n = len(cycle)
    z1 = np.array(cycle.initial_state.z1, dtype=float)
    z2 = np.array(cycle.initial_state.z2, dtype=float)
    I = cycle.I
    V = cycle.V_meas
    z1s = np.empty((n, params.N))
    z2s = np.empty((n, params.M))
    A1, B1, A2, B2 = ss.A1, ss.B1, ss.A2, ss.B2
    T_inf = cycle.T_inf
    for k in range(n):
        z1s[k] = z1
        z2s[k] = z2
        q = I[k] * (open_circuit_voltage(float(z1[-1]), params) - V[k])
        z1 = A1 @ z1 + B1 * I[k]
        z2 = A2 @ z2 + ss.heat_gain * q + B2 * T_inf
    return z1s, z2s


def build_voltage_dataset(cycle, params: CellParams | None = None, statespace: StateSpace | None = None):
    """Labels: measured voltage minus the linear model output (offset included)."""
    params = params or CellParams()
    ss = statespace or build_state_space(params)
    z1s, _ = _open_loop(cycle, params, ss)
    y_lin = z1s @ ss.C1 + ss.D1 * cycle.I + ss.v_offset
    labels = cycle.V_meas - y_lin
    inputs = np.column_stack([cycle.I, cycle.V_meas])
    return UncertaintyDataset("voltage", inputs, labels, cycle.cycle)


def build_thermal_dataset(cycle, params: CellParams | None = None, statespace: StateSpace | None = None):
    """Labels: measured surface temperature minus the open-loop thermal model output."""
    params = params or CellParams()
    ss = statespace or build_state_space(params)
    _, z2s = _open_loop(cycle, params, ss)
    labels = cycle.T_meas - z2s @ ss.C2
    inputs = np.column_stack([cycle.I, cycle.V_meas, cycle.T_meas])
    return UncertaintyDataset("thermal", inputs, labels, cycle.cycle)


def fit_pair(cycle, params, statespace, hyper_v=None, hyper_t=None, cap=DEFAULT_CAP):
    """Train both uncertainty models on one cycle (the learning step of the lifetime loop)."""
    dv = build_voltage_dataset(cycle, params, statespace)
    dtm = build_thermal_dataset(cycle, params, statespace)
    return fit(dv, _resolve(hyper_v, dv, cap), cap), fit(dtm, _resolve(hyper_t, dtm, cap), cap)


def _resolve(spec, data, cap):
    """Turn a hyper spec (None, GPHyper or dict of overrides) into a GPHyper."""
    if isinstance(spec, GPHyper):
        return spec
    spec = dict(spec or {})
    y = data.labels[subsample_indices(len(data), cap)]
    d = data.inputs.shape[1]
    var = max(float(np.var(y)), 1e-12)
    sigma_p2 = float(spec.get("sigma_p2", var))
    ls = spec.get("length_scales", spec.get("length_scale", 1.0))
    ls = tuple(np.broadcast_to(np.asarray(ls, dtype=float), (d,)))
    if "jitter" in spec:
        jitter = float(spec["jitter"])
    elif "noise_std" in spec:
        jitter = float(spec["noise_std"]) ** 2
    else:
        jitter = 1e-6 * sigma_p2
    jitter = max(jitter, 1e-12 * sigma_p2)
    return GPHyper(sigma_p2, ls, jitter)


def log_marginal_likelihood(model: GPModel):
    """Diagnostic only; hyperparameters are not optimized."""
    n = model.n
    return float(
        -0.5 * model.y @ model.alpha - np.log(np.diag(model.chol)).sum() - 0.5 * n * math.log(2 * math.pi)
    )
