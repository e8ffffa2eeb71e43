"""Cell parameters, open-circuit-potential maps and the key-value config format."""

from __future__ import annotations

import dataclasses
import functools
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConfigurationError, OCPDomainError

FARADAY = 96485.33212
GAS_CONSTANT = 8.314462618

_BUILTIN_PREFIX = "builtin:"


class OCPMap:
    """Monotone piecewise-cubic (PCHIP) map from surface stoichiometry to volts.

    The scalar methods avoid scipy call overhead because the plant and the
    observers evaluate the maps once per sample.
    """

    def __init__(self, stoich, volts, name="ocp", source=None):
        x = np.asarray(stoich, dtype=float)
        v = np.asarray(volts, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 2:
            raise ConfigurationError(f"{name}: need two equal-length columns with >= 2 rows")
        if not np.all(np.diff(x) > 0):
            raise ConfigurationError(f"{name}: stoichiometry column must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError(f"{name}: non-finite voltage entries")
        self.name = name
        self.source = source
        self.knots = x
        self.values = v
        self._pchip = PchipInterpolator(x, v, extrapolate=False)
        self._dpchip = self._pchip.derivative()
        self._x = x.tolist()
        # coefficient rows per interval, highest power first
        self._c = self._pchip.c.T.tolist()
        self.lo = float(x[0])
        self.hi = float(x[-1])

    @classmethod
    def from_csv(cls, path, name=None):
        path = Path(path)
        with open(path) as fh:
            text = fh.read()
        return cls._from_text(text, name or path.stem, str(path))

    @classmethod
    def builtin(cls, which):
        return _builtin_map(which)

    @classmethod
    def _from_text(cls, text, name, source):
        rows = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise ConfigurationError("expected two columns", line=lineno, source=source)
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                if rows:
                    raise ConfigurationError(f"non-numeric row {line!r}", line=lineno, source=source)
                continue  # header
        arr = np.array(rows, dtype=float)
        if arr.ndim != 2:
            raise ConfigurationError("no data rows", source=source)
        return cls(arr[:, 0], arr[:, 1], name=name, source=source)

    def _check(self, s):
        if not (self.lo <= s <= self.hi) or s != s:
            raise OCPDomainError(self.name, s, self.lo, self.hi)

    def _interval(self, s):
        k = bisect_right(self._x, s) - 1
        return min(max(k, 0), len(self._c) - 1)

    def value(self, s):
        self._check(s)
        k = self._interval(s)
        a, b, c, d = self._c[k]
        h = s - self._x[k]
        return ((a * h + b) * h + c) * h + d

    def slope(self, s):
        self._check(s)
        k = self._interval(s)
        a, b, c, _ = self._c[k]
        h = s - self._x[k]
        return (3.0 * a * h + 2.0 * b) * h + c

    def at_knot(self, s, tol=1e-12):
        k = self._interval(s)
        return abs(s - self._x[k]) < tol or (k + 1 < len(self._x) and abs(s - self._x[k + 1]) < tol)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(~((s >= self.lo) & (s <= self.hi))):
            bad = s[~((s >= self.lo) & (s <= self.hi))].flat[0]
            raise OCPDomainError(self.name, float(bad), self.lo, self.hi)
        return self._pchip(s)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        return self._dpchip(s)

    def __eq__(self, other):
        return (
            isinstance(other, OCPMap)
            and np.array_equal(self.knots, other.knots)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.knots.tobytes(), self.values.tobytes()))

    def __repr__(self):
        return f"OCPMap({self.name!r}, {self.knots.size} knots, source={self.source!r})"


@functools.lru_cache(maxsize=None)
def _builtin_map(which):
    try:
        text = resources.files("battfd.data").joinpath(f"ocp_{which}.csv").read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"no builtin OCP map named {which!r}")
    return OCPMap._from_text(text, which, _BUILTIN_PREFIX + which)


def _default_anode():
    return OCPMap.builtin("anode")


def _default_cathode():
    return OCPMap.builtin("cathode")


_POSITIVE = (
    "D", "X", "Y", "A_a", "A_c", "L_a", "L_c", "rho", "C_p", "k_th", "h_conv", "V_b",
    "dt", "R_b", "m_Li", "alpha_a", "alpha_c", "i0_a", "i0_c", "c_max_a", "c_max_c",
    "F", "R_gas", "capacity_Ah",
)


@dataclass(frozen=True)
class CellParams:
    """Physical and geometric constants of the electrochemical-thermal model.

    Defaults are the identified values for a 3 Ah 18650 graphite/NMC cell;
    geometry, kinetics and saturation concentrations that were never
    published are typical-18650 placeholders.
    """

    # identified
    D: float = 1.022e-14
    A_a: float = 0.09
    A_c: float = 0.048
    eps_a: float = 0.8
    eps_c: float = 0.6516
    R_b: float = 0.006
    m_Li: float = 0.1796
    h_conv: float = 16.78
    C_p: float = 907.0
    k_th: float = 1.79
    # placeholders
    X: float = 1e-5
    Y: float = 9e-3
    L_a: float = 7e-5
    L_c: float = 7e-5
    c_max_a: float = 3.1e4
    c_max_c: float = 9.0e4
    alpha_a: float = 0.5
    alpha_c: float = 0.5
    i0_a: float = 1.0
    i0_c: float = 1.0
    rho: float = 2700.0
    V_b: float = math.pi * 9e-3**2 * 0.065
    capacity_Ah: float = 3.0
    theta_a_0: float = 0.05
    # discretization
    N: int = 10
    M: int = 5
    dt: float = 1.0
    # constants
    F: float = FARADAY
    R_gas: float = GAS_CONSTANT
    ocp_anode: OCPMap = field(default_factory=_default_anode, compare=True)
    ocp_cathode: OCPMap = field(default_factory=_default_cathode, compare=True)

    def __post_init__(self):
        for name in _POSITIVE:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be a finite positive number, got {v!r}")
        for name in ("eps_a", "eps_c"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise ConfigurationError(f"{name} must lie in (0, 1], got {v!r}")
        for name in ("N", "M"):
            v = getattr(self, name)
            if int(v) != v or v < 2:
                raise ConfigurationError(f"{name} must be an integer >= 2, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (0 <= self.theta_a_0 < 1):
            raise ConfigurationError("theta_a_0 must lie in [0, 1)")

    # derived quantities are properties so they never go stale
    @property
    def a_a(self):
        return 3.0 * self.eps_a / self.X

    @property
    def a_c(self):
        return 3.0 * self.eps_c / self.X

    @property
    def alpha1(self):
        return -(self.eps_a * self.A_a * self.L_a) / (self.eps_c * self.A_c * self.L_c)

    @property
    def alpha2(self):
        return self.m_Li / (self.eps_c * self.A_c * self.L_c)

    @property
    def dx(self):
        return self.X / self.N

    @property
    def dy(self):
        return self.Y / self.M

    @property
    def heat_capacity(self):
        """Lumped heat capacity rho*C_p*V_b in J/K."""
        return self.rho * self.C_p * self.V_b

    @property
    def concentration_weights(self):
        """Normalized node weights under which pure diffusion conserves the weighted sum."""
        w = np.arange(1, self.N + 1, dtype=float) ** 2
        return w / w.sum()

    @property
    def temperature_weights(self):
        """Normalized cylindrical volume weights for the cell-average temperature."""
        w = np.arange(1, self.M + 1, dtype=float)
        return w / w.sum()

    @property
    def charge_rate(self):
        """Change of the weighted mean concentration per ampere-second (mol/m^3 per C).

        Follows from the discrete boundary row; positive current (discharge)
        lowers the anode concentration.
        """
        n = self.N
        beta1 = -(1.0 / (self.a_a * self.F * self.A_a * self.L_a * self.dx)) * (1.0 + 1.0 / n)
        w = np.arange(1, n + 1, dtype=float) ** 2
        return -n * n * beta1 / w.sum()

    @property
    def anode_window(self):
        """Anode stoichiometry at 0% and 100% state of charge."""
        span = self.capacity_Ah * 3600.0 * self.charge_rate / self.c_max_a
        return self.theta_a_0, self.theta_a_0 + span

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # -- key-value config -------------------------------------------------

    def to_config(self) -> str:
        lines = ["# cell parameters, SI units"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, OCPMap):
                v = v.source or "inline"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        from .io import atomic_write_text

        atomic_write_text(path, self.to_config())

    @classmethod
    def from_config(cls, text, source=None, base_dir=None):
        values = parse_kv(text, source=source)
        return cls.from_mapping(values, source=source, base_dir=base_dir)

    @classmethod
    def from_mapping(cls, values, source=None, base_dir=None):
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, (raw, lineno) in values.items():
            if key not in names:
                raise ConfigurationError(f"unknown cell parameter {key!r}", line=lineno, source=source)
            if key in ("ocp_anode", "ocp_cathode"):
                kwargs[key] = _load_ocp(raw, key, base_dir, lineno, source)
            elif key in ("N", "M"):
                try:
                    kwargs[key] = int(raw)
                except ValueError:
                    raise ConfigurationError(f"{key} must be an integer", line=lineno, source=source)
            else:
                try:
                    kwargs[key] = float(raw)
                except ValueError:
                    raise ConfigurationError(f"{key}: cannot parse {raw!r} as a number",
                                             line=lineno, source=source)
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read cell config: {exc}", source=str(path))
        return cls.from_config(text, source=str(path), base_dir=path.parent)


def _load_ocp(raw, key, base_dir, lineno, source):
    which = "anode" if key == "ocp_anode" else "cathode"
    if raw in ("default", "builtin", ""):
        return OCPMap.builtin(which)
    if raw.startswith(_BUILTIN_PREFIX):
        return OCPMap.builtin(raw[len(_BUILTIN_PREFIX):])
    p = Path(raw)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    if not p.exists():
        raise ConfigurationError(f"OCP file {raw!r} not found", line=lineno, source=source)
    m = OCPMap.from_csv(p, name=which)
    return m


def parse_kv(text, source=None):
    """Parse ``name = value`` lines; returns {name: (value_string, line_number)}."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"expected 'name = value', got {raw.strip()!r}",
                                     line=lineno, source=source)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError("empty parameter name", line=lineno, source=source)
        if key in out:
            raise ConfigurationError(f"duplicate key {key!r}", line=lineno, source=source)
        out[key] = (value, lineno)
    return out


# parameters the identification routine may adjust
IDENTIFIED = ("D", "A_a", "A_c", "R_b", "m_Li", "eps_a", "eps_c", "h_conv", "C_p", "k_th")
