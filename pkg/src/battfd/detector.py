"""Threshold decision logic, threshold calibration, latency metrics and the
fault-gated lifetime learning loop."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import io
from .errors import CalibrationError, ConfigurationError, LearningGateError
from .params import parse_kv

DEFAULT_DELTA_V = 0.01  # V
DEFAULT_DELTA_T = 0.5  # K


@dataclass(frozen=True)
class Thresholds:
    delta_V: float
    delta_T: float
    provenance: tuple = ()

    def __post_init__(self):
        if not (self.delta_V > 0 and self.delta_T > 0):
            raise ConfigurationError("thresholds must be strictly positive")
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @classmethod
    def fixed(cls, delta_V=DEFAULT_DELTA_V, delta_T=DEFAULT_DELTA_T):
        return cls(delta_V, delta_T, ("fixed",))

    def to_config(self):
        lines = [
            "# detection thresholds",
            f"delta_V = {self.delta_V!r}",
            f"delta_T = {self.delta_T!r}",
            f"provenance = {','.join(self.provenance)}",
        ]
        return "\n".join(lines) + "\n"

    def save(self, path):
        io.atomic_write_text(path, self.to_config())

    @classmethod
    def from_config(cls, text, source=None):
        values = parse_kv(text, source)
        try:
            dv = float(values.pop("delta_V")[0])
            dt = float(values.pop("delta_T")[0])
        except KeyError as exc:
            raise ConfigurationError(f"missing threshold {exc.args[0]}", source=source) from None
        except ValueError as exc:
            raise ConfigurationError(str(exc), source=source) from None
        prov = values.pop("provenance", ("",))[0]
        for key, (_, line) in values.items():
            raise ConfigurationError(f"unknown threshold key {key!r}", line=line, source=source)
        return cls(dv, dt, tuple(p for p in prov.split(",") if p))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_config(fh.read(), source=str(path))


def calibrate(records, skip=0) -> Thresholds:
    """delta = max |r| over every sample of every no-fault residual trace.

    ``records`` holds ResidualTrace-like objects (``r_V``, ``r_T`` and a
    ``meta`` dict with ``run_id`` and optionally ``faulty``). The first
    ``skip`` samples of each trace are ignored.
    """
    records = list(records)
    if not records:
        raise CalibrationError("calibration needs at least one no-fault record")
    dv = dt = 0.0
    prov = []
    for i, rec in enumerate(records):
        meta = getattr(rec, "meta", {}) or {}
        run_id = str(meta.get("run_id", i))
        if meta.get("faulty"):
            raise CalibrationError(f"record {run_id} contains an injected fault")
        rv = np.abs(np.asarray(rec.r_V)[skip:])
        rt = np.abs(np.asarray(rec.r_T)[skip:])
        if rv.size:
            dv = max(dv, float(rv.max()))
            dt = max(dt, float(rt.max()))
        prov.append(run_id)
    if dv <= 0 or dt <= 0:
        raise CalibrationError("calibration residuals are identically zero; thresholds would be 0")
    return Thresholds(dv, dt, tuple(prov))


@dataclass(frozen=True)
class FaultDecision:
    t: np.ndarray
    voltage_fault: np.ndarray
    thermal_fault: np.ndarray
    first_voltage: float | None
    first_thermal: float | None
    persistence: tuple = (1, 1)

    @property
    def any_fault(self):
        return bool(self.voltage_fault.any() or self.thermal_fault.any())

    def to_dict(self):
        return {
            "first_voltage": self.first_voltage,
            "first_thermal": self.first_thermal,
            "voltage_flags": int(self.voltage_fault.sum()),
            "thermal_flags": int(self.thermal_fault.sum()),
            "any_fault": self.any_fault,
            "persistence": list(self.persistence),
        }


def _persist(raw, k, n):
    """True where at least k of the last n raw flags (current included) are set."""
    if k == 1 and n == 1:
        return raw
    c = np.concatenate([[0], np.cumsum(raw.astype(int))])
    idx = np.arange(1, len(raw) + 1)
    window = c[idx] - c[np.maximum(idx - n, 0)]
    return window >= k


def _first(t, flags):
    hit = np.flatnonzero(flags)
    return float(t[hit[0]]) if hit.size else None


def decide(residuals, thresholds: Thresholds, persistence=(1, 1)) -> FaultDecision:
    """Flag samples with |r| strictly above the threshold; |r| == delta is no fault."""
    k, n = persistence
    if not (1 <= k <= n):
        raise ConfigurationError("persistence filter needs 1 <= k <= n")
    t = np.asarray(residuals.t, dtype=float)
    v = _persist(np.abs(np.asarray(residuals.r_V)) > thresholds.delta_V, k, n)
    th = _persist(np.abs(np.asarray(residuals.r_T)) > thresholds.delta_T, k, n)
    return FaultDecision(t, v, th, _first(t, v), _first(t, th), (k, n))


@dataclass(frozen=True)
class Latency:
    seconds: float | None
    false_alarm: bool = False
    false_alarm_time: float | None = None

    @property
    def detected(self):
        return self.seconds is not None

    def to_dict(self):
        return dataclasses.asdict(self) | {"detected": self.detected}


def latency(decision: FaultDecision, fault_onset, channel="voltage") -> Latency:
    """First crossing at or after onset minus onset; earlier crossings count as false alarms."""
    flags = decision.voltage_fault if channel == "voltage" else decision.thermal_fault
    t = decision.t
    if len(t) and not (t[0] <= fault_onset <= t[-1]):
        raise ConfigurationError(f"fault onset {fault_onset} s outside the record")
    before = flags & (t < fault_onset)
    fa_time = _first(t, before)
    hit = _first(t, flags & (t >= fault_onset))
    return Latency(None if hit is None else hit - fault_onset, fa_time is not None, fa_time)


def false_alarms(decision: FaultDecision):
    """Count of flagged samples per channel (meaningful on no-fault records)."""
    return int(decision.voltage_fault.sum()), int(decision.thermal_fault.sum())


def bisect_amplitude(detected: Callable[[float], bool], lo, hi, tol=1.0, max_iter=40):
    """Smallest detectable amplitude in [lo, hi] assuming monotone detectability.

    Returns (lo, hi) bracketing the transition; lo undetected and hi detected.
    """
    if detected(lo):
        return None, lo
    if not detected(hi):
        return hi, None
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if detected(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


# -- lifetime learning ---------------------------------------------------------------


@dataclass(frozen=True)
class LedgerEntry:
    cycle: int
    fault_detected: bool
    used_for_training: bool
    artifact_version: int
    trained_on: int | None


@dataclass
class LearningLedger:
    entries: list = field(default_factory=list)
    version: int = 0
    trained_on: int | None = None
    last_clean: int | None = None

    def to_dict(self):
        return {
            "schema": {"name": "learning_ledger", "version": 1},
            "version": self.version,
            "trained_on": self.trained_on,
            "last_clean": self.last_clean,
            "entries": [dataclasses.asdict(e) for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            entries=[LedgerEntry(**e) for e in d.get("entries", [])],
            version=d.get("version", 0),
            trained_on=d.get("trained_on"),
            last_clean=d.get("last_clean"),
        )

    def save(self, path):
        io.write_json(path, self.to_dict())


def check_gate(decision: FaultDecision, cycle=None):
    if decision.any_fault:
        raise LearningGateError(
            f"cycle {cycle} was flagged faulty; uncertainty models train only on fault-free cycles"
        )


def lifetime_update(ledger: LearningLedger, record, decision: FaultDecision, trainer, models=(None, None),
                    records_by_cycle=None):
    """Apply one step of the fault-gated learning loop.

    ``trainer(record) -> (gp_v, gp_t)``. A clean cycle replaces the models
    and bumps the artifact version. A faulty cycle keeps models trained on
    the most recent clean cycle, retraining from ``records_by_cycle`` only
    if the current models came from elsewhere. Returns the new models.
    """
    cycle = record.cycle
    faulty = decision.any_fault
    used = False
    if not faulty:
        check_gate(decision, cycle)
        models = trainer(record)
        ledger.version += 1
        ledger.trained_on = cycle
        ledger.last_clean = cycle
        used = True
    elif ledger.last_clean is not None and ledger.trained_on != ledger.last_clean:
        source = (records_by_cycle or {}).get(ledger.last_clean)
        if source is None:
            raise ConfigurationError(f"record of clean cycle {ledger.last_clean} is unavailable")
        models = trainer(source)
        ledger.version += 1
        ledger.trained_on = ledger.last_clean
    ledger.entries.append(LedgerEntry(cycle, faulty, used, ledger.version, ledger.trained_on))
    return models
