"""Scenario files and the pipelines behind the CLI.

A scenario is one JSON document describing a cell, a charge protocol, the
fault and uncertainty injected into the synthetic plant, the observer
spectra, the uncertainty-model hyperparameters and where thresholds come
from. Everything downstream is a pure function of that document, so
rerunning a scenario rewrites byte-identical artifacts.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gpr, io
from .detector import (
    FaultDecision,
    LearningLedger,
    Thresholds,
    calibrate,
    decide,
    false_alarms,
    latency,
    lifetime_update,
)
from .errors import BattFDError, ConfigurationError, SchemaError
from .model import build_state_space, uniform_state
from .observers import (
    DEFAULT_THERMAL_POLES,
    DEFAULT_VOLTAGE_POLES,
    ObserverGains,
    ResidualTrace,
    default_gains,
    run_observers,
    settling_steps,
)
from .params import IDENTIFIED, CellParams
from .plant import RECORD_COLUMNS, CycleRecord, FaultConfig, Protocol, UncertaintyConfig, run_cycle

log = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent / "scenarios"
RESIDUAL_COLUMNS = ("t", "r_V", "r_T", "delta_V", "delta_T", "flag_V", "flag_T")

_SCENARIO_KEYS = {
    "name", "description", "cell", "plant_overrides", "protocol", "initial_soc", "T_inf",
    "fault", "uncertainty", "observer", "gp", "thresholds", "seeds", "persistence", "output_dir",
}


def _read_json_document(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigurationError("file not found", source=str(path)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(exc.msg, line=exc.lineno, source=str(path)) from None


@dataclass(frozen=True)
class Scenario:
    name: str
    protocol: Protocol
    initial_soc: float = 0.5
    T_inf: float = 298.15
    cell: str | None = None
    plant_overrides: dict = field(default_factory=dict)
    fault: FaultConfig = field(default_factory=FaultConfig)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    voltage_poles: tuple = DEFAULT_VOLTAGE_POLES
    thermal_poles: tuple = DEFAULT_THERMAL_POLES
    gp: dict | None = None  # None: no learning, residuals use w_hat = 0
    thresholds: dict = field(default_factory=lambda: {"source": "fixed"})
    seeds: dict = field(default_factory=lambda: {"train": 1, "test": 2})
    persistence: tuple = (1, 1)
    description: str = ""
    output_dir: str | None = None
    base_dir: Path | None = None

    def __post_init__(self):
        if not self.name:
            raise ConfigurationError("scenario needs a name")
        if not 0.0 <= self.initial_soc <= 1.0:
            raise ConfigurationError(f"initial_soc {self.initial_soc} outside [0, 1]")
        src = self.thresholds.get("source")
        if src not in ("fixed", "calibrate"):
            raise ConfigurationError(f"threshold source must be 'fixed' or 'calibrate', got {src!r}")
        if src == "calibrate" and not self.thresholds.get("seeds"):
            raise ConfigurationError("calibrated thresholds need a list of no-fault seeds")
        for key in ("train", "test"):
            if key not in self.seeds:
                raise ConfigurationError(f"seeds.{key} missing")
        if self.cell is not None and not self._cell_path().exists():
            raise ConfigurationError(f"cell config {self.cell!r} not found", source=self.name)
        object.__setattr__(self, "voltage_poles", tuple(self.voltage_poles))
        object.__setattr__(self, "thermal_poles", tuple(self.thermal_poles))
        object.__setattr__(self, "persistence", tuple(self.persistence))

    def _cell_path(self):
        p = Path(self.cell)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    # -- (de)serialization ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, d, base_dir=None, source=None):
        d = dict(d)
        unknown = sorted(set(d) - _SCENARIO_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown scenario keys {unknown}", source=source)
        obs = d.pop("observer", {}) or {}
        try:
            return cls(
                name=d.pop("name", ""),
                protocol=Protocol(**d.pop("protocol", {})),
                fault=FaultConfig.from_dict(d.pop("fault", None)),
                uncertainty=UncertaintyConfig.from_dict(d.pop("uncertainty", None)),
                voltage_poles=obs.get("voltage_poles", DEFAULT_VOLTAGE_POLES),
                thermal_poles=obs.get("thermal_poles", DEFAULT_THERMAL_POLES),
                base_dir=Path(base_dir) if base_dir is not None else None,
                **d,
            )
        except TypeError as exc:
            raise ConfigurationError(str(exc), source=source) from None

    def to_dict(self):
        d = {
            "name": self.name,
            "description": self.description,
            "cell": self.cell,
            "plant_overrides": dict(self.plant_overrides),
            "protocol": self.protocol.to_dict(),
            "initial_soc": self.initial_soc,
            "T_inf": self.T_inf,
            "fault": self.fault.to_dict(),
            "uncertainty": self.uncertainty.to_dict(),
            "observer": {"voltage_poles": list(self.voltage_poles), "thermal_poles": list(self.thermal_poles)},
            "gp": self.gp,
            "thresholds": self.thresholds,
            "seeds": self.seeds,
            "persistence": list(self.persistence),
            "output_dir": self.output_dir,
        }
        return d

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_dict(_read_json_document(path), base_dir=path.parent, source=str(path))

    def with_value(self, dotted, value):
        """Copy with one nested field replaced, e.g. ``fault.thermal.power``."""
        d = self.to_dict()
        keys = dotted.split(".")
        node = d
        for k in keys[:-1]:
            if node.get(k) is None:
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value
        return Scenario.from_dict(d, base_dir=self.base_dir)

    # -- model pieces ------------------------------------------------------------------

    def model_params(self) -> CellParams:
        return CellParams.load(self._cell_path()) if self.cell is not None else CellParams()

    def plant_params(self) -> CellParams:
        """Parameters of the synthetic plant: the model's, with any scripted mismatch."""
        p = self.model_params()
        if not self.plant_overrides:
            return p
        changes = {}
        for k, v in self.plant_overrides.items():
            if not hasattr(p, k):
                raise ConfigurationError(f"plant override {k!r} is not a cell parameter", source=self.name)
            # {"eps_a": {"relative": 0.1}} scales the model value
            changes[k] = getattr(p, k) * (1.0 + v["relative"]) if isinstance(v, dict) else v
        return p.replace(**changes)


def resolve_scenario(ref, base_dir=None):
    """A scenario from a path, a shipped name, or an inline dict."""
    if isinstance(ref, Scenario):
        return ref
    if isinstance(ref, dict):
        return Scenario.from_dict(ref, base_dir=base_dir)
    p = Path(ref)
    if base_dir is not None and not p.is_absolute() and (Path(base_dir) / p).exists():
        return Scenario.load(Path(base_dir) / p)
    if p.exists():
        return Scenario.load(p)
    shipped = SCENARIO_DIR / f"{ref}.json"
    if shipped.exists():
        return Scenario.load(shipped)
    raise ConfigurationError(f"scenario {ref!r} not found (path or shipped name)")


def shipped_scenarios():
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json") if not p.stem.startswith(("campaign_", "identify_")))


# -- pipeline ------------------------------------------------------------------------


def simulate(sc: Scenario, seed, with_fault=True, cycle=0) -> CycleRecord:
    p = sc.plant_params()
    start = uniform_state(p, sc.initial_soc, sc.T_inf)
    fault = sc.fault if with_fault else FaultConfig()
    unc = dataclasses.replace(sc.uncertainty, seed=int(seed))
    rec = run_cycle(start, sc.protocol, fault, unc, seed=int(seed), params=p, T_inf=sc.T_inf, cycle=cycle)
    rec.meta["scenario"] = sc.name
    rec.meta["faulty"] = bool(fault.any)
    return rec


@dataclass
class Models:
    params: CellParams
    statespace: object
    gains: ObserverGains
    gp_v: gpr.GPModel | None = None
    gp_t: gpr.GPModel | None = None

    @property
    def learning(self):
        return self.gp_v is not None or self.gp_t is not None


def observer_models(sc: Scenario) -> Models:
    p = sc.model_params()
    ss = build_state_space(p)
    gains = default_gains(ss, sc.voltage_poles, sc.thermal_poles)
    return Models(p, ss, gains)


def train(sc: Scenario, models: Models, record: CycleRecord):
    """Fit both uncertainty models on one clean cycle (returns (gp_v, gp_t))."""
    spec = sc.gp or {}
    return gpr.fit_pair(record, models.params, models.statespace, spec.get("voltage"), spec.get("thermal"),
                        spec.get("cap", gpr.DEFAULT_CAP))


def prepare(sc: Scenario, gp_dir=None) -> Models:
    """Observer gains plus uncertainty models, trained or loaded as the scenario asks."""
    m = observer_models(sc)
    if sc.gp is None:
        return m
    if gp_dir is not None:
        pv, pt = Path(gp_dir) / "gp_voltage.json", Path(gp_dir) / "gp_thermal.json"
        if pv.exists() and pt.exists():
            m.gp_v, m.gp_t = gpr.GPModel.load(pv), gpr.GPModel.load(pt)
            return m
        log.warning("no uncertainty-model artifacts in %s; residuals use w_hat = 0", gp_dir)
        return m
    clean = simulate(sc, sc.seeds["train"], with_fault=False)
    m.gp_v, m.gp_t = train(sc, m, clean)
    return m


def residuals(models: Models, record: CycleRecord, run_id=None) -> ResidualTrace:
    tr = run_observers(record, models.gains, models.statespace, models.params, models.gp_v, models.gp_t)
    tr.meta.update({"run_id": run_id if run_id is not None else str(record.meta.get("seed")),
                    "faulty": bool(record.meta.get("faulty", False))})
    return tr


def thresholds_for(sc: Scenario, models: Models) -> Thresholds:
    spec = sc.thresholds
    if spec["source"] == "fixed":
        return Thresholds(float(spec.get("delta_V", 0.01)), float(spec.get("delta_T", 0.5)), ("fixed",))
    traces = []
    for seed in spec["seeds"]:
        rec = simulate(sc, seed, with_fault=False)
        traces.append(residuals(models, rec, run_id=f"{sc.name}:seed{seed}"))
    return calibrate(traces, skip=int(spec.get("skip", 0)))


@dataclass
class DetectionResult:
    scenario: Scenario
    record: CycleRecord
    trace: ResidualTrace
    thresholds: Thresholds
    decision: FaultDecision
    models: Models

    def summary(self):
        sc = self.scenario
        out = {
            "scenario": sc.name,
            "learning": self.models.learning,
            "thresholds": {"delta_V": self.thresholds.delta_V, "delta_T": self.thresholds.delta_T},
            "samples": len(self.record),
            "max_abs_r_V": float(np.max(np.abs(self.trace.r_V))) if len(self.trace) else 0.0,
            "max_abs_r_T": float(np.max(np.abs(self.trace.r_T))) if len(self.trace) else 0.0,
            "decision": self.decision.to_dict(),
        }
        fv, ft = false_alarms(self.decision)
        if sc.fault.voltage is not None:
            out["voltage_latency"] = latency(self.decision, sc.fault.voltage.t_on, "voltage").to_dict()
        else:
            out["voltage_flags"] = fv
        if sc.fault.thermal is not None:
            out["thermal_latency"] = latency(self.decision, sc.fault.thermal.t_on, "thermal").to_dict()
        else:
            out["thermal_flags"] = ft
        n_v, n_t = settling_steps(self.models.gains, self.models.statespace)
        out["settling_steps"] = {"voltage": n_v, "thermal": n_t}
        out["shorter_than_settling"] = len(self.record) < max(n_v, n_t)
        return out


def detect(sc: Scenario, models: Models | None = None, record: CycleRecord | None = None,
           thresholds: Thresholds | None = None) -> DetectionResult:
    models = models if models is not None else prepare(sc)
    if record is None:
        record = simulate(sc, sc.seeds["test"])
    th = thresholds if thresholds is not None else thresholds_for(sc, models)
    tr = residuals(models, record, run_id=f"{sc.name}:test")
    dec = decide(tr, th, sc.persistence)
    return DetectionResult(sc, record, tr, th, dec, models)


def format_residuals(trace: ResidualTrace, th: Thresholds, dec: FaultDecision):
    n = len(trace)
    return io.format_csv(
        RESIDUAL_COLUMNS,
        [trace.t, trace.r_V, trace.r_T, np.full(n, th.delta_V), np.full(n, th.delta_T),
         dec.voltage_fault.astype(int), dec.thermal_fault.astype(int)],
    )


def write_detection(result: DetectionResult, out_dir):
    out = Path(out_dir)
    result.record.save(out / "record.csv")
    result.models.gains.save(out / "gains.json")
    if result.models.gp_v is not None:
        result.models.gp_v.save(out / "gp_voltage.json")
    if result.models.gp_t is not None:
        result.models.gp_t.save(out / "gp_thermal.json")
    result.thresholds.save(out / "thresholds.cfg")
    io.atomic_write_text(out / "residuals.csv", format_residuals(result.trace, result.thresholds, result.decision))
    io.write_json(out / "decision.json", {"schema": {"name": "decision", "version": 1}, **result.summary()})
    return out


# -- campaigns -----------------------------------------------------------------------


def _detected(result: DetectionResult, channel):
    fault = getattr(result.scenario.fault, channel)
    lat = latency(result.decision, fault.t_on, channel)
    return lat.detected and not lat.false_alarm


def run_bisection(entry, base: Scenario):
    """Minimum detectable amplitude of one fault family by bisection on ``field``."""
    field_ = entry["field"]
    channel = entry.get("channel", field_.split(".")[1])
    models = prepare(base)
    th = thresholds_for(base, models)
    probes = []

    def detected(amplitude):
        sc = base.with_value(field_, float(amplitude))
        res = detect(sc, models=models, thresholds=th)
        hit = _detected(res, channel)
        probes.append({"amplitude": float(amplitude), "detected": hit,
                       "peak": res.summary()["max_abs_r_V" if channel == "voltage" else "max_abs_r_T"]})
        return hit

    from .detector import bisect_amplitude

    lo, hi = bisect_amplitude(detected, float(entry["lo"]), float(entry["hi"]), float(entry.get("tol", 1.0)))
    return {"field": field_, "largest_undetected": lo, "smallest_detected": hi,
            "min_detectable": None if hi is None else (hi if lo is None else 0.5 * (lo + hi)),
            "probes": probes}


def run_sweep(entry, base: Scenario):
    """Parametric plant-mismatch sweep; reports false alarms on no-fault cycles."""
    param = entry["parameter"]
    rows = []
    models = prepare(base)
    th = thresholds_for(base, models)
    for rel in entry["relative_errors"]:
        overrides = dict(base.plant_overrides)
        overrides[param] = {"relative": float(rel)}
        sc = base.with_value("plant_overrides", overrides)
        try:
            res = detect(sc, models=models, thresholds=th)
        except BattFDError as exc:
            rows.append({"relative_error": float(rel), "error": str(exc)})
            continue
        fv, ft = false_alarms(res.decision)
        rows.append({"relative_error": float(rel), "voltage_false_alarms": fv, "thermal_false_alarms": ft,
                     "max_abs_r_V": res.summary()["max_abs_r_V"]})
    onset = next((r["relative_error"] for r in rows if r.get("voltage_false_alarms") or r.get("thermal_false_alarms")), None)
    return {"parameter": param, "rows": rows, "false_alarm_onset": onset}


def run_lifetime(entry, base: Scenario):
    """Fault-gated lifetime learning over a scripted sequence of cycles.

    Cycle 1 is screened with w_hat = 0 against ``bootstrap_thresholds``;
    later cycles use the models in force and the scenario's thresholds.
    """
    n = int(entry["cycles"])
    faulty = set(entry.get("faulty_cycles", []))
    boot = entry.get("bootstrap_thresholds", {"delta_V": 0.25, "delta_T": 0.5})
    boot_th = Thresholds(float(boot["delta_V"]), float(boot["delta_T"]), ("bootstrap",))
    models = observer_models(base)
    th = thresholds_for(base, models) if base.thresholds["source"] == "fixed" else None
    ledger = LearningLedger()
    records = {}
    seed0 = int(entry.get("seed", 100))
    trained_log = []

    def trainer(rec):
        trained_log.append(rec.cycle)
        return train(base, models, rec)

    for cyc in range(1, n + 1):
        rec = simulate(base, seed0 + cyc, with_fault=cyc in faulty, cycle=cyc)
        records[cyc] = rec
        use = th if models.learning else boot_th
        res = detect(base, models=models, record=rec, thresholds=use)
        models.gp_v, models.gp_t = lifetime_update(ledger, rec, res.decision, trainer,
                                                   (models.gp_v, models.gp_t), records)
    return {"ledger": ledger.to_dict(), "trained_on_cycles": trained_log,
            "faulty_cycles": sorted(faulty)}


def run_entry(entry, base_dir=None):
    """One campaign entry; never raises, failures become an ``error`` field.

    ``set`` maps dotted scenario fields to values applied before the run.
    """
    kind = entry.get("type", "scenario")
    name = entry.get("name") or entry.get("scenario")
    row = {"name": name, "type": kind}
    try:
        base = resolve_scenario(entry["scenario"], base_dir)
        for dotted, value in entry.get("set", {}).items():
            base = base.with_value(dotted, value)
        if kind == "scenario":
            row["result"] = detect(base).summary()
        elif kind == "bisection":
            row["result"] = run_bisection(entry, base)
        elif kind == "sweep":
            row["result"] = run_sweep(entry, base)
        elif kind == "lifetime":
            row["result"] = run_lifetime(entry, base)
        else:
            raise ConfigurationError(f"unknown campaign entry type {kind!r}")
        row["status"] = "ok"
    except Exception as exc:  # recorded per entry; the campaign exit code reflects it
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _shipped_file(ref, prefix=""):
    """``ref`` itself if it exists, else the shipped ``<prefix><ref>.json``."""
    path = Path(ref)
    if path.is_file():
        return path
    for cand in (SCENARIO_DIR / f"{prefix}{ref}.json", SCENARIO_DIR / f"{ref}.json"):
        if cand.exists():
            return cand
    return path


def load_campaign(path):
    path = _shipped_file(path, "campaign_")
    doc = _read_json_document(path)
    entries = doc.get("entries", [])
    names = [e.get("name") or e.get("scenario") for e in entries]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigurationError(f"duplicate campaign entry names {dupes}", source=str(path))
    return doc, path.parent


def run_campaign(doc, base_dir=None, workers=1):
    """Run every entry (in parallel when workers > 1); rows keep file order."""
    entries = [copy.deepcopy(e) for e in doc.get("entries", [])]
    if workers > 1 and len(entries) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_entry, entries, [base_dir] * len(entries)))
    else:
        rows = [run_entry(e, base_dir) for e in entries]
    return {"schema": {"name": "campaign_summary", "version": 1}, "campaign": doc.get("name", ""), "rows": rows}


def _headline(row):
    r = row.get("result", {})
    if row["status"] != "ok":
        return row.get("error", "")
    if row["type"] == "scenario":
        bits = []
        for ch in ("voltage", "thermal"):
            lat = r.get(f"{ch}_latency")
            if lat is not None:
                bits.append(f"{ch} latency {lat['seconds']} s" if lat["detected"] else f"{ch} undetected")
            else:
                bits.append(f"{ch} flags {r.get(f'{ch}_flags')}")
        return "; ".join(bits)
    if row["type"] == "bisection":
        return f"min detectable {r['min_detectable']} ({r['largest_undetected']} undetected, {r['smallest_detected']} detected)"
    if row["type"] == "sweep":
        return f"false-alarm onset at {r['false_alarm_onset']}"
    if row["type"] == "lifetime":
        return f"artifact version {r['ledger']['version']}, trained on {r['trained_on_cycles']}"
    return ""


def format_table(summary):
    rows = [(r["name"], r["type"], r["status"], _headline(r)) for r in summary["rows"]]
    head = ("name", "type", "status", "result")
    widths = [max([len(head[i])] + [len(str(r[i])) for r in rows]) for i in range(3)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head[:3], widths)) + "  " + head[3]]
    for r in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(r[:3], widths)) + "  " + r[3])
    return "\n".join(lines) + "\n"


# -- schema check ---------------------------------------------------------------------


def _require(d, keys, what):
    missing = [k for k in keys if k not in d]
    if missing:
        raise SchemaError(f"{what}: missing keys {missing}")


def schema_check(path):
    """Validate an artifact by its schema block (JSON) or header (CSV). Returns its kind."""
    path = Path(path)
    if path.suffix == ".csv":
        try:
            header, _ = io.read_csv(path)
        except ConfigurationError as exc:
            raise SchemaError(str(exc)) from None
        if tuple(header) == RECORD_COLUMNS:
            return "cycle_record"
        if tuple(header) == RESIDUAL_COLUMNS:
            return "residuals"
        raise SchemaError(f"{path}: unrecognized CSV header {header}")
    if path.suffix == ".cfg":
        try:
            Thresholds.load(path)
            return "thresholds"
        except ConfigurationError:
            pass
        try:
            CellParams.load(path)
        except ConfigurationError as exc:
            raise SchemaError(f"neither thresholds nor cell parameters: {exc}") from None
        return "cell_params"
    try:
        d = io.read_json(path)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{path}: not JSON ({exc})") from None
    schema = d.get("schema") if isinstance(d, dict) else None
    if not isinstance(schema, dict) or "name" not in schema or "version" not in schema:
        raise SchemaError(f"{path}: no schema block")
    name, version = schema["name"], schema["version"]
    if version != 1:
        raise SchemaError(f"{path}: unsupported {name} version {version}")
    loaders = {"gp_model": gpr.GPModel.from_dict, "observer_gains": ObserverGains.from_dict,
               "learning_ledger": LearningLedger.from_dict}
    if name in loaders:
        try:
            loaders[name](d)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: malformed {name}: {exc}") from None
    elif name == "cycle_record":
        _require(schema, ["columns"], name)
        csv = path.with_suffix(".csv")
        if csv.exists():
            header, _ = io.read_csv(csv)
            if header != schema["columns"]:
                raise SchemaError(f"{csv}: header does not match its metadata")
    elif name == "identification_report":
        _require(d, ["names", "theta_star", "cost", "evaluations", "converged", "sensitivity"], name)
    elif name == "decision":
        _require(d, ["scenario", "decision", "thresholds"], name)
    elif name == "campaign_summary":
        _require(d, ["rows"], name)
    elif name == "verification":
        _require(d, ["voltage", "thermal"], name)
    else:
        raise SchemaError(f"{path}: unknown artifact kind {name!r}")
    return name



# -- identification problems ------------------------------------------------------------


def load_problem(path):
    """Identification problem file -> (IdentificationProblem, options dict).

    Data come from ``records`` (record CSV paths) or are synthesized from the
    cell under ``synthetic``; ``perturbation`` derives theta0 from the cell's
    own values with seeded random signs.
    """
    from .identify import IdentificationProblem, default_bounds, identified_values

    path = _shipped_file(path, "identify_")
    doc = _read_json_document(path)
    base_dir = path.parent
    base = CellParams.load(base_dir / doc["cell"]) if doc.get("cell") else CellParams()
    records = [CycleRecord.load(base_dir / r) for r in doc.get("records", [])]
    syn = doc.get("synthetic")
    if syn:
        start = uniform_state(base, float(syn.get("initial_soc", 0.5)), float(syn.get("T_inf", 298.15)))
        records.append(run_cycle(start, Protocol(**syn["protocol"]), params=base,
                                 T_inf=float(syn.get("T_inf", 298.15)), seed=int(syn.get("seed", 0))))
    names = tuple(doc.get("parameters", IDENTIFIED))
    unknown = sorted(set(names) - set(IDENTIFIED))
    if unknown:
        raise ConfigurationError(f"unknown identified parameters {unknown}", source=str(path))
    truth = identified_values(base, names)
    if "theta0" in doc:
        theta0 = {k: float(v) for k, v in doc["theta0"].items()}
    else:
        pert = doc.get("perturbation", {"relative": 0.2, "seed": 0})
        rng = np.random.default_rng(int(pert.get("seed", 0)))
        signs = rng.choice([-1.0, 1.0], size=len(truth))
        theta0 = {k: v * (1.0 + s * float(pert["relative"])) for (k, v), s in zip(truth.items(), signs)}
    b = doc.get("bounds", {"relative": 0.5})
    if "relative" in b:
        bounds = default_bounds(truth, float(b["relative"]))
    else:
        bounds = {k: tuple(map(float, v)) for k, v in b.items()}
    try:
        problem = IdentificationProblem(records, theta0, bounds, tuple(doc.get("weights", (1.0, 0.01))), base, names)
    except KeyError as exc:
        raise ConfigurationError(f"missing key {exc}", source=str(path)) from None
    opts = {k: doc[k] for k in ("budget", "restarts", "seed", "polish_nfev") if k in doc}
    opts["name"] = doc.get("name", path.stem)
    opts["truth"] = truth
    return problem, opts
