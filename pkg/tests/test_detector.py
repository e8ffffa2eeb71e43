from types import SimpleNamespace

import numpy as np
import pytest

from battfd import io
from battfd.detector import (
    DEFAULT_DELTA_T,
    DEFAULT_DELTA_V,
    LearningLedger,
    LedgerEntry,
    Thresholds,
    bisect_amplitude,
    calibrate,
    check_gate,
    decide,
    false_alarms,
    latency,
    lifetime_update,
)
from battfd.errors import CalibrationError, ConfigurationError, LearningGateError


def trace(r_V, r_T=None, t0=0.0, **meta):
    r_V = np.asarray(r_V, dtype=float)
    r_T = np.zeros_like(r_V) if r_T is None else np.asarray(r_T, dtype=float)
    return SimpleNamespace(t=t0 + np.arange(len(r_V), dtype=float), r_V=r_V, r_T=r_T, meta=meta)


def test_calibrate_takes_max_abs():
    th = calibrate([trace([0.002, -0.008, 0.005], [0.1, -0.2, 0.05], run_id="a")])
    assert th.delta_V == 0.008
    assert th.delta_T == 0.2
    assert th.provenance == ("a",)


def test_calibrate_over_records_is_max_of_maxima():
    a = trace([0.001, -0.004], [0.3, 0.1], run_id="a")
    b = trace([0.003, 0.002], [-0.6, 0.0], run_id="b")
    th = calibrate([a, b])
    assert (th.delta_V, th.delta_T) == (0.004, 0.6)
    assert th.provenance == ("a", "b")


def test_calibrate_skips_leading_samples():
    th = calibrate([trace([0.5, 0.002, -0.003], [2.0, 0.1, 0.2])], skip=1)
    assert (th.delta_V, th.delta_T) == (0.003, 0.2)


def test_calibration_errors():
    with pytest.raises(CalibrationError):
        calibrate([])
    with pytest.raises(CalibrationError) as info:
        calibrate([trace([0.01], faulty=True, run_id="x")])
    assert info.value.exit_code == 8
    with pytest.raises(CalibrationError):
        calibrate([trace([0.0, 0.0])])


def test_calibrated_family_has_no_false_alarms(rng):
    family = [trace(0.005 * rng.standard_normal(500), 0.1 * rng.standard_normal(500), run_id=i) for i in range(5)]
    th = calibrate(family)
    for rec in family:
        assert false_alarms(decide(rec, th)) == (0, 0)


def test_fixed_default_thresholds():
    th = Thresholds.fixed()
    assert (th.delta_V, th.delta_T) == (DEFAULT_DELTA_V, DEFAULT_DELTA_T) == (0.01, 0.5)


def test_thresholds_must_be_positive():
    with pytest.raises(ConfigurationError):
        Thresholds(0.0, 0.5)


def test_thresholds_config_round_trip(tmp_path):
    th = Thresholds(0.0123, 0.456, ("s11", "s12"))
    th.save(tmp_path / "th.cfg")
    assert Thresholds.load(tmp_path / "th.cfg") == th
    with pytest.raises(ConfigurationError) as info:
        Thresholds.from_config("delta_V = 0.01\ndelta_T = 0.5\nbogus = 1\n")
    assert info.value.line == 3


def test_quiet_trace_has_no_crossing():
    d = decide(trace([0.001, -0.002, 0.003], [0.1, 0.2, -0.3]), Thresholds.fixed())
    assert not d.any_fault
    assert d.first_voltage is None and d.first_thermal is None


def test_equality_with_threshold_is_not_a_fault():
    d = decide(trace([0.01, -0.01, 0.0100001], [0.5, -0.5, 0.0]), Thresholds.fixed())
    assert d.voltage_fault.tolist() == [False, False, True]
    assert not d.thermal_fault.any()
    assert d.first_voltage == 2.0


def test_thermal_latency_of_four_seconds():
    t = np.arange(0.0, 400.0)
    r_T = np.where(t >= 315, 0.8, 0.1)
    d = decide(SimpleNamespace(t=t, r_V=np.zeros_like(t), r_T=r_T), Thresholds.fixed())
    lat = latency(d, 311.0, "thermal")
    assert lat.seconds == 4.0
    assert lat.detected and not lat.false_alarm


def test_crossing_at_onset_is_zero_latency():
    d = decide(trace([0.0, 0.0, 0.02, 0.02]), Thresholds.fixed())
    assert latency(d, 2.0).seconds == 0.0


def test_no_crossing_is_not_detected():
    lat = latency(decide(trace([0.0, 0.001, 0.002]), Thresholds.fixed()), 1.0)
    assert lat.seconds is None and not lat.detected
    assert lat.to_dict()["detected"] is False


def test_early_crossing_is_a_false_alarm():
    d = decide(trace([0.0, 0.02, 0.0, 0.0, 0.03]), Thresholds.fixed())
    lat = latency(d, 3.0)
    assert lat.false_alarm and lat.false_alarm_time == 1.0
    assert lat.seconds == 1.0


def test_onset_outside_record_is_rejected():
    with pytest.raises(ConfigurationError):
        latency(decide(trace([0.0, 0.0]), Thresholds.fixed()), 10.0)


def test_persistence_filter():
    r = [0.02, 0.0, 0.02, 0.02, 0.0, 0.02, 0.02, 0.02]
    th = Thresholds.fixed()
    assert decide(trace(r), th).voltage_fault.sum() == 6
    two_of_three = decide(trace(r), th, (2, 3)).voltage_fault
    assert two_of_three.tolist() == [False, False, True, True, True, True, True, True]
    three_of_three = decide(trace(r), th, (3, 3))
    assert three_of_three.first_voltage == 7.0
    with pytest.raises(ConfigurationError):
        decide(trace(r), th, (3, 2))


def test_decision_export():
    d = decide(trace([0.0, 0.02], [0.6, 0.0]), Thresholds.fixed())
    assert d.to_dict() == {
        "first_voltage": 1.0, "first_thermal": 0.0, "voltage_flags": 1, "thermal_flags": 1,
        "any_fault": True, "persistence": [1, 1],
    }


def test_bisection_brackets_threshold():
    calls = []

    def detected(a):
        calls.append(a)
        return a >= 137.0

    lo, hi = bisect_amplitude(detected, 100.0, 310.0, tol=1.0)
    assert lo < 137.0 <= hi and hi - lo <= 1.0
    assert bisect_amplitude(lambda a: True, 1.0, 2.0) == (None, 1.0)
    assert bisect_amplitude(lambda a: False, 1.0, 2.0) == (2.0, None)


# -- lifetime loop ------------------------------------------------------------------------


def _decision(faulty):
    return decide(trace([0.02 if faulty else 0.0, 0.0]), Thresholds.fixed())


class Trainer:
    def __init__(self):
        self.calls = []

    def __call__(self, record):
        self.calls.append(record.cycle)
        return (f"gpV@{record.cycle}", f"gpT@{record.cycle}")


def _run(script):
    ledger, trainer, models = LearningLedger(), Trainer(), (None, None)
    records = {}
    history = []
    for cycle, faulty in script:
        rec = SimpleNamespace(cycle=cycle)
        records[cycle] = rec
        models = lifetime_update(ledger, rec, _decision(faulty), trainer, models, records)
        history.append(models)
    return ledger, trainer, history


def test_alternating_script_matches_hand_trace():
    script = [(c, c % 2 == 0) for c in range(1, 11)]
    ledger, trainer, history = _run(script)
    # cycle, flagged, used, version, trained_on
    hand = [
        (1, False, True, 1, 1), (2, True, False, 1, 1), (3, False, True, 2, 3), (4, True, False, 2, 3),
        (5, False, True, 3, 5), (6, True, False, 3, 5), (7, False, True, 4, 7), (8, True, False, 4, 7),
        (9, False, True, 5, 9), (10, True, False, 5, 9),
    ]
    assert ledger.entries == [LedgerEntry(*row) for row in hand]
    assert trainer.calls == [1, 3, 5, 7, 9]
    assert history[-1] == ("gpV@9", "gpT@9")


def test_no_clean_cycle_keeps_zero_initialization():
    ledger, trainer, history = _run([(1, True), (2, True)])
    assert trainer.calls == []
    assert history[-1] == (None, None)
    assert ledger.version == 0 and ledger.trained_on is None


def test_faulty_cycle_restores_last_clean_models():
    ledger = LearningLedger(version=4, trained_on=None, last_clean=3)
    trainer = Trainer()
    clean = SimpleNamespace(cycle=3)
    models = lifetime_update(ledger, SimpleNamespace(cycle=4), _decision(True), trainer, ("x", "y"), {3: clean})
    assert models == ("gpV@3", "gpT@3")
    assert ledger.version == 5 and ledger.trained_on == 3
    assert ledger.entries[-1] == LedgerEntry(4, True, False, 5, 3)
    with pytest.raises(ConfigurationError):
        lifetime_update(LearningLedger(trained_on=1, last_clean=2), SimpleNamespace(cycle=5), _decision(True),
                        trainer, ("x", "y"), {})


def test_gate_refuses_flagged_cycles():
    with pytest.raises(LearningGateError) as info:
        check_gate(_decision(True), cycle=7)
    assert info.value.exit_code == 9
    check_gate(_decision(False), cycle=8)


def test_ledger_round_trip(tmp_path):
    ledger, _, _ = _run([(1, False), (2, True), (3, False)])
    ledger.save(tmp_path / "ledger.json")
    doc = io.read_json(tmp_path / "ledger.json")
    assert doc["schema"] == {"name": "learning_ledger", "version": 1}
    assert LearningLedger.from_dict(doc) == ledger
