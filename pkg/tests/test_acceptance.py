"""Release checklist for the whole package.

Each numbered test is one gate; `pytest tests/test_acceptance.py -v`
prints one pass/fail line per gate. The slow gates share one full
default batch (10 subjects x 5 conditions x 5 trials) run once per
session.
"""

import csv
import glob
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from sharedsteer.cli import ExperimentPlan, run_batch
from sharedsteer.driver import DriverParams
from sharedsteer.emg import (CHANNEL_COUNT, EmgFrame, EnvelopeConfig,
                             EnvelopeTracker, calibrate, normalize,
                             rms_envelope)
from sharedsteer.engine import (SimConfig, StepRecord, TrialLog,
                                run_guidance_only, run_trial, trial_seed)
from sharedsteer.guidance import (GuidanceConfig, MODES, PreviewErrors,
                                  authority_gain, guidance_torque)
from sharedsteer.metrics import (compute_trial_metrics, latin_squares,
                                 rm_anova, studentized_range_quantile)
from sharedsteer.teleop import Session, parse_input, replay
from sharedsteer.track import TrackLayout

QUIET = lambda *a: None


@pytest.fixture(scope="session")
def default_batch(tmp_path_factory):
    """The full canonical experiment, run once and reused by the gates."""
    out = str(tmp_path_factory.mktemp("acceptance") / "batch")
    start = time.perf_counter()
    failures, total = run_batch(ExperimentPlan(), SimConfig(),
                                DriverParams(), out, echo=QUIET)
    elapsed = time.perf_counter() - start
    return {"out": out, "failures": failures, "total": total,
            "elapsed": elapsed}


def test_01_guidance_torque_hand_values():
    start = time.perf_counter()
    cfg = GuidanceConfig()
    err = PreviewErrors(lateral_near=0.5, heading_far=0.1)
    torque = guidance_torque(err, 1.0, cfg)
    assert abs(torque - 0.475) <= 1e-12
    # 0.19 * 30 = 5.7 exceeds the cap and must clamp exactly
    big = PreviewErrors(lateral_near=30.0, heading_far=0.0)
    assert guidance_torque(big, 1.0, cfg) == 5.0
    assert guidance_torque(PreviewErrors(-30.0, 0.0), 1.0, cfg) == -5.0
    assert time.perf_counter() - start < 1.0


def test_02_authority_law_over_all_modes():
    levels = (0.0, 0.25, 0.5, 0.75, 1.0, 1.2)
    expected = {
        "manual": (0.0,) * 6,
        "hg-strong": (1.0,) * 6,
        "hg-normal": (0.5,) * 6,
        # adaptive gains clamp to [0, 1]: fully relaxed grip hands the
        # decreasing law all authority, activation past the calibration
        # reference saturates both laws
        "hg-decrease": (1.0, 0.75, 0.5, 0.25, 0.0, 0.0),
        "hg-increase": (0.0, 0.25, 0.5, 0.75, 1.0, 1.0),
    }
    assert set(expected) == set(MODES)
    for mode in MODES:
        for r, want in zip(levels, expected[mode]):
            out = authority_gain(mode, r)
            assert out.gain == want, (mode, r)
            assert out.activation == r


def test_03_degenerate_adaptive_modes_match_fixed_modes(dlc_path, subject0):
    start = time.perf_counter()
    driver, synth, cal = subject0
    pairs = [("hg-decrease", 1.0, "manual"),
             ("hg-decrease", 0.0, "hg-strong"),
             ("hg-increase", 0.0, "manual"),
             ("hg-increase", 1.2, "hg-strong")]
    for adaptive, r, fixed in pairs:
        logs = []
        for mode in (adaptive, fixed):
            cfg = SimConfig(seed=trial_seed(0, MODES.index(fixed), 0),
                            guidance=GuidanceConfig(mode=mode,
                                                    smoothing_time=0.0),
                            r_override=r)
            logs.append(run_trial(cfg, driver, cal, synth, path=dlc_path))
        assert logs[0].records_csv() == logs[1].records_csv(), (adaptive, r)
        assert logs[0].emg_csv() == logs[1].emg_csv(), (adaptive, r)
    assert time.perf_counter() - start < 30.0


def test_04_haptic_torque_capped_across_full_batch(default_batch):
    assert default_batch["total"] == 250
    assert default_batch["failures"] == 0
    logs = sorted(glob.glob(os.path.join(default_batch["out"], "logs",
                                         "*.csv")))
    logs = [p for p in logs if not p.endswith("_emg.csv")]
    assert len(logs) == 250
    worst = 0.0
    for path in logs:
        with open(path) as fh:
            for row in csv.DictReader(fh):
                worst = max(worst, abs(float(row["Th"])))
    assert worst <= 5.0 + 1e-12, f"guidance torque reached {worst}"


def test_05_driver_effort_orders_with_authority(default_batch):
    rows = list(csv.DictReader(
        open(os.path.join(default_batch["out"], "condition_means.csv"))))
    cells = {(int(r["subject"]), r["condition"]):
             float(r["rms_driver_torque"]) for r in rows}
    subjects = sorted({s for s, _ in cells})
    assert len(subjects) == 10
    holds = sum(cells[(s, "Manual")] > cells[(s, "HG-Normal")]
                > cells[(s, "HG-Strong")] for s in subjects)
    assert holds >= 9, f"effort ordering held for only {holds}/10 subjects"
    assert default_batch["elapsed"] < 120.0


def test_06_guidance_only_convergence_and_mirror():
    log = run_guidance_only(SimConfig(max_duration=12.0), 0.5)
    reached = [r.t for r in log.records if abs(r.lane_offset) < 0.05]
    assert reached and min(reached) < 10.0
    assert max(abs(r.lane_offset) for r in log.records if r.t >= 10.0) < 0.05
    minus = run_guidance_only(SimConfig(max_duration=12.0), -0.5)
    assert len(minus.records) == len(log.records)
    for a, b in zip(log.records, minus.records):
        assert abs(a.y + b.y) <= 1e-9
        assert abs(a.phi_deg + b.phi_deg) <= 1e-9
        assert abs(a.torque_haptic + b.torque_haptic) <= 1e-9


def test_07_statistics_oracles():
    a = rm_anova([(1, 2), (2, 3), (3, 5)])
    assert abs(a.f_statistic - 16.0) <= 1e-9
    assert abs(a.p_value - 0.0572) <= 5e-4
    rng = np.random.default_rng(987)
    for _ in range(100):
        n = int(rng.integers(2, 12))
        k = int(rng.integers(2, 6))
        data = rng.normal(size=(n, k)) * float(rng.uniform(0.1, 50.0))
        res = rm_anova(data)
        total = float(np.sum((data - data.mean()) ** 2))
        parts = res.ss_condition + res.ss_subject + res.ss_error
        assert parts == pytest.approx(total, rel=1e-9)
    assert studentized_range_quantile(0.05, 4, 36) == pytest.approx(
        3.809, abs=0.01)


def _ramp_trace(layout, x):
    s = layout.section_stations
    top = layout.lane_width
    if x < s[1] or x >= s[4]:
        return 0.0, 0.0
    if x < s[2]:
        slope = top / (s[2] - s[1])
        return slope * (x - s[1]), math.atan(slope)
    if x < s[3]:
        return top, 0.0
    slope = top / (s[4] - s[3])
    return top - slope * (x - s[3]), -math.atan(slope)


def _synthetic_log(layout, td=1.0, act=0.5):
    records = []
    for i in range(371):
        x = 0.5 * i
        y, psi = _ramp_trace(layout, x)
        phi = 10.0 if x == 70.0 else (-20.0 if x == 120.0 else 0.0)
        records.append(StepRecord(
            t=x / 13.9, x=x, y=y, psi=psi, phi_deg=phi, torque_driver=td,
            torque_haptic=0.0, torque_aligning=0.0, authority=0.0,
            activation=act, e_y_near=0.0, e_th_far=0.0, lane_offset=0.0,
            grip=0.3))
    return TrialLog(metadata={"aborted": False}, records=records,
                    emg_records=[])


def test_08_metrics_on_synthetic_logs():
    layout = TrackLayout()
    log = _synthetic_log(layout)
    m = compute_trial_metrics(log, layout)
    assert m.rms_driver_torque == 1.0
    assert m.max_pos_swa == 10.0
    assert m.min_neg_swa == -20.0
    assert m.lateral_error_lc1 == 0.0
    assert m.lateral_error_lc2 == 0.0
    assert m.rms_normalized_semg == 50.0
    # nothing outside the maneuver window may move any measure
    for r in log.records:
        if r.x < 50.0 or r.x > 135.0:
            r.torque_driver += 37.0
            r.phi_deg = 999.0
            r.activation *= 9.0
            r.y += 2.5
    assert compute_trial_metrics(log, layout) == m


def test_09_activation_pipeline_oracles():
    amp, freq, rate = 0.8, 20.0, 200.0
    tracker = EnvelopeTracker(EnvelopeConfig())
    for i in range(400):
        ch = np.zeros(CHANNEL_COUNT)
        ch[0] = amp * math.sin(2 * math.pi * freq * i / rate)
        tracker.push(EmgFrame(i / rate, ch))
    assert tracker.channel_rms[0] == pytest.approx(amp / math.sqrt(2),
                                                   abs=1e-9)

    def flat(value):
        ch = np.full(CHANNEL_COUNT, value)
        return [EmgFrame(i / rate, ch.copy()) for i in range(400)]

    cal = calibrate([flat(0.7), flat(0.8), flat(0.9)])
    assert cal.reference == pytest.approx(0.8, abs=1e-12)
    assert cal.rep_values == pytest.approx((0.7, 0.8, 0.9), abs=1e-12)

    rng = np.random.default_rng(11)
    samples = rng.normal(0.0, 0.3, size=(120, CHANNEL_COUNT))
    lam = 3.0
    base = rms_envelope([EmgFrame(i / rate, samples[i])
                         for i in range(len(samples))])
    scaled = rms_envelope([EmgFrame(i / rate, lam * samples[i])
                           for i in range(len(samples))])
    for (_, lo), (_, hi) in zip(base, scaled):
        assert hi == pytest.approx(lam * lo, abs=1e-12)

    assert normalize(1.0, cal) == pytest.approx(1.25, abs=1e-12)
    assert normalize(1.0, cal) > 1.0


def _tree_bytes(root):
    out = {}
    for path in glob.glob(os.path.join(root, "**", "*"), recursive=True):
        if os.path.isfile(path):
            out[os.path.relpath(path, root)] = open(path, "rb").read()
    return out


def test_10_batch_and_session_replay_determinism(tmp_path):
    plan = ExperimentPlan(subjects=2, trials=1,
                          conditions=["manual", "hg-increase"])
    dirs = [str(tmp_path / "a"), str(tmp_path / "b")]
    for d in dirs:
        assert run_batch(plan, SimConfig(), DriverParams(), d,
                         echo=QUIET) == (0, 4)
    first, second = _tree_bytes(dirs[0]), _tree_bytes(dirs[1])
    assert set(first) == set(second)
    for name in first:
        assert first[name] == second[name], f"{name} differs across runs"

    base = SimConfig(max_duration=3.0,
                     guidance=GuidanceConfig(mode="hg-increase"))
    session = Session(base)
    session.apply_input(parse_input(
        {"type": "input", "keys": {"left": True, "grip": True},
         "start": True}))
    for _ in range(15):
        session.step_block()
    session.apply_input(parse_input(
        {"type": "input", "keys": {"left": False, "right": True}}))
    for _ in range(15):
        session.step_block()
    session.apply_input(parse_input(
        {"type": "input", "torque": 1.25, "grip": 0.6}))
    while session.phase == "running":
        session.step_block()
    log = replay(session.trace, base)
    assert log.records_csv() == session.log.records_csv()
    assert log.emg_csv() == session.log.emg_csv()
    assert log.metadata_json() == session.log.metadata_json()


def test_11_balanced_presentation_orders():
    orders = latin_squares(5, 10)
    assert len(orders) == 10
    full = set(range(5))
    for row in orders:
        assert set(row) == full
    for square in (orders[:5], orders[5:]):
        for col in range(5):
            assert {row[col] for row in square} == full
    assert list(orders[5]) == list(reversed(orders[0]))
