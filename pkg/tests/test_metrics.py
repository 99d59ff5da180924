import csv
import io
import math
from dataclasses import replace

import numpy as np
import pytest

from sharedsteer.engine import StepRecord, TrialLog
from sharedsteer.metrics import (
    AnovaResult,
    TlxSheet,
    compute_trial_metrics,
    fisher_hayter,
    latin_squares,
    rm_anova,
    significance_tier,
    statistics_report,
    studentized_range_quantile,
    tlx_score,
    weights_from_choices,
)
from sharedsteer.track import TrackLayout

LAYOUT = TrackLayout()


def make_record(x, y, psi, td=1.0, phi=0.0, act=0.5):
    return StepRecord(t=x / 13.9, x=x, y=y, psi=psi, phi_deg=phi,
                      torque_driver=td, torque_haptic=0.0,
                      torque_aligning=0.0, authority=0.0, activation=act,
                      e_y_near=0.0, e_th_far=0.0, lane_offset=0.0, grip=0.3)


def ramp_trace(x, top=3.6, bottom=0.0):
    """Piecewise-linear double lane change with exact corners on the grid."""
    s = LAYOUT.section_stations
    if x < s[1]:
        return bottom, 0.0
    if x < s[2]:
        slope = (top - bottom) / (s[2] - s[1])
        return bottom + slope * (x - s[1]), math.atan(slope)
    if x < s[3]:
        return top, 0.0
    if x < s[4]:
        slope = (top - bottom) / (s[4] - s[3])
        return top - slope * (x - s[3]), -math.atan(slope)
    return bottom, 0.0


def synthetic_log(td=1.0, act=0.5, spikes=True):
    records = []
    for i in range(371):
        x = 0.5 * i
        y, psi = ramp_trace(x)
        phi = 0.0
        if spikes:
            if x == 70.0:
                phi = 10.0
            elif x == 120.0:
                phi = -20.0
        records.append(make_record(x, y, psi, td=td, phi=phi, act=act))
    return TrialLog(metadata={"aborted": False}, records=records,
                    emg_records=[])


class TestTrialMetrics:
    def test_constant_torque_rms(self):
        m = compute_trial_metrics(synthetic_log(td=1.0), LAYOUT)
        assert m.rms_driver_torque == 1.0

    def test_swa_extrema(self):
        m = compute_trial_metrics(synthetic_log(), LAYOUT)
        assert m.max_pos_swa == 10.0
        assert m.min_neg_swa == -20.0

    def test_extrema_ignore_out_of_window_spikes(self):
        log = synthetic_log()
        for r in log.records:
            if r.x < 50.0 or r.x > 135.0:
                r.phi_deg = 500.0 if r.x < 50.0 else -500.0
        m = compute_trial_metrics(log, LAYOUT)
        assert m.max_pos_swa == 10.0
        assert m.min_neg_swa == -20.0

    def test_perfect_tracking_has_zero_lane_errors(self):
        m = compute_trial_metrics(synthetic_log(), LAYOUT)
        assert m.lateral_error_lc1 == 0.0
        assert m.lateral_error_lc2 == 0.0
        assert not m.lc1_fallback
        assert not m.lc2_fallback

    def test_activation_rms_percent(self):
        m = compute_trial_metrics(synthetic_log(act=0.5), LAYOUT)
        assert m.rms_normalized_semg == 50.0

    def test_window_invariance(self):
        log = synthetic_log()
        base = compute_trial_metrics(log, LAYOUT)
        for r in log.records:
            if r.x < 50.0 or r.x > 135.0:
                r.torque_driver += 37.0
                r.phi_deg = 999.0
                r.activation *= 9.0
                r.y += 2.5
                r.psi += 0.7
        mutated = compute_trial_metrics(log, LAYOUT)
        assert mutated == base

    def test_lane_error_fallback_flags(self):
        # undershoot both transitions and never straighten inside the window
        records = []
        for i in range(371):
            x = 0.5 * i
            y, psi = ramp_trace(x, top=3.3, bottom=0.3)
            if 50.0 <= x <= 135.0 and psi == 0.0:
                psi = math.radians(2.0)
            records.append(make_record(x, y, psi))
        log = TrialLog(metadata={}, records=records, emg_records=[])
        m = compute_trial_metrics(log, LAYOUT)
        assert m.lc1_fallback and m.lc2_fallback
        assert m.lateral_error_lc1 == pytest.approx(0.3, abs=1e-12)
        assert m.lateral_error_lc2 == pytest.approx(0.3, abs=1e-12)

    def test_never_leaving_origin_lane_flags_first_change(self):
        records = [make_record(0.5 * i, 0.0, 0.0) for i in range(371)]
        log = TrialLog(metadata={}, records=records, emg_records=[])
        m = compute_trial_metrics(log, LAYOUT)
        assert m.lc1_fallback
        assert m.lateral_error_lc1 == pytest.approx(3.6, abs=1e-12)
        # the origin lane is the entered lane of the second change, so the
        # vehicle is already across its boundary and parallel
        assert not m.lc2_fallback
        assert m.lateral_error_lc2 == 0.0

    def test_aborted_log_rejected(self):
        log = synthetic_log()
        log.metadata["aborted"] = True
        with pytest.raises(ValueError):
            compute_trial_metrics(log, LAYOUT)

    def test_partial_log_rejected(self):
        log = synthetic_log()
        log.records = [r for r in log.records if r.x <= 100.0]
        with pytest.raises(ValueError):
            compute_trial_metrics(log, LAYOUT)

    def test_real_trial_metrics_are_sane(self, manual_log):
        m = compute_trial_metrics(manual_log, LAYOUT)
        assert m.rms_driver_torque > 0.05
        assert m.max_pos_swa >= m.min_neg_swa
        assert m.rms_swa > 1.0
        assert 0.0 <= m.lateral_error_lc1 < 2.0
        assert 0.0 <= m.lateral_error_lc2 < 2.0
        assert 0.0 < m.rms_normalized_semg < 100.0


class TestRmAnova:
    def test_hand_dataset(self):
        a = rm_anova([(1, 2), (2, 3), (3, 5)])
        assert a.f_statistic == pytest.approx(16.0, abs=1e-9)
        assert a.p_value == pytest.approx(0.0572, abs=5e-4)
        assert a.df_condition == 1
        assert a.df_error == 2
        assert a.ss_condition == pytest.approx(8.0 / 3.0, abs=1e-9)
        assert a.ss_subject == pytest.approx(19.0 / 3.0, abs=1e-9)
        assert a.ss_error == pytest.approx(1.0 / 3.0, abs=1e-9)
        assert a.condition_means == pytest.approx((2.0, 10.0 / 3.0))

    def test_partition_identity_on_random_matrices(self):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            n = int(rng.integers(2, 12))
            k = int(rng.integers(2, 6))
            data = rng.normal(size=(n, k)) * float(rng.uniform(0.1, 50.0))
            a = rm_anova(data)
            grand = data.mean()
            resid = (data - data.mean(axis=0, keepdims=True)
                     - data.mean(axis=1, keepdims=True) + grand)
            direct = float(np.sum(resid ** 2))
            assert a.ss_error == pytest.approx(direct, rel=1e-9, abs=1e-12)
            total = float(np.sum((data - grand) ** 2))
            parts = a.ss_condition + a.ss_subject + a.ss_error
            assert parts == pytest.approx(total, rel=1e-9)
            assert a.f_statistic >= 0.0

    def test_constant_rows_give_null_result(self):
        a = rm_anova([(1.0, 1.0), (2.0, 2.0)])
        assert a.f_statistic == 0.0
        assert a.p_value == 1.0

    def test_shift_invariance(self):
        rng = np.random.default_rng(7)
        data = rng.normal(size=(5, 4))
        a = rm_anova(data)
        b = rm_anova(data + 100.0)
        assert b.f_statistic == pytest.approx(a.f_statistic, rel=1e-12)
        assert b.p_value == pytest.approx(a.p_value, rel=1e-12)
        pa = fisher_hayter(a, 5)
        pb = fisher_hayter(b, 5)
        for ca, cb in zip(pa.comparisons, pb.comparisons):
            assert cb.q_statistic == pytest.approx(ca.q_statistic, rel=1e-12)
            assert cb.p_value == pytest.approx(ca.p_value, rel=1e-12)

    def test_incomplete_design_rejected(self):
        data = np.ones((3, 3))
        data[1, 2] = np.nan
        with pytest.raises(ValueError):
            rm_anova(data)

    def test_degenerate_shapes_rejected(self):
        with pytest.raises(ValueError):
            rm_anova(np.ones((1, 4)))
        with pytest.raises(ValueError):
            rm_anova(np.ones((4, 1)))
        with pytest.raises(ValueError):
            rm_anova(np.ones(5))


class TestFisherHayter:
    def test_identical_means_give_null_pair(self):
        data = np.array([[1.0, 1.0, 3.0],
                         [2.0, 2.0, 5.0],
                         [1.5, 1.5, 4.0],
                         [2.5, 2.5, 6.0]])
        post = fisher_hayter(rm_anova(data), 4)
        first = post.comparisons[0]
        assert first.pair == (0, 1)
        assert first.q_statistic == 0.0
        assert first.p_value == 1.0
        assert first.tier == "ns"

    def test_published_critical_values(self):
        assert studentized_range_quantile(0.05, 4, 36) == pytest.approx(3.809, abs=0.01)
        assert studentized_range_quantile(0.05, 3, 12) == pytest.approx(3.773, abs=0.01)
        assert studentized_range_quantile(0.05, 2, 6) == pytest.approx(3.461, abs=0.01)

    def test_p_consistent_with_quantile(self):
        rng = np.random.default_rng(42)
        data = rng.normal(size=(4, 4)) + np.array([0.0, 0.5, 1.0, 1.5])
        a = rm_anova(data)
        post = fisher_hayter(a, 4)
        crit = studentized_range_quantile(0.05, 3, a.df_error)
        for comp in post.comparisons:
            assert (comp.p_value < 0.05) == (comp.q_statistic > crit)

    def test_covers_all_pairs(self):
        data = np.random.default_rng(3).normal(size=(6, 5))
        post = fisher_hayter(rm_anova(data), 6)
        assert len(post.comparisons) == 10
        assert {c.pair for c in post.comparisons} == {
            (i, j) for i in range(5) for j in range(i + 1, 5)}

    def test_scale_invariance(self):
        rng = np.random.default_rng(11)
        data = rng.normal(size=(5, 4)) + np.array([0.0, 0.3, 0.6, 0.9])
        pa = fisher_hayter(rm_anova(data), 5)
        pb = fisher_hayter(rm_anova(3.0 * data), 5)
        for ca, cb in zip(pa.comparisons, pb.comparisons):
            assert cb.q_statistic == pytest.approx(ca.q_statistic, rel=1e-12)
            assert cb.p_value == pytest.approx(ca.p_value, rel=1e-9)

    def test_two_conditions_rejected(self):
        with pytest.raises(ValueError):
            fisher_hayter(rm_anova([(1, 2), (2, 3), (3, 5)]), 3)

    def test_omnibus_flag(self):
        strong = np.tile([0.0, 5.0, 10.0], (6, 1))
        strong = strong + np.random.default_rng(5).normal(size=(6, 3)) * 0.01
        post = fisher_hayter(rm_anova(strong), 6)
        assert post.omnibus_significant
        null = np.random.default_rng(6).normal(size=(6, 3))
        a = rm_anova(null)
        assert a.p_value > 0.05
        assert not fisher_hayter(a, 6).omnibus_significant


class TestSignificanceTiers:
    def test_boundaries_are_strict(self):
        assert significance_tier(0.1) == "ns"
        assert significance_tier(0.0999) == "+"
        assert significance_tier(0.05) == "+"
        assert significance_tier(0.049) == "*"
        assert significance_tier(0.01) == "*"
        assert significance_tier(0.009) == "**"
        assert significance_tier(0.001) == "**"
        assert significance_tier(0.0009) == "***"
        assert significance_tier(0.0) == "***"
        assert significance_tier(1.0) == "ns"

    def test_bad_p_rejected(self):
        with pytest.raises(ValueError):
            significance_tier(-0.01)
        with pytest.raises(ValueError):
            significance_tier(1.01)


class TestLatinSquares:
    def test_first_and_mirrored_subject(self):
        orders = latin_squares(5, 10)
        assert orders[0] == (0, 1, 2, 3, 4)
        assert orders[5] == (4, 3, 2, 1, 0)
        assert orders[5] == tuple(reversed(orders[0]))

    def test_latin_property_both_squares(self):
        orders = latin_squares(5, 10)
        full = set(range(5))
        for square in (orders[:5], orders[5:]):
            for row in square:
                assert set(row) == full
            for j in range(5):
                assert {row[j] for row in square} == full

    def test_cyclic_construction(self):
        orders = latin_squares(4, 4)
        for i in range(4):
            assert orders[i] == tuple((i + j) % 4 for j in range(4))

    def test_row_budget(self):
        assert len(latin_squares(5, 3)) == 3
        with pytest.raises(ValueError):
            latin_squares(5, 11)
        with pytest.raises(ValueError):
            latin_squares(1, 1)
        with pytest.raises(ValueError):
            latin_squares(5, 0)


class TestTlx:
    def test_uniform_scales_score_fifty(self):
        for weights in ((5, 4, 3, 2, 1, 0), (3, 3, 3, 2, 2, 2)):
            sheet = TlxSheet(scales=(50,) * 6, weights=weights)
            assert tlx_score(sheet) == 50.0

    def test_single_loaded_item(self):
        sheet = TlxSheet(scales=(100, 0, 0, 0, 0, 0),
                         weights=(5, 4, 3, 2, 1, 0))
        assert tlx_score(sheet) == pytest.approx(100 * 5 / 15, abs=1e-12)

    def test_zero_scales(self):
        sheet = TlxSheet(scales=(0,) * 6, weights=(5, 4, 3, 2, 1, 0))
        assert tlx_score(sheet) == 0.0

    def test_weights_from_choices(self):
        # always picking the lower-numbered item gives descending win counts
        from itertools import combinations
        choices = [a for a, b in combinations(range(6), 2)]
        assert weights_from_choices(choices) == (5, 4, 3, 2, 1, 0)
        sheet = TlxSheet(scales=(10, 20, 30, 40, 50, 60), choices=choices)
        assert sheet.weights == (5, 4, 3, 2, 1, 0)

    def test_random_choice_sheets_are_valid(self):
        from itertools import combinations
        rng = np.random.default_rng(9)
        for _ in range(20):
            choices = [pair[int(rng.integers(0, 2))]
                       for pair in combinations(range(6), 2)]
            sheet = TlxSheet(scales=tuple(rng.uniform(0, 100, 6)),
                             choices=choices)
            assert sum(sheet.weights) == 15
            assert 0.0 <= tlx_score(sheet) <= 100.0

    def test_malformed_sheets_rejected(self):
        with pytest.raises(ValueError):
            TlxSheet(scales=(50,) * 6, weights=(5, 4, 3, 2, 1, 1))
        with pytest.raises(ValueError):
            TlxSheet(scales=(50,) * 6, weights=(6, 4, 3, 2, 0, 0))
        with pytest.raises(ValueError):
            TlxSheet(scales=(50,) * 5, weights=(5, 4, 3, 2, 1, 0))
        with pytest.raises(ValueError):
            TlxSheet(scales=(50,) * 6, weights=None)
        with pytest.raises(ValueError):
            TlxSheet(scales=(101,) + (50,) * 5, weights=(5, 4, 3, 2, 1, 0))
        with pytest.raises(ValueError):
            TlxSheet(scales=(-1,) + (50,) * 5, weights=(5, 4, 3, 2, 1, 0))

    def test_bad_choices_rejected(self):
        from itertools import combinations
        with pytest.raises(ValueError):
            weights_from_choices([0] * 14)
        with pytest.raises(ValueError):
            weights_from_choices([9] * 15)
        with pytest.raises(ValueError):
            TlxSheet(scales=(50,) * 6,
                     weights=(3, 3, 3, 2, 2, 2),
                     choices=[a for a, b in combinations(range(6), 2)])


class TestStatisticsReport:
    def test_null_measures_report_ns(self):
        matrix = np.tile([[1.0], [2.0], [3.0], [4.0]], (1, 3))
        report = statistics_report({"rms_driver_torque": matrix},
                                   ("Manual", "HG-Strong", "HG-Normal"))
        _, _, anova, post = report.analyses["rms_driver_torque"]
        assert anova.p_value == 1.0
        assert all(c.tier == "ns" for c in post.comparisons)
        assert "p = 1.0000" in report.text
        assert "ns" in report.text

    def test_strong_effect_reports_stars(self):
        rng = np.random.default_rng(2)
        matrix = np.tile([0.0, 10.0, 20.0], (8, 1)) + rng.normal(size=(8, 3)) * 0.01
        report = statistics_report({"rms_swa": matrix}, ("A", "B", "C"))
        assert "***" in report.text
        assert "[pairwise stage valid]" in report.text

    def test_weak_effect_flags_invalid_stage(self):
        rng = np.random.default_rng(4)
        matrix = rng.normal(size=(6, 3))
        a = rm_anova(matrix)
        assert a.p_value > 0.05
        report = statistics_report({"m": matrix}, ("A", "B", "C"))
        assert "omnibus not significant" in report.text

    def test_summary_csv_shape_and_values(self):
        matrix = np.array([[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]])
        report = statistics_report({"m1": matrix, "m2": matrix + 1.0},
                                   ("A", "B", "C"))
        rows = list(csv.DictReader(io.StringIO(report.summary_csv())))
        assert len(rows) == 6
        first = rows[0]
        assert first["measure"] == "m1"
        assert first["condition"] == "A"
        assert float(first["mean"]) == 1.5
        pair_rows = list(csv.DictReader(io.StringIO(report.pairwise_csv())))
        assert len(pair_rows) == 6

    def test_two_conditions_skip_pairwise(self):
        matrix = np.array([[1.0, 2.0], [2.0, 3.0], [3.0, 5.0]])
        report = statistics_report({"m": matrix}, ("A", "B"))
        assert report.analyses["m"][3] is None
        assert report.pairwise_csv().count("\n") == 1

    def test_label_mismatch_rejected(self):
        with pytest.raises(ValueError):
            statistics_report({"m": np.ones((3, 3))}, ("A", "B"))
