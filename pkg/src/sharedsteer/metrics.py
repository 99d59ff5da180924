"""Dependent measures and repeated-measures statistics.

Per-trial measures are taken over the maneuver window of the double lane
change (first cone station to last cone station).  The statistics half covers
the one-way repeated measures ANOVA with its Fisher-Hayter pairwise stage,
Latin-square condition orderings, the weighted TLX workload score, and a
report generator producing a condition summary table plus pairwise
significance matrices.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import stats

# a lane change counts as finished once the vehicle drives parallel to the
# entered lane within this tolerance
PARALLEL_TOLERANCE_DEG = 0.5

METRIC_FIELDS = (
    "rms_driver_torque",
    "rms_swa",
    "max_pos_swa",
    "min_neg_swa",
    "lateral_error_lc1",
    "lateral_error_lc2",
    "rms_normalized_semg",
)

METRIC_LABELS = {
    "rms_driver_torque": "RMS driver torque (N m)",
    "rms_swa": "RMS steering angle (deg)",
    "max_pos_swa": "Max steering angle (deg)",
    "min_neg_swa": "Min steering angle (deg)",
    "lateral_error_lc1": "Lateral error, 1st lane change (m)",
    "lateral_error_lc2": "Lateral error, 2nd lane change (m)",
    "rms_normalized_semg": "RMS normalized activation (%)",
}


@dataclass
class TrialMetrics:
    rms_driver_torque: float
    rms_swa: float
    max_pos_swa: float
    min_neg_swa: float
    lateral_error_lc1: float
    lateral_error_lc2: float
    rms_normalized_semg: float
    lc1_fallback: bool = False
    lc2_fallback: bool = False


def _rms(values):
    a = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(np.square(a))))


def _lane_change_error(rows, boundary, lane_center, upward):
    """Offset from the entered-lane centerline at the first parallel-heading
    instant after the boundary crossing.

    The course runs along the x axis, so lane headings are zero and the
    parallel condition is |yaw| below the tolerance.  When the vehicle never
    straightens inside the leg the offset at the leg's last record is
    returned with the fallback flag set.
    """
    tol = math.radians(PARALLEL_TOLERANCE_DEG)
    crossed = False
    for r in rows:
        if not crossed:
            crossed = r.y >= boundary if upward else r.y <= boundary
        if crossed and abs(r.psi) < tol:
            return abs(r.y - lane_center), False
    return abs(rows[-1].y - lane_center), True


def compute_trial_metrics(log, layout):
    """Dependent measures of one completed trial.

    RMS and extremum channels are restricted to records between the first and
    last cone stations; the lane-change errors use the parallel-heading rule
    with the section-end fallback (see _lane_change_error).  Nothing outside
    the maneuver window influences the result.
    """
    if log.metadata.get("aborted"):
        raise ValueError("aborted trial has no dependent measures")
    lo, hi = layout.maneuver_window()
    rows = [r for r in log.records if lo <= r.x <= hi]
    if not rows:
        raise ValueError("no log records inside the maneuver window")
    if rows[0].x - lo > 1.0 or hi - rows[-1].x > 1.0:
        raise ValueError("log does not span the maneuver window")

    phi = np.array([r.phi_deg for r in rows])
    split = layout.section_stations[3]
    first_leg = [r for r in rows if r.x < split]
    second_leg = [r for r in rows if r.x >= split]
    half = 0.5 * layout.lane_width
    lc1, flag1 = _lane_change_error(first_leg, half, layout.lane_width, upward=True)
    lc2, flag2 = _lane_change_error(second_leg, half, 0.0, upward=False)

    return TrialMetrics(
        rms_driver_torque=_rms([r.torque_driver for r in rows]),
        rms_swa=_rms(phi),
        max_pos_swa=float(phi.max()),
        min_neg_swa=float(phi.min()),
        lateral_error_lc1=lc1,
        lateral_error_lc2=lc2,
        rms_normalized_semg=100.0 * _rms([r.activation for r in rows]),
        lc1_fallback=flag1,
        lc2_fallback=flag2,
    )


# ---------------------------------------------------------------------------
# repeated-measures ANOVA and the Fisher-Hayter pairwise stage


@dataclass
class AnovaResult:
    f_statistic: float
    df_condition: int
    df_error: int
    p_value: float
    condition_means: tuple
    ms_error: float
    ss_condition: float
    ss_subject: float
    ss_error: float


def rm_anova(data):
    """One-way repeated measures ANOVA on an n-subjects x k-conditions matrix.

    Partitions SS_total into condition, subject, and error components;
    F = MS_condition / MS_error on (k-1, (k-1)(n-1)) degrees of freedom.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("need a subjects x conditions matrix")
    n, k = data.shape
    if n < 2 or k < 2:
        raise ValueError("need at least 2 subjects and 2 conditions")
    if not np.all(np.isfinite(data)):
        raise ValueError("incomplete design: every subject needs every condition")

    grand = float(data.mean())
    cond_means = data.mean(axis=0)
    subj_means = data.mean(axis=1)
    ss_cond = n * float(np.sum((cond_means - grand) ** 2))
    ss_subj = k * float(np.sum((subj_means - grand) ** 2))
    ss_total = float(np.sum((data - grand) ** 2))
    # the residual is a sum of squares; subtraction can leave rounding dust
    ss_err = max(ss_total - ss_cond - ss_subj, 0.0)

    df_cond = k - 1
    df_err = (k - 1) * (n - 1)
    ms_cond = ss_cond / df_cond
    ms_err = ss_err / df_err
    if ms_err > 0.0:
        f = ms_cond / ms_err
    else:
        f = 0.0 if ms_cond == 0.0 else math.inf
    p = float(stats.f.sf(f, df_cond, df_err))
    return AnovaResult(
        f_statistic=f,
        df_condition=df_cond,
        df_error=df_err,
        p_value=p,
        condition_means=tuple(float(m) for m in cond_means),
        ms_error=ms_err,
        ss_condition=ss_cond,
        ss_subject=ss_subj,
        ss_error=ss_err,
    )


SIGNIFICANCE_TIERS = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "+"))


def significance_tier(p):
    """Map a p value onto the report's significance markers (strict <)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p value outside [0, 1]")
    for cut, tier in SIGNIFICANCE_TIERS:
        if p < cut:
            return tier
    return "ns"


@dataclass
class PairComparison:
    pair: tuple
    mean_difference: float
    q_statistic: float
    p_value: float
    tier: str


@dataclass
class PosthocResult:
    comparisons: tuple
    omnibus_significant: bool
    alpha: float


def fisher_hayter(anova: AnovaResult, n, alpha=0.05):
    """All-pairs comparisons on the studentized range with k-1 means.

    q_ij = |mean_i - mean_j| / sqrt(MS_error / n), referred to the
    studentized-range distribution with parameter k-1 and the ANOVA error
    degrees of freedom.  The pairwise stage is computed regardless of the
    omnibus outcome; omnibus_significant records whether the two-stage
    procedure considers it valid.
    """
    k = len(anova.condition_means)
    if k < 3:
        raise ValueError("pairwise stage needs at least 3 conditions")
    if n < 2:
        raise ValueError("need at least 2 subjects")
    scale = anova.ms_error / n
    comparisons = []
    for i, j in combinations(range(k), 2):
        diff = anova.condition_means[i] - anova.condition_means[j]
        if diff == 0.0:
            q = 0.0
        elif scale > 0.0:
            q = abs(diff) / math.sqrt(scale)
        else:
            q = math.inf
        if q == 0.0:
            p = 1.0
        elif math.isinf(q):
            p = 0.0
        else:
            p = float(stats.studentized_range.sf(q, k - 1, anova.df_error))
        comparisons.append(
            PairComparison((i, j), float(diff), q, p, significance_tier(p)))
    return PosthocResult(tuple(comparisons), anova.p_value < alpha, alpha)


def studentized_range_quantile(alpha, groups, df):
    """Upper critical value q(alpha, groups, df) of the studentized range."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be inside (0, 1)")
    if groups < 2 or df < 1:
        raise ValueError("need at least 2 groups and 1 error df")
    return float(stats.studentized_range.ppf(1.0 - alpha, groups, df))


# ---------------------------------------------------------------------------
# experiment ordering and workload score


def latin_squares(k, n):
    """Condition orders for n subjects from a cyclic square and its mirror.

    Row i of the first square holds condition (i+j) mod k at position j; the
    second square reverses each row.  Subjects 1..k take square-1 rows in
    order, k+1..2k the square-2 rows, so at most 2k subjects can be seated.
    Returns a list of n order tuples (subject 1 first).
    """
    if k < 2:
        raise ValueError("need at least 2 conditions")
    if n < 1:
        raise ValueError("need at least 1 subject")
    if n > 2 * k:
        raise ValueError(f"a pair of {k}x{k} squares seats at most {2 * k} subjects")
    orders = []
    for s in range(n):
        row = [(s % k + j) % k for j in range(k)]
        if s >= k:
            row.reverse()
        orders.append(tuple(row))
    return orders


def weights_from_choices(winners):
    """Derive the six TLX weights from the 15 pairwise choices.

    winners holds, for each pair in combinations(range(6), 2) order, the index
    of the item picked as more loading; an item's weight is its win count.
    """
    pairs = list(combinations(range(6), 2))
    winners = list(winners)
    if len(winners) != len(pairs):
        raise ValueError(f"need exactly {len(pairs)} pairwise choices")
    counts = [0] * 6
    for winner, pair in zip(winners, pairs):
        if winner not in pair:
            raise ValueError(f"choice {winner} is not part of pair {pair}")
        counts[winner] += 1
    return tuple(counts)


@dataclass
class TlxSheet:
    """Six scale scores plus the pairwise weighting of one questionnaire.

    Either pass the derived weights directly or the 15 pairwise choices
    (winners in combinations(range(6), 2) order); passing both cross-checks
    them.
    """

    scales: tuple
    weights: tuple = None
    choices: tuple = None

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        if len(self.scales) != 6:
            raise ValueError("need six scale scores")
        if any(not 0.0 <= s <= 100.0 for s in self.scales):
            raise ValueError("scale scores live on [0, 100]")
        if self.choices is not None:
            derived = weights_from_choices(self.choices)
            if self.weights is not None and tuple(self.weights) != derived:
                raise ValueError("weights disagree with the pairwise choices")
            self.weights = derived
        if self.weights is None:
            raise ValueError("need either weights or pairwise choices")
        weights = tuple(self.weights)
        if len(weights) != 6 or any(w != int(w) for w in weights):
            raise ValueError("need six integer weights")
        weights = tuple(int(w) for w in weights)
        if any(not 0 <= w <= 5 for w in weights) or sum(weights) != 15:
            raise ValueError("weights must be 0..5 and sum to 15")
        self.weights = weights


def tlx_score(sheet: TlxSheet):
    """Weighted workload score: sum of weight x scale over the 15 choices."""
    return float(sum(w * s for w, s in zip(sheet.weights, sheet.scales)) / 15.0)


# ---------------------------------------------------------------------------
# condition summary report


@dataclass
class StatsReport:
    """Per-measure condition summaries with omnibus and pairwise statistics.

    analyses maps measure name to (means, sds, AnovaResult, PosthocResult or
    None); the pairwise stage is present only with three or more conditions.
    """

    labels: tuple
    analyses: dict
    text: str

    def summary_csv(self):
        lines = ["measure,condition,mean,sd,f_statistic,p_value"]
        for name, (means, sds, anova, _) in self.analyses.items():
            for label, mean, sd in zip(self.labels, means, sds):
                lines.append(f"{name},{label},{repr(mean)},{repr(sd)},"
                             f"{repr(anova.f_statistic)},{repr(anova.p_value)}")
        return "\n".join(lines) + "\n"

    def pairwise_csv(self):
        lines = ["measure,condition_a,condition_b,mean_difference,"
                 "q_statistic,p_value,tier,omnibus_significant"]
        for name, (_, _, _, post) in self.analyses.items():
            if post is None:
                continue
            for comp in post.comparisons:
                a, b = comp.pair
                lines.append(
                    f"{name},{self.labels[a]},{self.labels[b]},"
                    f"{repr(comp.mean_difference)},{repr(comp.q_statistic)},"
                    f"{repr(comp.p_value)},{comp.tier},"
                    f"{post.omnibus_significant}")
        return "\n".join(lines) + "\n"


def statistics_report(measures, labels, alpha=0.05):
    """Build the summary report for a dict of measure -> (n x k) matrices.

    Every matrix must have one column per condition label; subjects are rows.
    """
    labels = tuple(labels)
    analyses = {}
    for name, matrix in measures.items():
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] != len(labels):
            raise ValueError(f"measure {name}: need one column per condition")
        anova = rm_anova(m)
        post = fisher_hayter(anova, m.shape[0], alpha) if len(labels) >= 3 else None
        means = tuple(float(v) for v in m.mean(axis=0))
        sds = tuple(float(v) for v in m.std(axis=0, ddof=1))
        analyses[name] = (means, sds, anova, post)
    return StatsReport(labels, analyses, _format_report(labels, analyses))


def _format_report(labels, analyses):
    name_width = max([len(METRIC_LABELS.get(n, n)) for n in analyses], default=10)
    col_width = max(max((len(l) for l in labels), default=8), 14)
    lines = ["Condition summary (mean and SD across subjects)", ""]
    header = "measure".ljust(name_width) + " | "
    header += " | ".join(l.center(col_width) for l in labels) + " | omnibus"
    lines.append(header)
    lines.append("-" * len(header))
    for name, (means, sds, anova, _) in analyses.items():
        cells = [f"{m:.3f} ({s:.3f})".center(col_width)
                 for m, s in zip(means, sds)]
        om = (f"F({anova.df_condition},{anova.df_error}) = "
              f"{anova.f_statistic:.3f}, p = {anova.p_value:.4f}")
        lines.append(METRIC_LABELS.get(name, name).ljust(name_width)
                     + " | " + " | ".join(cells) + " | " + om)
    lines.append("")
    lines.append("Pairwise comparisons (studentized range on k-1 means)")
    for name, (_, _, anova, post) in analyses.items():
        if post is None:
            continue
        validity = ("valid" if post.omnibus_significant
                    else "omnibus not significant")
        lines.append("")
        lines.append(f"{METRIC_LABELS.get(name, name)}  "
                     f"[pairwise stage {validity}]")
        tier_width = max(max(len(l) for l in labels), 3)
        head = " " * (tier_width + 2)
        head += " ".join(l.rjust(tier_width) for l in labels)
        lines.append(head)
        table = {c.pair: c.tier for c in post.comparisons}
        for i, row_label in enumerate(labels):
            cells = []
            for j in range(len(labels)):
                if j <= i:
                    cells.append(("." if j == i else "").rjust(tier_width))
                else:
                    cells.append(table[(i, j)].rjust(tier_width))
            lines.append(row_label.rjust(tier_width) + "  " + " ".join(cells))
    lines.append("")
    lines.append("tiers: *** p<0.001, ** p<0.01, * p<0.05, + p<0.1, ns otherwise")
    return "\n".join(lines) + "\n"
