"""Command-line experiment runner.

Verbs: calibrate (per-subject MVC reference), trial (one trial), batch
(the full subjects x conditions x trials design), report (statistics from
a written metrics.csv), serve (interactive session server), replay
(re-run a recorded session trace).

Everything is driven by one optional TOML file; keys mirror the
configuration dataclasses section by section and unknown keys are
rejected rather than ignored.  Exit codes: 0 on success, 1 when more
than a tenth of a batch's trials failed (or a single requested trial
aborted), 2 on configuration errors.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from .driver import DriverParams, GripSchedule
from .emg import CalibrationError, EnvelopeConfig
from .engine import (MASTER_SEED, SimConfig, config_digest, run_trial,
                     subject_setup, trial_seed)
from .guidance import GuidanceConfig, MODES, MODE_LABELS, normalize_mode
from .metrics import (METRIC_FIELDS, compute_trial_metrics, latin_squares,
                      statistics_report)
from .plant import ColumnParams, SpeedControllerParams, VehicleParams
from .teleop import ReplayRefused, create_app, replay
from .track import TrackLayout, build_dlc_path


class ConfigError(Exception):
    pass


@dataclass
class ExperimentPlan:
    """The experiment design: who drives what, how often, in which order."""
    subjects: int = 10
    trials: int = 5
    conditions: tuple = MODES
    ordering: str = "latin"
    master_seed: int = MASTER_SEED
    out_dir: str = "experiment_out"

    def __post_init__(self):
        for name in ("subjects", "trials", "master_seed"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"{name} must be an integer")
        if self.subjects < 1 or self.trials < 1:
            raise ValueError("need at least one subject and one trial")
        if isinstance(self.conditions, str) or not self.conditions:
            raise ValueError("conditions must be a non-empty list of modes")
        modes = tuple(normalize_mode(c) for c in self.conditions)
        if len(set(modes)) != len(modes):
            raise ValueError("conditions contain duplicates")
        self.conditions = modes
        if self.ordering not in ("latin", "fixed"):
            raise ValueError("ordering must be 'latin' or 'fixed'")
        k = len(modes)
        if self.ordering == "latin" and k >= 2 and self.subjects > 2 * k:
            raise ValueError(f"latin ordering covers at most {2 * k} subjects "
                             f"for {k} conditions")


def condition_orders(plan: ExperimentPlan):
    """Per-subject presentation orders (positions into plan.conditions)."""
    k = len(plan.conditions)
    if plan.ordering == "fixed" or k == 1:
        return [list(range(k)) for _ in range(plan.subjects)]
    return latin_squares(k, plan.subjects)


# -- configuration loading -------------------------------------------------

_SECTIONS = {
    "plan": ("subjects", "trials", "conditions", "ordering", "master_seed",
             "out_dir"),
    "sim": ("internal_hz", "log_hz", "emg_hz", "max_duration", "r_override"),
    "track": ("lane_width", "section_lengths", "lane_count"),
    "vehicle": ("mass", "yaw_inertia", "lf", "lr", "cornering_front",
                "cornering_rear", "steering_ratio", "target_speed",
                "pneumatic_trail", "drag_coeff"),
    "column": ("inertia", "damping", "angle_limit_turns"),
    "speed": ("kp", "ki", "integrator_limit"),
    "guidance": ("gain_near", "gain_far", "near_time", "far_time",
                 "torque_cap", "mode", "smoothing_time"),
    "driver": ("near_gain", "far_gain", "integral_gain", "preview_near_time",
               "preview_far_time", "reaction_delay", "lag", "torque_limit",
               "integrator_limit"),
    "grip": ("baseline", "conflict_sensitivity", "conflict_threshold",
             "rate_limit"),
    "emg": ("sample_rate", "window"),
}


def _section(data, name):
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = sorted(set(raw) - set(_SECTIONS[name]))
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: " + ", ".join(unknown))
    return dict(raw)


def load_config(path=None):
    """(plan, sim config, nominal driver) from a TOML file, or defaults."""
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError("unknown config sections: " + ", ".join(unknown))
    try:
        plan = ExperimentPlan(**_section(data, "plan"))
        sim = SimConfig(
            layout=TrackLayout(**_section(data, "track")),
            vehicle=VehicleParams(**_section(data, "vehicle")),
            column=ColumnParams(**_section(data, "column")),
            speed=SpeedControllerParams(**_section(data, "speed")),
            guidance=GuidanceConfig(**_section(data, "guidance")),
            envelope=EnvelopeConfig(**_section(data, "emg")),
            grip=GripSchedule(**_section(data, "grip")),
            **_section(data, "sim"))
        driver = DriverParams(**_section(data, "driver"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return plan, sim, driver


# -- batch execution -------------------------------------------------------

METRICS_COLUMNS = ("subject", "condition", "trial", "position", "aborted") \
    + METRIC_FIELDS + ("lc1_fallback", "lc2_fallback")


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _trial_files(out_dir, stem, log):
    _write(os.path.join(out_dir, stem + ".csv"), log.records_csv())
    _write(os.path.join(out_dir, stem + "_emg.csv"), log.emg_csv())
    _write(os.path.join(out_dir, stem + "_meta.json"), log.metadata_json())


def _metrics_csv(rows):
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        lines.append(",".join(row[c] for c in METRICS_COLUMNS))
    return "\n".join(lines) + "\n"


def _metric_row(sid, mode, trial, position, metrics):
    row = {"subject": str(sid), "condition": MODE_LABELS[mode],
           "trial": str(trial), "position": str(position),
           "aborted": "False",
           "lc1_fallback": str(metrics.lc1_fallback),
           "lc2_fallback": str(metrics.lc2_fallback)}
    for name in METRIC_FIELDS:
        row[name] = repr(getattr(metrics, name))
    return row


def _failure_row(sid, mode, trial, position):
    row = {"subject": str(sid), "condition": MODE_LABELS[mode],
           "trial": str(trial), "position": str(position), "aborted": "True",
           "lc1_fallback": "", "lc2_fallback": ""}
    for name in METRIC_FIELDS:
        row[name] = ""
    return row


def run_batch(plan: ExperimentPlan, sim: SimConfig, driver_base: DriverParams,
              out_dir=None, echo=print):
    """Run the whole design, writing logs and aggregate files.

    Aborted or diverged trials are recorded as failures and the batch
    carries on.  Returns (failures, total trials).
    """
    out_dir = out_dir or plan.out_dir
    log_dir = os.path.join(out_dir, "logs")
    os.makedirs(log_dir, exist_ok=True)
    orders = condition_orders(plan)
    plan_payload = {
        "subjects": plan.subjects,
        "trials": plan.trials,
        "conditions": list(plan.conditions),
        "ordering": plan.ordering,
        "master_seed": plan.master_seed,
        "orders": orders,
        "config": config_digest(sim, driver_base),
    }
    _write(os.path.join(out_dir, "plan.json"),
           json.dumps(plan_payload, sort_keys=True, indent=2) + "\n")

    path = build_dlc_path(sim.layout)
    rows = []
    cells = {}
    failures = 0
    total = plan.subjects * len(plan.conditions) * plan.trials
    for sid in range(plan.subjects):
        driver, synth, cal = subject_setup(sid, plan.master_seed,
                                           base=driver_base)
        for position, cond_pos in enumerate(orders[sid]):
            mode = plan.conditions[cond_pos]
            for t in range(plan.trials):
                cfg = replace(
                    sim, seed=trial_seed(sid, MODES.index(mode), t,
                                         plan.master_seed),
                    guidance=replace(sim.guidance, mode=mode))
                stem = f"s{sid:02d}_{mode}_t{t}"
                try:
                    log = run_trial(cfg, driver, cal, synth, subject_id=sid,
                                    trial_index=t, path=path)
                except FloatingPointError as exc:
                    echo(f"{stem}: diverged ({exc})")
                    failures += 1
                    rows.append(_failure_row(sid, mode, t, position))
                    continue
                _trial_files(log_dir, stem, log)
                if log.metadata["aborted"]:
                    echo(f"{stem}: aborted ({log.metadata['abort_reason']})")
                    failures += 1
                    rows.append(_failure_row(sid, mode, t, position))
                    continue
                try:
                    metrics = compute_trial_metrics(log, sim.layout)
                except ValueError as exc:
                    # finished the duration cap without covering the
                    # maneuver window: no valid measures for this trial
                    echo(f"{stem}: no metrics ({exc})")
                    failures += 1
                    rows.append(_failure_row(sid, mode, t, position))
                    continue
                rows.append(_metric_row(sid, mode, t, position, metrics))
                cells.setdefault((sid, MODE_LABELS[mode]), []).append(metrics)
        echo(f"subject {sid}: done")

    metrics_path = os.path.join(out_dir, "metrics.csv")
    _write(metrics_path, _metrics_csv(rows))

    labels = [MODE_LABELS[m] for m in plan.conditions]
    try:
        means = _cell_means(_read_metrics(metrics_path), labels)
    except ConfigError as exc:
        echo(f"statistics skipped: {exc}")
        return failures, total
    _check_aggregation(means, cells)
    _write(os.path.join(out_dir, "condition_means.csv"),
           _condition_means_csv(means, labels))
    _write_report(out_dir, means, labels, echo)
    return failures, total


def _cell_means(rows, labels):
    """{(subject, label): {measure: mean over completed trials}}; raises
    when any subject x condition cell has no completed trial."""
    subjects = sorted({int(r["subject"]) for r in rows})
    present = {r["condition"] for r in rows}
    missing = sorted(set(labels) - present)
    if missing:
        raise ConfigError("metrics.csv has no rows for: " + ", ".join(missing))
    cells = {}
    for r in rows:
        if r["aborted"] == "True":
            continue
        key = (int(r["subject"]), r["condition"])
        cells.setdefault(key, []).append(
            {name: float(r[name]) for name in METRIC_FIELDS})
    means = {}
    for sid in subjects:
        for label in labels:
            trials = cells.get((sid, label))
            if not trials:
                raise ConfigError(f"subject {sid} has no completed "
                                  f"{label} trial")
            means[(sid, label)] = {
                name: float(np.mean([t[name] for t in trials]))
                for name in METRIC_FIELDS}
            means[(sid, label)]["n_trials"] = len(trials)
    return means


def _check_aggregation(means, cells):
    """The statistics input must equal the mean of the subject's trial
    metrics as re-read from the CSV artifact."""
    for (sid, label), values in means.items():
        source = cells.get((sid, label))
        if source is None:
            raise RuntimeError(f"cell ({sid}, {label}) missing from the run")
        for name in METRIC_FIELDS:
            direct = float(np.mean([getattr(m, name) for m in source]))
            if values[name] != direct:
                raise RuntimeError(
                    f"aggregation mismatch for ({sid}, {label}) {name}: "
                    f"{values[name]!r} from csv vs {direct!r} direct")


def _condition_means_csv(means, labels):
    lines = [",".join(("subject", "condition", "n_trials") + METRIC_FIELDS)]
    for sid, label in sorted(means, key=lambda k: (k[0], labels.index(k[1]))):
        cell = means[(sid, label)]
        values = [str(sid), label, str(cell["n_trials"])]
        values += [repr(cell[name]) for name in METRIC_FIELDS]
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


def _read_metrics(path):
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].split(",") != list(METRICS_COLUMNS):
        raise ConfigError(f"{path} does not look like a metrics file")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(METRICS_COLUMNS):
            raise ConfigError(f"malformed metrics row: {line!r}")
        rows.append(dict(zip(METRICS_COLUMNS, parts)))
    return rows


def _means_only_text(means, labels):
    subjects = sorted({sid for sid, _ in means})
    lines = ["Condition summary (mean across subjects)", ""]
    width = max(len(name) for name in METRIC_FIELDS)
    header = "measure".ljust(width) + "".join(f"{c:>16}" for c in labels)
    lines.append(header)
    for name in METRIC_FIELDS:
        cols = []
        for label in labels:
            vals = [means[(s, label)][name] for s in subjects]
            cols.append(f"{np.mean(vals):16.4f}")
        lines.append(name.ljust(width) + "".join(cols))
    lines.append("")
    lines.append("repeated-measures statistics need at least two subjects "
                 "and two conditions; means only")
    return "\n".join(lines) + "\n"


def _write_report(out_dir, means, labels, echo=print):
    subjects = sorted({sid for sid, _ in means})
    if len(subjects) < 2 or len(labels) < 2:
        _write(os.path.join(out_dir, "report.txt"),
               _means_only_text(means, labels))
        echo(f"report written to {out_dir} (means only)")
        return
    measures = {}
    for name in METRIC_FIELDS:
        measures[name] = np.array(
            [[means[(sid, label)][name] for label in labels]
             for sid in subjects])
    report = statistics_report(measures, labels)
    _write(os.path.join(out_dir, "report.txt"), report.text)
    _write(os.path.join(out_dir, "report_summary.csv"), report.summary_csv())
    _write(os.path.join(out_dir, "report_pairwise.csv"),
           report.pairwise_csv())
    echo(f"report written to {out_dir}")


# -- verbs -----------------------------------------------------------------

def cmd_calibrate(args):
    plan, sim, driver_base = load_config(args.config)
    master = plan.master_seed if args.seed is None else args.seed
    _, synth, cal = subject_setup(args.subject, master, base=driver_base)
    payload = {
        "subject": args.subject,
        "master_seed": master,
        "reference": cal.reference,
        "rep_values": list(cal.rep_values),
        "channel_base": [float(v) for v in synth.base],
        "channel_gain": [float(v) for v in synth.gain],
    }
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        _write(args.out, text)
        print(f"calibration written to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_trial(args):
    plan, sim, driver_base = load_config(args.config)
    master = plan.master_seed if args.seed is None else args.seed
    try:
        mode = normalize_mode(args.mode) if args.mode else sim.guidance.mode
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = replace(sim, seed=trial_seed(args.subject, MODES.index(mode),
                                       args.trial, master),
                  guidance=replace(sim.guidance, mode=mode))
    driver, synth, cal = subject_setup(args.subject, master, base=driver_base)
    log = run_trial(cfg, driver, cal, synth, subject_id=args.subject,
                    trial_index=args.trial)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    stem = f"s{args.subject:02d}_{mode}_t{args.trial}"
    _trial_files(out_dir, stem, log)
    md = log.metadata
    if md["aborted"]:
        print(f"{stem}: aborted at {md['sim_time']} s "
              f"({md['abort_reason']})")
        return 1
    print(f"{stem}: {md['end_reason']} after {md['sim_time']} s, "
          f"{len(log.records)} records -> {out_dir}")
    metrics = compute_trial_metrics(log, sim.layout)
    for name in METRIC_FIELDS:
        print(f"  {name} = {getattr(metrics, name):.4f}")
    return 0


def cmd_batch(args):
    plan, sim, driver_base = load_config(args.config)
    if args.seed is not None:
        plan = replace(plan, master_seed=args.seed)
    out_dir = args.out or plan.out_dir
    failures, total = run_batch(plan, sim, driver_base, out_dir)
    print(f"batch complete: {total - failures}/{total} trials ok "
          f"-> {out_dir}")
    return 1 if failures > 0.1 * total else 0


def cmd_report(args):
    out_dir = args.out or "."
    plan_path = os.path.join(out_dir, "plan.json")
    labels = None
    if os.path.exists(plan_path):
        try:
            with open(plan_path) as fh:
                plan_data = json.load(fh)
            labels = [MODE_LABELS[normalize_mode(c)]
                      for c in plan_data["conditions"]]
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot use {plan_path}: {exc}") from exc
    rows = _read_metrics(os.path.join(out_dir, "metrics.csv"))
    if labels is None:
        canonical = [MODE_LABELS[m] for m in MODES]
        present = {r["condition"] for r in rows}
        labels = [c for c in canonical if c in present]
        labels += sorted(present - set(labels))
    means = _cell_means(rows, labels)
    _write_report(out_dir, means, labels)
    return 0


def cmd_serve(args):
    import uvicorn

    plan, sim, driver_base = load_config(args.config)
    master = plan.master_seed if args.seed is None else args.seed
    app = create_app(sim, master_seed=master, subject=args.subject,
                     out_dir=args.out)
    print(f"serving subject {args.subject} on ws://127.0.0.1:{args.port}"
          "/session")
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    return 0


def cmd_replay(args):
    try:
        with open(args.trace) as fh:
            trace = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read trace: {exc}") from exc
    plan, sim, driver_base = load_config(args.config)
    log = replay(trace, sim)
    md = log.metadata
    print(f"replayed subject {md['subject']} session {md['trial']} "
          f"({md['condition']}): {md['end_reason']} after {md['sim_time']} s, "
          f"{len(log.records)} records")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        stem = f"s{md['subject']:02d}_session{md['trial']:03d}"
        _trial_files(args.out, stem, log)
        print(f"replay written to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sharedsteer",
        description="driver-automation shared steering experiments")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="TOML configuration file")
        sp.set_defaults(func=func)
        return sp

    sp = add("calibrate", cmd_calibrate,
             "draw a subject and print its MVC calibration")
    sp.add_argument("--subject", type=int, default=0)
    sp.add_argument("--seed", type=int, help="master seed override")
    sp.add_argument("--out", help="write the calibration JSON here")

    sp = add("trial", cmd_trial, "run a single trial and its metrics")
    sp.add_argument("--subject", type=int, default=0)
    sp.add_argument("--mode", help="authority mode (default from config)")
    sp.add_argument("--trial", type=int, default=0)
    sp.add_argument("--seed", type=int, help="master seed override")
    sp.add_argument("--out", help="output directory (default .)")

    sp = add("batch", cmd_batch, "run the full experiment design")
    sp.add_argument("--seed", type=int, help="master seed override")
    sp.add_argument("--out", help="output directory (default from plan)")

    sp = add("report", cmd_report,
             "rebuild statistics from an existing metrics.csv")
    sp.add_argument("--out", help="directory holding metrics.csv (default .)")

    sp = add("serve", cmd_serve, "serve interactive sessions over WebSocket")
    sp.add_argument("--subject", type=int, default=0)
    sp.add_argument("--seed", type=int, help="master seed override")
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--out", help="directory for session logs and traces")

    sp = add("replay", cmd_replay, "re-run a recorded session trace")
    sp.add_argument("trace", help="trace JSON written by the session server")
    sp.add_argument("--out", help="write the replayed log files here")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ReplayRefused as exc:
        print(f"replay refused: {exc}", file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
