"""Driver-automation shared steering on a double lane change course.

A fixed-step simulator couples a single-track vehicle and steering column
with a preview driver model and a haptic guidance controller whose
authority can adapt to a synthetic forearm muscle signal. On top of the
core loop sit per-trial metrics, repeated-measures statistics, a batch
experiment runner with a TOML-configured command line, and a WebSocket
service for interactive sessions that can be replayed bit for bit.
"""

from .driver import DriverParams, GripSchedule, sample_virtual_subject
from .emg import Calibration, CalibrationError, EnvelopeConfig, SynthParams
from .engine import (MASTER_SEED, SimConfig, TrialLog, TrialRunner,
                     config_digest, run_trial, session_seed, subject_setup,
                     trial_seed)
from .guidance import GuidanceConfig, MODES, MODE_LABELS, normalize_mode
from .metrics import (METRIC_FIELDS, TrialMetrics, compute_trial_metrics,
                      latin_squares, rm_anova, statistics_report)
from .plant import ColumnParams, SpeedControllerParams, VehicleParams
from .teleop import ReplayRefused, Session, create_app, replay
from .track import TrackLayout, build_dlc_path

__all__ = [
    "MASTER_SEED", "METRIC_FIELDS", "MODES", "MODE_LABELS",
    "Calibration", "CalibrationError", "ColumnParams", "DriverParams",
    "EnvelopeConfig", "GripSchedule", "GuidanceConfig", "ReplayRefused",
    "Session", "SimConfig", "SpeedControllerParams", "SynthParams",
    "TrackLayout", "TrialLog", "TrialMetrics", "TrialRunner",
    "VehicleParams", "build_dlc_path", "compute_trial_metrics",
    "config_digest", "create_app", "latin_squares", "normalize_mode",
    "replay", "rm_anova", "run_trial", "sample_virtual_subject",
    "session_seed", "statistics_report", "subject_setup", "trial_seed",
]
