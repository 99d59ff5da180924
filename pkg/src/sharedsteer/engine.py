"""Deterministic multi-rate trial executor.

One internal 600 Hz loop advances grip, activation, authority, guidance,
driver, and the plant in a fixed order; the vehicle channel is logged at
120 Hz and the activation envelope at 200 Hz (600 is the least common
multiple, so both decimations are exact).  Identical configuration and
seeds reproduce a trial byte for byte, including the CSV serializations.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, is_dataclass

import numpy as np

from .driver import (DriverParams, DriverState, GripSchedule, driver_torque,
                     grip_command, sample_virtual_subject)
from .emg import (Calibration, EnvelopeConfig, EnvelopeTracker, SynthParams,
                  draw_synth_params, mvc_calibration, normalize,
                  synthesize_emg)
from .guidance import (GuidanceConfig, HG_STRONG, MODE_LABELS, authority_gain,
                       guidance_torque, preview_errors_at_station)
from .plant import (ColumnParams, SpeedControllerParams, SteeringColumnState,
                    VehicleParams, VehicleState, aligning_torque,
                    quantize_angle_deg, quantize_torque, speed_controller,
                    step_column, step_vehicle)
from .track import (PathCorridorError, PathCursor, TargetPath, TrackLayout,
                    build_dlc_path)


@dataclass
class SimConfig:
    internal_hz: int = 600
    log_hz: int = 120
    emg_hz: int = 200
    max_duration: float = 60.0
    seed: object = 0                 # per-trial seed (int or SeedSequence)
    layout: TrackLayout = field(default_factory=TrackLayout)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    column: ColumnParams = field(default_factory=ColumnParams)
    speed: SpeedControllerParams = field(default_factory=SpeedControllerParams)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    envelope: EnvelopeConfig = field(default_factory=EnvelopeConfig)
    grip: GripSchedule = field(default_factory=GripSchedule)
    r_override: float = None         # pins normalized activation when set

    def __post_init__(self):
        if min(self.internal_hz, self.log_hz, self.emg_hz) <= 0:
            raise ValueError("rates must be positive")
        if self.internal_hz % self.log_hz or self.internal_hz % self.emg_hz:
            raise ValueError("internal rate must be an integer multiple of "
                             "both log rates")
        if self.max_duration <= 0:
            raise ValueError("duration must be positive")
        if self.emg_hz != self.envelope.sample_rate:
            raise ValueError("emg rate and envelope sample rate must agree")
        if self.r_override is not None and self.r_override < 0:
            raise ValueError("r_override must be >= 0")


@dataclass
class StepRecord:
    t: float
    x: float
    y: float
    psi: float
    phi_deg: float      # quantized wheel angle, deg
    torque_driver: float    # quantized
    torque_haptic: float    # quantized
    torque_aligning: float  # raw
    authority: float
    activation: float
    e_y_near: float
    e_th_far: float
    lane_offset: float  # signed offset to the target-path centerline
    grip: float


@dataclass
class EmgRecord:
    t: float
    channel_rms: tuple   # 8 per-channel envelope values
    activation: float    # aggregate envelope
    normalized: float    # r

RECORD_COLUMNS = ("t", "x", "y", "psi", "phi_deg", "Td", "Th", "Ta", "K",
                  "r", "e_y_near", "e_th_far", "lane_offset", "grip")
EMG_COLUMNS = ("t",) + tuple(f"rms{i + 1}" for i in range(8)) \
    + ("activation", "r")


@dataclass
class TrialLog:
    metadata: dict
    records: list
    emg_records: list

    def records_csv(self) -> str:
        lines = [",".join(RECORD_COLUMNS)]
        for r in self.records:
            lines.append(",".join(repr(v) for v in (
                r.t, r.x, r.y, r.psi, r.phi_deg, r.torque_driver,
                r.torque_haptic, r.torque_aligning, r.authority,
                r.activation, r.e_y_near, r.e_th_far, r.lane_offset, r.grip)))
        return "\n".join(lines) + "\n"

    def emg_csv(self) -> str:
        lines = [",".join(EMG_COLUMNS)]
        for r in self.emg_records:
            values = (r.t,) + tuple(r.channel_rms) + (r.activation, r.normalized)
            lines.append(",".join(repr(v) for v in values))
        return "\n".join(lines) + "\n"

    def metadata_json(self) -> str:
        return json.dumps(self.metadata, sort_keys=True, indent=2) + "\n"


def _canonical(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _canonical(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, np.ndarray):
        return [float(v) for v in obj]
    if isinstance(obj, np.random.SeedSequence):
        return {"entropy": obj.entropy, "spawn_key": list(obj.spawn_key)}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_digest(cfg: SimConfig, driver: DriverParams = None,
                  cal: Calibration = None, synth: SynthParams = None) -> str:
    """Stable hash of everything that determines a trial's output."""
    payload = {"sim": _canonical(cfg), "driver": _canonical(driver),
               "calibration": _canonical(cal), "synth": _canonical(synth)}
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


MASTER_SEED = 42


def subject_setup(subject_id: int, master_seed: int = MASTER_SEED,
                  base: DriverParams = None):
    """Deterministic per-subject draw: driver jitter, channel model, MVC.

    One stream feeds the driver jitter and then the channel model; the
    calibration recordings get a stream of their own.  Regenerating a
    subject therefore never depends on how many trials ran before, and the
    same subject id always yields the same virtual participant.  base is
    the nominal driver the jitter is applied to (it does not perturb the
    stream, so the channel model is independent of it).
    Returns (driver params, channel model, calibration).
    """
    rng = np.random.default_rng(
        np.random.SeedSequence([master_seed, subject_id, 0]))
    driver = sample_virtual_subject(base if base is not None else DriverParams(),
                                    rng)
    synth = draw_synth_params(rng)
    cal = mvc_calibration(synth, np.random.default_rng(
        np.random.SeedSequence([master_seed, subject_id, 1])))
    return driver, synth, cal


def trial_seed(subject_id, condition_index, trial_index,
               master_seed=MASTER_SEED):
    """Seed lane for one batch trial; condition_index is the mode's position
    in guidance.MODES regardless of presentation order."""
    return np.random.SeedSequence([master_seed, subject_id, condition_index,
                                   trial_index])


def session_seed(subject_id, session_index, master_seed=MASTER_SEED):
    """Seed lane for interactive sessions (index 5, clear of the five
    condition lanes, so live driving never perturbs batch reproducibility)."""
    return np.random.SeedSequence([master_seed, subject_id, 5, session_index])


def _straight_path(length: float, resolution: float = 0.05) -> TargetPath:
    s = np.arange(0.0, length + resolution / 2, resolution)
    return TargetPath(s=s, x=s.copy(), y=np.zeros_like(s),
                      heading=np.zeros_like(s), resolution=resolution)


class TrialRunner:
    """Incremental form of the trial loop.

    Batch execution drives it to completion in one call; the interactive
    session server advances it block by block, injecting externally held
    torque and grip (external=True replaces the driver model and the grip
    schedule with set_input values, sampled once per internal step).  Both
    paths share every line of the per-step physics, so an idle external
    session reproduces a zero-driver trial byte for byte.
    """

    def __init__(self, cfg: SimConfig, metadata: dict, path, end_x=None,
                 driver: DriverParams = None, cal: Calibration = None,
                 synth: SynthParams = None, initial_offset: float = 0.0,
                 zero_driver: bool = False, authority_mode: str = None,
                 external: bool = False):
        self.cfg = cfg
        self.dt = 1.0 / cfg.internal_hz
        self._log_every = cfg.internal_hz // cfg.log_hz
        self._emg_every = cfg.internal_hz // cfg.emg_hz
        self.max_steps = int(round(cfg.max_duration * cfg.internal_hz))
        self.mode = authority_mode or cfg.guidance.mode
        self._smoothing = cfg.guidance.smoothing_time
        self._end_x = end_x
        self._metadata = metadata
        self._external = external
        self._zero_driver = zero_driver
        self._driver = driver
        self._cal = cal
        self._synth = synth

        self._cursor = PathCursor(path)
        self._rng = np.random.default_rng(cfg.seed)
        self.vehicle = VehicleState(x=0.0, y=initial_offset,
                                    speed=cfg.vehicle.target_speed)
        self.column = SteeringColumnState()
        self._tracker = EnvelopeTracker(cfg.envelope) if cal is not None else None
        self._driver_state = (None if zero_driver or external
                              else DriverState(driver, self.dt))
        self.grip = cfg.grip.baseline if not external else 0.0
        self._speed_integrator = 0.0
        self._prev_gain = None
        self._activation = 0.0
        self.r = cfg.r_override if cfg.r_override is not None else 0.0
        self.td = 0.0
        self.th = 0.0
        self.station = 0.0
        self.input_torque = 0.0
        self.input_grip = 0.0

        self.records = []
        self.emg_records = []
        self.step_index = 0
        self.done = False
        self._end_reason = "duration"
        self._steps_run = 0
        self._abort = None

    def set_input(self, torque: float, grip: float):
        """Zero-order-hold command for external (interactive) sessions."""
        if not (math.isfinite(torque) and math.isfinite(grip)):
            raise ValueError("input command must be finite")
        self.input_torque = torque
        self.input_grip = grip

    def step(self):
        """Advance one internal step; returns the StepRecord when this step
        logged one, else None."""
        if self.done:
            return None
        i = self.step_index
        if i >= self.max_steps:
            self.done = True
            return None
        cfg = self.cfg
        dt = self.dt
        t = i * dt

        if self._external:
            self.grip = self.input_grip
        else:
            self.grip = grip_command(cfg.grip, self.grip, self.th, self.td, dt)
        if self._tracker is not None and i % self._emg_every == 0:
            frame = synthesize_emg(self.grip, t, self._synth, self._rng)
            self._activation = self._tracker.push(frame)
            if cfg.r_override is None:
                self.r = normalize(self._activation, self._cal)
            self.emg_records.append(EmgRecord(
                t=t, channel_rms=tuple(self._tracker.channel_rms.tolist()),
                activation=self._activation, normalized=self.r))
        authority = authority_gain(self.mode, self.r,
                                   prev_gain=self._prev_gain, dt=dt,
                                   smoothing_time=self._smoothing)
        self._prev_gain = authority.gain

        try:
            station, lane_offset, _ = self._cursor.locate(self.vehicle.x,
                                                          self.vehicle.y)
        except PathCorridorError as exc:
            self._abort = (str(exc), i, round(t, 9))
            self.done = True
            return None
        self.station = station

        g_err = preview_errors_at_station(station, self.vehicle, self._cursor,
                                          cfg.guidance.near_time,
                                          cfg.guidance.far_time)
        self.th = guidance_torque(g_err, authority.gain, cfg.guidance)
        if self._external:
            self.td = self.input_torque
        elif self._zero_driver:
            self.td = 0.0
        else:
            d_err = preview_errors_at_station(
                station, self.vehicle, self._cursor,
                self._driver.preview_near_time, self._driver.preview_far_time)
            self.td = driver_torque(
                d_err, self.vehicle.speed * self._driver.preview_near_time,
                self._driver_state, dt)
        ta = aligning_torque(self.vehicle, self.column.angle, cfg.vehicle)

        logged = None
        if i % self._log_every == 0:
            logged = StepRecord(
                t=t, x=self.vehicle.x, y=self.vehicle.y, psi=self.vehicle.yaw,
                phi_deg=quantize_angle_deg(math.degrees(self.column.angle)),
                torque_driver=quantize_torque(self.td),
                torque_haptic=quantize_torque(self.th),
                torque_aligning=ta, authority=authority.gain,
                activation=self.r, e_y_near=g_err.lateral_near,
                e_th_far=g_err.heading_far, lane_offset=lane_offset,
                grip=self.grip)
            self.records.append(logged)

        try:
            self.column = step_column(self.column, self.td, self.th, ta,
                                      cfg.column, dt)
            force, self._speed_integrator = speed_controller(
                self.vehicle.speed, cfg.vehicle.target_speed,
                self._speed_integrator, cfg.speed, dt)
            self.vehicle = step_vehicle(self.vehicle, self.column.angle,
                                        cfg.vehicle, dt,
                                        longitudinal_force=force)
        except FloatingPointError as exc:
            raise FloatingPointError(f"{exc} at internal step {i}") from exc

        self._steps_run = i + 1
        self.step_index = i + 1
        if self._end_x is not None and self.vehicle.x >= self._end_x:
            self._end_reason = "track-end"
            self.done = True
        return logged

    def stop(self, reason: str):
        """End the trial early (interactive session teardown)."""
        if not self.done:
            self.done = True
            self._end_reason = reason

    def finish(self) -> TrialLog:
        """Assemble the TrialLog for however far the trial ran."""
        if self._abort is not None:
            reason, at_step, sim_time = self._abort
            metadata = dict(self._metadata, aborted=True, abort_reason=reason,
                            abort_step=at_step, end_reason="aborted",
                            steps=at_step, sim_time=sim_time)
        else:
            metadata = dict(self._metadata, aborted=False,
                            end_reason=self._end_reason,
                            steps=self._steps_run,
                            sim_time=round(self._steps_run * self.dt, 9))
        return TrialLog(metadata=metadata, records=self.records,
                        emg_records=self.emg_records)


def _simulate(cfg: SimConfig, driver: DriverParams, cal: Calibration,
              synth: SynthParams, metadata: dict, path, end_x,
              initial_offset: float = 0.0, zero_driver: bool = False,
              authority_mode: str = None) -> TrialLog:
    runner = TrialRunner(cfg, metadata, path, end_x=end_x, driver=driver,
                         cal=cal, synth=synth, initial_offset=initial_offset,
                         zero_driver=zero_driver, authority_mode=authority_mode)
    while not runner.done:
        runner.step()
    return runner.finish()


def run_trial(cfg: SimConfig, driver: DriverParams, cal: Calibration,
              synth: SynthParams, subject_id: int = 0, trial_index: int = 0,
              path=None) -> TrialLog:
    """Execute one double-lane-change trial.

    The activation pipeline runs when a calibration (and its subject's
    channel model) is supplied; without one r is 0 (or r_override).
    driver=None runs the trial with zero steering torque from the driver
    side (guidance and tire self-alignment only).
    Terminates at the end-of-track station or at the duration cap.
    """
    if cal is not None and synth is None:
        raise ValueError("calibration given without the subject channel model")
    if path is None:
        path = build_dlc_path(cfg.layout)
    metadata = {
        "subject": subject_id,
        "condition": MODE_LABELS[cfg.guidance.mode],
        "trial": trial_index,
        "seed": str(cfg.seed),
        "config": config_digest(cfg, driver, cal, synth),
    }
    return _simulate(cfg, driver, cal, synth, metadata, path,
                     end_x=cfg.layout.total_length,
                     zero_driver=driver is None)


def run_guidance_only(cfg: SimConfig, initial_offset: float,
                      authority_mode: str = HG_STRONG) -> TrialLog:
    """Trial on a straight lane with the driver silent and K pinned at 1.

    Used to study the guidance loop by itself: the only steering torque is
    the preview law (plus tire self-alignment), starting from a lateral
    offset.  Runs for the full duration cap on a path long enough for it.
    authority_mode is a diagnostic knob; with "manual" the run degenerates
    to a completely unforced vehicle.
    """
    length = cfg.vehicle.target_speed * cfg.max_duration + 50.0
    path = _straight_path(length)
    metadata = {
        "subject": None,
        "condition": "guidance-only",
        "authority": MODE_LABELS[authority_mode],
        "trial": 0,
        "seed": str(cfg.seed),
        "config": config_digest(cfg),
        "initial_offset": initial_offset,
    }
    return _simulate(cfg, None, None, None, metadata, path, end_x=None,
                     initial_offset=initial_offset, zero_driver=True,
                     authority_mode=authority_mode)
