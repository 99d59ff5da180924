"""Live steering session server and deterministic trace replay.

A session wraps the incremental trial runner so a human (or a UI test)
can drive the simulated vehicle over a WebSocket.  The server owns all
physics: clients only send command frames and render what comes back, so
a disconnected or slow client can never fork the simulation state.

Protocol: one JSON object per message, discriminated by "type".

  client -> server   {"type": "input", ...}   see parse_input
  server -> client   {"type": "hello", ...}   config hash, modes, track
                     {"type": "state", ...}   one frame per broadcast tick
                     {"type": "summary", ...} end-of-trial metrics
                     {"type": "error", ...}   malformed input, rule violations

Every command a trial actually consumed is recorded with the internal
step index at which it took effect; that trace, the subject identifiers,
and the configuration hash are enough to re-run the trial offline and
get the same log byte for byte (see replay).
"""

import asyncio
import itertools
import json
import math
import os
from dataclasses import dataclass, replace

from fastapi import FastAPI, WebSocket
from starlette.websockets import WebSocketDisconnect

from .driver import GRIP_MAX
from .engine import (MASTER_SEED, SimConfig, TrialRunner, config_digest,
                     session_seed, subject_setup)
from .guidance import MANUAL, MODES, MODE_LABELS, normalize_mode
from .metrics import METRIC_FIELDS, compute_trial_metrics
from .track import build_dlc_path

BROADCAST_HZ = 30
TORQUE_COMMAND_LIMIT = 15.0   # direct torque command bound, N m
KEY_TORQUE_RATE = 4.0         # key-driven torque slew, N m/s
KEY_TORQUE_CAP = 6.0          # key-driven torque magnitude cap, N m
GRIP_KEY_RATE = 1.0           # grip key ramp, full grip per second
KEY_NAMES = ("left", "right", "grip")

_INPUT_FIELDS = {"type", "torque", "grip", "keys", "mode", "start", "reset"}


class ReplayRefused(Exception):
    """The trace cannot be replayed against the given configuration."""


@dataclass(frozen=True)
class InputFrame:
    """One client command. All fields optional; omitted ones change nothing.

    torque: direct wheel torque, N m, positive steers left.  Overrides the
        key channel until a later frame touches the left/right keys.
    grip: direct grip level in [0, GRIP_MAX]; overrides the grip key.
    keys: partial update of held-key state ({"left"/"right"/"grip": bool}).
    mode: authority mode for the next trial (locked while one runs).
    start/reset: begin a trial / abandon the current one and rearm.
    """
    torque: float = None
    grip: float = None
    keys: dict = None
    mode: str = None
    start: bool = False
    reset: bool = False


def _number(value, name):
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite")
    return value


def _flag(value, name):
    if not isinstance(value, bool):
        raise ValueError(f"{name} must be a boolean")
    return value


def parse_input(payload) -> InputFrame:
    """Validated InputFrame from a decoded client message.

    Raises ValueError on anything out of contract; the server answers
    those with an error frame and drops the message.
    """
    if not isinstance(payload, dict):
        raise ValueError("input frame must be a JSON object")
    unknown = sorted(set(payload) - _INPUT_FIELDS)
    if unknown:
        raise ValueError("unknown input fields: " + ", ".join(unknown))
    if payload.get("type", "input") != "input":
        raise ValueError("not an input frame")
    torque = _number(payload.get("torque"), "torque")
    if torque is not None and abs(torque) > TORQUE_COMMAND_LIMIT:
        raise ValueError(f"torque command exceeds {TORQUE_COMMAND_LIMIT} N m")
    grip = _number(payload.get("grip"), "grip")
    if grip is not None and not 0.0 <= grip <= GRIP_MAX:
        raise ValueError(f"grip command outside [0, {GRIP_MAX}]")
    keys = payload.get("keys")
    if keys is not None:
        if not isinstance(keys, dict):
            raise ValueError("keys must be an object")
        bad = sorted(set(keys) - set(KEY_NAMES))
        if bad:
            raise ValueError("unknown keys: " + ", ".join(bad))
        for name, held in keys.items():
            if not isinstance(held, bool):
                raise ValueError(f"key state {name!r} must be a boolean")
        keys = dict(keys)
    mode = payload.get("mode")
    if mode is not None:
        mode = normalize_mode(mode)
    return InputFrame(torque=torque, grip=grip, keys=keys, mode=mode,
                      start=_flag(payload.get("start", False), "start"),
                      reset=_flag(payload.get("reset", False), "reset"))


def session_digest(cfg: SimConfig, cal, synth) -> str:
    """Configuration hash for interactive trials.

    The per-trial seed and the selected authority mode are reconstructed
    from the trace at replay time, so both are normalized out here; the
    hash pins down everything else (physics, track, rates, guidance
    gains) together with the subject's channel model and calibration.
    """
    canon = replace(cfg, seed=0, guidance=replace(cfg.guidance, mode=MANUAL))
    return config_digest(canon, None, cal, synth)


def _error(message):
    return {"type": "error", "error": message}


class Session:
    """Transport-free interactive session: lobby -> running -> finished.

    The server (or a test) feeds it InputFrames and calls step_block once
    per broadcast tick; each block advances the runner by
    internal_hz / BROADCAST_HZ steps with the latest effective command
    held over every step.
    """

    def __init__(self, cfg: SimConfig = None, subject: int = 0,
                 session_index: int = 0, master_seed: int = MASTER_SEED,
                 mode: str = None):
        base = cfg if cfg is not None else SimConfig()
        if base.internal_hz % BROADCAST_HZ:
            raise ValueError("internal rate must be a multiple of the "
                             "broadcast rate")
        self.base_cfg = base
        self.subject = subject
        self.master_seed = master_seed
        self.next_index = session_index
        _, synth, cal = subject_setup(subject, master_seed)
        self.synth = synth
        self.cal = cal
        self.digest = session_digest(base, cal, synth)
        self.mode = normalize_mode(mode) if mode is not None else base.guidance.mode
        self.path = build_dlc_path(base.layout)
        self.broadcast_every = base.internal_hz // BROADCAST_HZ

        self.phase = "lobby"
        self.runner = None
        self.log = None
        self.trace = None
        self.session_index = None
        self.events = []
        self._last_cmd = None
        self._held = {name: False for name in KEY_NAMES}
        self._torque_direct = None
        self._grip_direct = None
        self._key_torque = 0.0
        self._key_grip = 0.0

    # -- input ----------------------------------------------------------

    def apply_input(self, frame: InputFrame):
        """Apply one command frame; returns outbound frames (errors,
        and the summary when a reset ends a running trial)."""
        out = []
        if frame.mode is not None:
            if self.phase == "running":
                out.append(_error("mode is locked while a trial is running"))
            else:
                self.mode = frame.mode
        if frame.reset:
            out.extend(self.reset())
        if frame.start:
            if self.phase == "running":
                out.append(_error("a trial is already running"))
            else:
                self.start_trial()
        if frame.keys is not None:
            self._held.update(frame.keys)
            if "left" in frame.keys or "right" in frame.keys:
                self._torque_direct = None
            if "grip" in frame.keys:
                self._grip_direct = None
        if frame.torque is not None:
            self._torque_direct = frame.torque
        if frame.grip is not None:
            self._grip_direct = frame.grip
        return out

    def _effective_command(self, dt):
        if self._torque_direct is not None:
            torque = self._torque_direct
        else:
            target = 0.0
            if self._held["left"] != self._held["right"]:
                target = KEY_TORQUE_CAP if self._held["left"] else -KEY_TORQUE_CAP
            step = KEY_TORQUE_RATE * dt
            value = self._key_torque
            if value < target:
                value = min(target, value + step)
            elif value > target:
                value = max(target, value - step)
            self._key_torque = value
            torque = value
        if self._grip_direct is not None:
            grip = self._grip_direct
        else:
            target = 1.0 if self._held["grip"] else 0.0
            step = GRIP_KEY_RATE * dt
            value = self._key_grip
            if value < target:
                value = min(target, value + step)
            elif value > target:
                value = max(target, value - step)
            self._key_grip = value
            grip = value
        return torque, grip

    # -- lifecycle ------------------------------------------------------

    def start_trial(self):
        index = self.next_index
        seed = session_seed(self.subject, index, self.master_seed)
        cfg = replace(self.base_cfg, seed=seed,
                      guidance=replace(self.base_cfg.guidance, mode=self.mode))
        metadata = {
            "subject": self.subject,
            "condition": MODE_LABELS[self.mode],
            "trial": index,
            "seed": str(seed),
            "config": self.digest,
            "interactive": True,
        }
        self.runner = TrialRunner(cfg, metadata, self.path,
                                  end_x=cfg.layout.total_length,
                                  cal=self.cal, synth=self.synth,
                                  external=True)
        self.session_index = index
        self.next_index = index + 1
        self.events = []
        self._last_cmd = None
        self._key_torque = 0.0
        self._key_grip = 0.0
        self.log = None
        self.trace = None
        self.phase = "running"

    def reset(self):
        """Abandon a running trial (finalizing its partial log) or rearm a
        finished one; returns the summary frame when one was produced."""
        out = []
        if self.phase == "running":
            self.runner.stop("stopped")
            out.append(self._finalize())
        self.phase = "lobby"
        return out

    def step_block(self):
        """Advance one broadcast block; returns (state frame or None,
        summary frame or None)."""
        if self.phase != "running":
            return None, None
        runner = self.runner
        for _ in range(self.broadcast_every):
            if runner.done:
                break
            command = self._effective_command(runner.dt)
            runner.set_input(*command)
            if command != self._last_cmd:
                self.events.append([runner.step_index, command[0], command[1]])
                self._last_cmd = command
            runner.step()
        state = self._state_frame()
        if runner.done:
            return state, self._finalize()
        return state, None

    def _finalize(self):
        log = self.runner.finish()
        self.log = log
        self.trace = {
            "config": log.metadata["config"],
            "master_seed": self.master_seed,
            "subject": self.subject,
            "session_index": self.session_index,
            "mode": self.mode,
            "end_reason": log.metadata["end_reason"],
            "steps": log.metadata["steps"],
            "events": self.events,
        }
        self.phase = "finished"
        return self._summary_frame(log)

    # -- outbound frames --------------------------------------------------

    def _state_frame(self):
        if self.runner is None or not self.runner.records:
            return None
        r = self.runner.records[-1]
        return {
            "type": "state",
            "phase": self.phase,
            "t": r.t,
            "x": r.x,
            "y": r.y,
            "psi": r.psi,
            "phi_deg": r.phi_deg,
            "torque_driver": r.torque_driver,
            "torque_haptic": r.torque_haptic,
            "authority": r.authority,
            "r": r.activation,
            "e_y_near": r.e_y_near,
            "e_th_far": r.e_th_far,
            "lane_offset": r.lane_offset,
            "grip": r.grip,
            "station": self.runner.station,
            "step": self.runner.step_index,
        }

    def _summary_frame(self, log):
        md = log.metadata
        try:
            m = compute_trial_metrics(log, self.base_cfg.layout)
            metrics = {name: getattr(m, name) for name in METRIC_FIELDS}
            metrics["lc1_fallback"] = m.lc1_fallback
            metrics["lc2_fallback"] = m.lc2_fallback
        except ValueError:
            metrics = None
        return {
            "type": "summary",
            "session_index": self.session_index,
            "condition": md["condition"],
            "aborted": md["aborted"],
            "end_reason": md["end_reason"],
            "steps": md["steps"],
            "sim_time": md["sim_time"],
            "metrics": metrics,
        }

    def hello_frame(self, session_id):
        layout = self.base_cfg.layout
        stride = max(1, int(round(1.0 / self.path.resolution)))
        centerline = [[round(float(x), 3), round(float(y), 3)]
                      for x, y in zip(self.path.x[::stride],
                                      self.path.y[::stride])]
        return {
            "type": "hello",
            "session": session_id,
            "config": self.digest,
            "subject": self.subject,
            "mode": self.mode,
            "phase": self.phase,
            "broadcast_hz": BROADCAST_HZ,
            "modes": [{"id": m, "label": MODE_LABELS[m]} for m in MODES],
            "track": {
                "lane_width": layout.lane_width,
                "total_length": layout.total_length,
                "section_stations": [float(s) for s in layout.section_stations],
                "cones": [[float(x), float(y)]
                          for x, y in layout.cone_positions],
                "centerline": centerline,
            },
        }


def write_session_files(session: Session, out_dir) -> str:
    """Persist the finished trial: log CSVs, metadata, and the input trace.
    Returns the file stem."""
    os.makedirs(out_dir, exist_ok=True)
    stem = f"s{session.subject:02d}_session{session.session_index:03d}"
    log = session.log
    with open(os.path.join(out_dir, stem + ".csv"), "w") as fh:
        fh.write(log.records_csv())
    with open(os.path.join(out_dir, stem + "_emg.csv"), "w") as fh:
        fh.write(log.emg_csv())
    with open(os.path.join(out_dir, stem + "_meta.json"), "w") as fh:
        fh.write(log.metadata_json())
    with open(os.path.join(out_dir, stem + "_trace.json"), "w") as fh:
        fh.write(json.dumps(session.trace, sort_keys=True, indent=2) + "\n")
    return stem


def replay(trace: dict, cfg: SimConfig = None):
    """Re-run a recorded interactive trial; returns its TrialLog.

    The subject, per-session seed, and authority mode are rebuilt from the
    identifiers in the trace; everything else must match the trace's
    configuration hash or the replay is refused.  Command events are
    applied at their recorded internal steps, so the resulting log (CSV
    and metadata alike) is byte-identical to the live one.  A trace whose
    step count was cut short replays to the truncation point and the log
    ends with reason "stopped".
    """
    base = cfg if cfg is not None else SimConfig()
    required = ("config", "master_seed", "subject", "session_index", "mode",
                "steps", "events")
    missing = [key for key in required if key not in trace]
    if missing:
        raise ReplayRefused("trace is missing " + ", ".join(missing))
    subject = trace["subject"]
    master_seed = trace["master_seed"]
    index = trace["session_index"]
    try:
        mode = normalize_mode(trace["mode"])
    except ValueError as exc:
        raise ReplayRefused(str(exc)) from exc
    steps = trace["steps"]
    if not isinstance(steps, int) or steps < 0:
        raise ReplayRefused("trace step count must be a non-negative integer")
    _, synth, cal = subject_setup(subject, master_seed)
    seed = session_seed(subject, index, master_seed)
    run_cfg = replace(base, seed=seed,
                      guidance=replace(base.guidance, mode=mode))
    digest = session_digest(run_cfg, cal, synth)
    if digest != trace["config"]:
        raise ReplayRefused("configuration hash does not match the trace")
    events = []
    for event in trace["events"]:
        try:
            at, torque, grip = event
            at = int(at)
            torque = float(torque)
            grip = float(grip)
        except (TypeError, ValueError) as exc:
            raise ReplayRefused(f"malformed trace event {event!r}") from exc
        if abs(torque) > TORQUE_COMMAND_LIMIT or not 0.0 <= grip <= GRIP_MAX:
            raise ReplayRefused(f"trace event out of range {event!r}")
        events.append((at, torque, grip))
    metadata = {
        "subject": subject,
        "condition": MODE_LABELS[mode],
        "trial": index,
        "seed": str(seed),
        "config": digest,
        "interactive": True,
    }
    runner = TrialRunner(run_cfg, metadata, build_dlc_path(run_cfg.layout),
                         end_x=run_cfg.layout.total_length,
                         cal=cal, synth=synth, external=True)
    pos = 0
    horizon = min(steps, runner.max_steps)
    while not runner.done and runner.step_index < horizon:
        while pos < len(events) and events[pos][0] == runner.step_index:
            runner.set_input(events[pos][1], events[pos][2])
            pos += 1
        runner.step()
    if not runner.done:
        end = trace.get("end_reason")
        # a duration or abort ending is reproduced by the terminal step
        # itself; anything short of that (a live stop, or a trace whose
        # step count was cut) ends as "stopped"
        if end == "aborted" or (end == "duration"
                                and runner.step_index >= runner.max_steps):
            runner.step()
        if not runner.done:
            runner.stop("stopped")
    return runner.finish()


_CLOSED = object()


async def _pump(websocket, queue):
    try:
        while True:
            await queue.put(await websocket.receive_text())
    except (WebSocketDisconnect, RuntimeError):
        await queue.put(_CLOSED)


def _handle_text(session, text):
    try:
        payload = json.loads(text)
        if not isinstance(payload, dict):
            raise ValueError("message must be a JSON object")
        kind = payload.get("type")
        if kind != "input":
            raise ValueError(f"unsupported message type {kind!r}")
        frame = parse_input(payload)
    except ValueError as exc:
        return [_error(str(exc))]
    return session.apply_input(frame)


def create_app(cfg: SimConfig = None, master_seed: int = MASTER_SEED,
               subject: int = 0, speed_factor: float = 1.0, out_dir=None,
               session_expiry: float = 30.0) -> FastAPI:
    """WebSocket application serving interactive sessions at /session.

    speed_factor scales the pacing (1 is real time; 0 runs blocks as fast
    as the loop allows, for tests).  A dropped connection pauses its
    trial; reconnecting with ?resume=<session id> within session_expiry
    seconds picks it up where it stopped, after which the session is
    forgotten.  Finished trials are written to out_dir when it is given.
    """
    if speed_factor < 0:
        raise ValueError("speed factor must be >= 0")
    base = cfg if cfg is not None else SimConfig()
    app = FastAPI()
    registry = {}
    counter = itertools.count()
    app.state.registry = registry

    @app.websocket("/session")
    async def session_socket(websocket: WebSocket, resume: str = None):
        await websocket.accept()
        if resume is not None:
            entry = registry.get(resume)
            if entry is None:
                await websocket.send_text(json.dumps(
                    _error("unknown or expired session")))
                await websocket.close()
                return
            sid = resume
            session = entry["session"]
            if entry["expire"] is not None:
                entry["expire"].cancel()
                entry["expire"] = None
        else:
            sid = f"s{subject:02d}-{next(counter):04d}"
            session = Session(base, subject=subject, master_seed=master_seed)
            entry = {"session": session, "expire": None, "attached": 0}
            registry[sid] = entry
        entry["attached"] += 1
        await websocket.send_text(json.dumps(session.hello_frame(sid)))

        loop = asyncio.get_running_loop()
        queue = asyncio.Queue()
        pump = asyncio.create_task(_pump(websocket, queue))
        block = session.broadcast_every / base.internal_hz
        period = block / speed_factor if speed_factor > 0 else 0.0
        deadline = None

        async def deliver(frames):
            for frame in frames:
                if frame.get("type") == "summary" and out_dir is not None:
                    write_session_files(session, out_dir)
                await websocket.send_text(json.dumps(frame))

        try:
            while True:
                closed = False
                while True:
                    try:
                        item = queue.get_nowait()
                    except asyncio.QueueEmpty:
                        break
                    if item is _CLOSED:
                        closed = True
                        break
                    await deliver(_handle_text(session, item))
                if closed:
                    break
                if session.phase == "running":
                    now = loop.time()
                    if deadline is None:
                        deadline = now
                    if period > 0.0 and now < deadline:
                        await asyncio.sleep(deadline - now)
                        continue
                    state, summary = session.step_block()
                    deadline = deadline + period if period > 0.0 else None
                    if state is not None:
                        await websocket.send_text(json.dumps(state))
                    if summary is not None:
                        await deliver([summary])
                        deadline = None
                    if period == 0.0:
                        await asyncio.sleep(0)
                else:
                    deadline = None
                    item = await queue.get()
                    if item is _CLOSED:
                        break
                    await deliver(_handle_text(session, item))
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()
            entry = registry.get(sid)
            if entry is not None:
                entry["attached"] -= 1
                # expire only when no connection holds the session, so a
                # resumed socket cannot be reaped by its predecessor's timer
                if entry["attached"] <= 0 and entry["expire"] is None:
                    entry["expire"] = loop.call_later(
                        session_expiry, registry.pop, sid, None)

    return app
