"""Simulated driver: preview steering torque plus a grip-strength schedule.

The driver looks at the same kind of near/far preview errors as the
guidance controller, but at its own (longer) horizons, and turns them into
wheel torque through a proportional-integral law on the visual angles,
a reaction delay, a first-order neuromuscular lag, and a torque limit.

Virtual subjects are drawn by jittering the nominal parameter set with a
seeded generator, standing in for a participant pool.  Grip strength is a
schedule around a constant baseline with an optional response to
driver-automation torque conflict.
"""

import math
from dataclasses import dataclass

import numpy as np

from .guidance import PreviewErrors


@dataclass
class DriverParams:
    near_gain: float = 3.5        # N m per rad of near-point visual angle
    far_gain: float = 3.8        # N m per rad of far-point heading error
    integral_gain: float = 0.1   # N m per rad s
    preview_near_time: float = 1.05   # driver look-ahead horizons, s
    preview_far_time: float = 1.7
    reaction_delay: float = 0.15  # s
    lag: float = 0.1              # neuromuscular first-order constant, s
    torque_limit: float = 15.0    # N m
    integrator_limit: float = 2.0  # rad s

    def __post_init__(self):
        if min(self.near_gain, self.far_gain, self.integral_gain) < 0:
            raise ValueError("driver gains must be non-negative")
        if self.lag <= 0:
            raise ValueError("neuromuscular lag must be positive")
        if self.reaction_delay < 0:
            raise ValueError("reaction delay must be non-negative")
        if self.torque_limit <= 0 or self.integrator_limit <= 0:
            raise ValueError("limits must be positive")
        if not 0.0 < self.preview_near_time < self.preview_far_time:
            raise ValueError("need 0 < near preview < far preview")


class DriverState:
    """Per-trial internal state: error integrator, delay line, lag output."""

    def __init__(self, params: DriverParams, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.params = params
        self.dt = dt
        steps = int(round(params.reaction_delay / dt))
        self._delay_line = [0.0] * steps
        self._idx = 0
        self._blend = 1.0 - math.exp(-dt / params.lag)
        self.integrator = 0.0
        self.output = 0.0

    def _delayed(self, value: float) -> float:
        if not self._delay_line:
            return value
        old = self._delay_line[self._idx]
        self._delay_line[self._idx] = value
        self._idx = (self._idx + 1) % len(self._delay_line)
        return old


def driver_torque(err: PreviewErrors, d_near: float, state: DriverState,
                  dt: float) -> float:
    """One control step of the simulated driver.

    The raw command is built from the visual angle to the near point and
    the far heading error, integrating the near angle for steady-state
    tracking.  It then passes through the reaction delay and the
    neuromuscular lag, and is clamped to the torque limit.
    """
    if dt != state.dt:
        raise ValueError("dt differs from the state's construction dt")
    p = state.params
    near_angle = math.atan2(err.lateral_near, d_near)
    state.integrator += near_angle * dt
    if state.integrator > p.integrator_limit:
        state.integrator = p.integrator_limit
    elif state.integrator < -p.integrator_limit:
        state.integrator = -p.integrator_limit
    raw = (p.near_gain * near_angle + p.far_gain * err.heading_far
           + p.integral_gain * state.integrator)
    delayed = state._delayed(raw)
    state.output += (delayed - state.output) * state._blend
    return max(-p.torque_limit, min(p.torque_limit, state.output))


def sample_virtual_subject(base: DriverParams, seed) -> DriverParams:
    """Jittered copy of the nominal driver, deterministic in the seed.

    Gains get independent log-uniform factors in [0.8, 1.25]; delay and lag
    get uniform +-20%.  Preview horizons and limits are left alone.  seed
    may be anything numpy's default_rng accepts, including a Generator.
    """
    rng = np.random.default_rng(seed)
    lo, hi = math.log(0.8), math.log(1.25)

    def gain_factor():
        return math.exp(rng.uniform(lo, hi))

    return DriverParams(
        near_gain=base.near_gain * gain_factor(),
        far_gain=base.far_gain * gain_factor(),
        integral_gain=base.integral_gain * gain_factor(),
        preview_near_time=base.preview_near_time,
        preview_far_time=base.preview_far_time,
        reaction_delay=base.reaction_delay * rng.uniform(0.8, 1.2),
        lag=base.lag * rng.uniform(0.8, 1.2),
        torque_limit=base.torque_limit,
        integrator_limit=base.integrator_limit,
    )


@dataclass
class GripSchedule:
    baseline: float = 0.3
    conflict_sensitivity: float = 0.0   # grip per N m of conflict, 0 = off
    conflict_threshold: float = 1.0     # N m of haptic torque ignored
    rate_limit: float = 0.5             # grip units per second

    def __post_init__(self):
        if not 0.0 <= self.baseline <= 1.0:
            raise ValueError("baseline grip must be within [0, 1]")
        if self.conflict_sensitivity < 0 or self.conflict_threshold < 0:
            raise ValueError("conflict terms must be non-negative")
        if self.rate_limit <= 0:
            raise ValueError("rate limit must be positive")


GRIP_MAX = 1.2


def grip_command(schedule: GripSchedule, grip: float, torque_haptic: float,
                 torque_driver: float, dt: float) -> float:
    """Next grip level, rate-limited toward the schedule's target.

    The target is the baseline; with conflict response enabled it rises by
    sensitivity * (|T_h| - threshold) while the two torques push in
    opposite directions and both exceed 0.1 N m.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    target = schedule.baseline
    if schedule.conflict_sensitivity > 0:
        opposed = (torque_haptic * torque_driver < 0
                   and abs(torque_haptic) > 0.1 and abs(torque_driver) > 0.1)
        if opposed:
            excess = max(0.0, abs(torque_haptic) - schedule.conflict_threshold)
            target = schedule.baseline + schedule.conflict_sensitivity * excess
    step = schedule.rate_limit * dt
    if grip < target:
        grip = min(target, grip + step)
    elif grip > target:
        grip = max(target, grip - step)
    return min(GRIP_MAX, max(0.0, grip))
