"""Two-point preview guidance torque and control-authority scheduling.

The guidance controller watches two points ahead of the vehicle: a near
point that captures lateral placement and a far point that captures the
upcoming road direction.  The wheel torque is a weighted sum of the two
errors, scaled by an authority gain K and clamped to a comfort cap so the
driver can always override it.

K depends on the selected mode.  Three modes are fixed (off, full, half);
the two adaptive modes map the driver's normalized grip activation r to K
linearly, one decreasing authority as the driver tightens the grip and one
increasing it.
"""

import math
from dataclasses import dataclass

from .plant import VehicleState, wrap_angle
from .track import TargetPath, project_to_path

MANUAL = "manual"
HG_STRONG = "hg-strong"
HG_NORMAL = "hg-normal"
HG_DECREASE = "hg-decrease"
HG_INCREASE = "hg-increase"

MODES = (MANUAL, HG_STRONG, HG_NORMAL, HG_DECREASE, HG_INCREASE)
ADAPTIVE_MODES = (HG_DECREASE, HG_INCREASE)

MODE_LABELS = {
    MANUAL: "Manual",
    HG_STRONG: "HG-Strong",
    HG_NORMAL: "HG-Normal",
    HG_DECREASE: "HG-Decrease",
    HG_INCREASE: "HG-Increase",
}


def normalize_mode(text: str) -> str:
    """Canonical mode id from config/CLI input ("HG-Normal" -> "hg-normal")."""
    key = str(text).strip().lower().replace("_", "-")
    if key in MODES:
        return key
    raise ValueError(f"unknown authority mode {text!r}; expected one of "
                     + ", ".join(MODES))


@dataclass
class GuidanceConfig:
    gain_near: float = 0.19      # N m per m of near-point lateral error
    gain_far: float = 3.8        # N m per rad of far-point heading error
    near_time: float = 0.3      # look-ahead times, s
    far_time: float = 0.7
    torque_cap: float = 5.0     # N m
    mode: str = MANUAL
    smoothing_time: float = 0.1  # first-order lag on adaptive K, 0 disables

    def __post_init__(self):
        if self.gain_near < 0 or self.gain_far < 0:
            raise ValueError("guidance gains must be non-negative")
        if not 0.0 < self.near_time < self.far_time:
            raise ValueError("need 0 < near look-ahead < far look-ahead")
        if self.torque_cap <= 0:
            raise ValueError("torque cap must be positive")
        if self.smoothing_time < 0:
            raise ValueError("smoothing time must be non-negative")
        self.mode = normalize_mode(self.mode)


@dataclass
class PreviewErrors:
    lateral_near: float  # m, positive when the path lies left of the vehicle
    heading_far: float   # rad, wrapped to (-pi, pi]


@dataclass
class AuthorityOutput:
    gain: float        # K, always in [0, 1]
    activation: float  # the normalized activation r that produced it


def preview_errors_at_station(station: float, vehicle: VehicleState, sampler,
                              near_time: float, far_time: float) -> PreviewErrors:
    """Look-ahead errors given an already-projected vehicle station.

    sampler is anything with sample(station) -> (x, y, heading); both the
    path table and its cursor qualify.  Lets one projection per step feed
    error pairs at several horizon settings.
    """
    d_near = vehicle.speed * near_time
    d_far = vehicle.speed * far_time
    near_x, near_y, _ = sampler.sample(station + d_near)
    _, _, far_heading = sampler.sample(station + d_far)
    cos_y = math.cos(vehicle.yaw)
    sin_y = math.sin(vehicle.yaw)
    dx = near_x - (vehicle.x + d_near * cos_y)
    dy = near_y - (vehicle.y + d_near * sin_y)
    return PreviewErrors(lateral_near=cos_y * dy - sin_y * dx,
                         heading_far=wrap_angle(far_heading - vehicle.yaw))


def preview_errors(vehicle: VehicleState, path: TargetPath,
                   cfg: GuidanceConfig, cursor=None) -> PreviewErrors:
    """Look-ahead errors against the target path.

    Near error: lateral offset, measured in the vehicle frame, between the
    path point one near-time ahead of the vehicle's station and the vehicle
    position extrapolated the same distance along its own heading.  Positive
    when the path lies to the left, so positive torque steers toward it.

    Far error: path tangent heading one far-time ahead minus vehicle yaw.

    A PathCursor can be passed to reuse its warm-started projection; the
    corridor check of the projection applies either way.
    """
    if cursor is not None:
        station, _, _ = cursor.locate(vehicle.x, vehicle.y)
        sampler = cursor
    else:
        station, _, _ = project_to_path(path, (vehicle.x, vehicle.y))
        sampler = path
    return preview_errors_at_station(station, vehicle, sampler,
                                     cfg.near_time, cfg.far_time)


def authority_gain(mode: str, activation: float, prev_gain: float = None,
                   dt: float = 0.0, smoothing_time: float = 0.0) -> AuthorityOutput:
    """Authority gain K for the selected mode.

    Fixed modes return their constant untouched.  Adaptive modes map the
    activation linearly and clamp to [0, 1]; when smoothing_time > 0 and a
    previous gain is supplied the adaptive gain approaches its target
    through a first-order lag instead of jumping.
    """
    if not math.isfinite(activation) or activation < 0:
        raise ValueError("normalized activation must be finite and >= 0")
    if mode == MANUAL:
        return AuthorityOutput(0.0, activation)
    if mode == HG_STRONG:
        return AuthorityOutput(1.0, activation)
    if mode == HG_NORMAL:
        return AuthorityOutput(0.5, activation)
    if mode == HG_DECREASE:
        gain = 1.0 - activation
    elif mode == HG_INCREASE:
        gain = activation
    else:
        raise ValueError(f"unknown authority mode {mode!r}")
    gain = min(1.0, max(0.0, gain))
    if smoothing_time > 0.0 and prev_gain is not None and dt > 0.0:
        blend = 1.0 - math.exp(-dt / smoothing_time)
        gain = prev_gain + (gain - prev_gain) * blend
        gain = min(1.0, max(0.0, gain))
    return AuthorityOutput(gain, activation)


def guidance_torque(err: PreviewErrors, gain: float, cfg: GuidanceConfig) -> float:
    """Weighted two-point torque K*(a1*e_lat + a2*e_head), clamped to the cap."""
    if not (math.isfinite(err.lateral_near) and math.isfinite(err.heading_far)
            and math.isfinite(gain)):
        raise ValueError("non-finite guidance input")
    if not 0.0 <= gain <= 1.0:
        raise ValueError("authority gain outside [0, 1]")
    raw = gain * (cfg.gain_near * err.lateral_near
                  + cfg.gain_far * err.heading_far)
    return max(-cfg.torque_cap, min(cfg.torque_cap, raw))
