"""Vehicle and steering-column dynamics.

Lateral motion uses the linear two-degree-of-freedom single-track model; the
steering column is a damped inertia on which driver, haptic, and tire
self-aligning torques sum.  Longitudinal speed is held near the target by a
PI controller with anti-windup.  All step functions are pure: they take a
state value and return a new one, which keeps trials deterministic and lets
the batch runner execute trials independently.
"""

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


@dataclass
class VehicleParams:
    mass: float = 1500.0                 # kg
    yaw_inertia: float = 2500.0          # kg m^2
    lf: float = 1.2                      # m, CG to front axle
    lr: float = 1.6                      # m, CG to rear axle
    cornering_front: float = 80000.0     # N/rad
    cornering_rear: float = 80000.0      # N/rad
    steering_ratio: float = 16.0
    target_speed: float = 50.0 / 3.6     # m/s
    pneumatic_trail: float = 0.0075      # m, assist-reduced effective trail
    drag_coeff: float = 0.4              # N per (m/s)^2

    def __post_init__(self):
        for name in ("mass", "yaw_inertia", "lf", "lr", "cornering_front",
                     "cornering_rear", "steering_ratio", "target_speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr


@dataclass
class ColumnParams:
    inertia: float = 0.08        # kg m^2
    damping: float = 1.0         # N m s/rad
    angle_limit_turns: float = 2.5

    @property
    def angle_limit(self) -> float:
        return self.angle_limit_turns * TWO_PI


@dataclass
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    lateral_velocity: float = 0.0
    yaw_rate: float = 0.0
    speed: float = 50.0 / 3.6


@dataclass
class SteeringColumnState:
    angle: float = 0.0       # rad at the steering wheel
    rate: float = 0.0        # rad/s
    torque_driver: float = 0.0
    torque_haptic: float = 0.0
    torque_aligning: float = 0.0


@dataclass
class ActuatorCommand:
    current: float
    motor_torque: float
    wheel_torque: float
    saturated: bool = False


@dataclass
class SpeedControllerParams:
    kp: float = 4000.0
    ki: float = 1000.0
    integrator_limit: float = 2000.0


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, TWO_PI)
    if a <= 0.0:
        a += TWO_PI
    return a - math.pi


def step_column(state: SteeringColumnState, t_driver: float, t_haptic: float,
                t_aligning: float, params: ColumnParams, dt: float) -> SteeringColumnState:
    """Advance the steering column one step with semi-implicit Euler.

    The hard stop clamps the wheel angle at +-angle_limit and kills the rate
    when the column is pressing into the stop.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    total = t_driver + t_haptic + t_aligning
    if not math.isfinite(total):
        raise FloatingPointError("non-finite torque input to the column")
    if abs(t_haptic) > 5.0 + 1e-12:
        raise ValueError("haptic torque above the 5 N m actuator cap")
    rate = state.rate + (total - params.damping * state.rate) / params.inertia * dt
    angle = state.angle + rate * dt
    limit = params.angle_limit
    if angle > limit:
        angle, rate = limit, min(rate, 0.0)
    elif angle < -limit:
        angle, rate = -limit, max(rate, 0.0)
    return SteeringColumnState(angle=angle, rate=rate, torque_driver=t_driver,
                               torque_haptic=t_haptic, torque_aligning=t_aligning)


def aligning_torque(vehicle: VehicleState, wheel_angle: float,
                    params: VehicleParams) -> float:
    """Tire self-aligning torque reflected to the steering wheel.

    Front slip is taken as wheel angle minus the front-axle velocity angle, so
    the torque opposes the slip and acts as a restoring spring on the column.
    Below 0.5 m/s the velocity angle is ill-conditioned and the torque is 0.
    """
    v = vehicle.speed
    if v < 0.5:
        return 0.0
    slip_front = (wheel_angle / params.steering_ratio
                  - (vehicle.lateral_velocity + params.lf * vehicle.yaw_rate) / v)
    return -(params.pneumatic_trail * params.cornering_front * slip_front) / params.steering_ratio


def step_vehicle(state: VehicleState, wheel_angle: float, params: VehicleParams,
                 dt: float, longitudinal_force: float = None) -> VehicleState:
    """Advance the single-track model one step (semi-implicit Euler).

    wheel_angle is the steering-wheel angle; the road-wheel angle is
    wheel_angle / steering_ratio.  When longitudinal_force is None the speed
    is held constant, which keeps the lateral model exactly linear for
    closed-form checks.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = state.speed
    vy = state.lateral_velocity
    r = state.yaw_rate
    if not (math.isfinite(v) and math.isfinite(vy) and math.isfinite(r)):
        raise FloatingPointError("non-finite vehicle state")
    delta = wheel_angle / params.steering_ratio
    if v < 0.5:
        # velocity angles are ill-conditioned near standstill; no lateral
        # tire force, matching the aligning-torque cutoff
        fyf = 0.0
        fyr = 0.0
    else:
        slip_f = (vy + params.lf * r) / v - delta
        slip_r = (vy - params.lr * r) / v
        fyf = -params.cornering_front * slip_f
        fyr = -params.cornering_rear * slip_r
    vy = vy + ((fyf + fyr) / params.mass - v * r) * dt
    r = r + (params.lf * fyf - params.lr * fyr) / params.yaw_inertia * dt
    if longitudinal_force is not None:
        v = v + (longitudinal_force - params.drag_coeff * v * v) / params.mass * dt
    yaw = wrap_angle(state.yaw + r * dt)
    cos_y = math.cos(yaw)
    sin_y = math.sin(yaw)
    x = state.x + (v * cos_y - vy * sin_y) * dt
    y = state.y + (v * sin_y + vy * cos_y) * dt
    return VehicleState(x=x, y=y, yaw=yaw, lateral_velocity=vy, yaw_rate=r, speed=v)


def speed_controller(v: float, v_target: float, integrator: float,
                     params: SpeedControllerParams, dt: float):
    """PI speed hold with a clamped integrator.  Returns (force, integrator)."""
    err = v_target - v
    integrator = integrator + params.ki * err * dt
    if integrator > params.integrator_limit:
        integrator = params.integrator_limit
    elif integrator < -params.integrator_limit:
        integrator = -params.integrator_limit
    return params.kp * err + integrator, integrator


def steady_state_yaw_rate(wheel_angle: float, params: VehicleParams,
                          speed: float = None) -> float:
    """Closed-form steady yaw rate of the linear model, used as an oracle."""
    v = params.target_speed if speed is None else speed
    delta = wheel_angle / params.steering_ratio
    L = params.wheelbase
    k_us = params.mass * (params.lr * params.cornering_rear
                          - params.lf * params.cornering_front) / (
        L * params.cornering_front * params.cornering_rear)
    return v * delta / (L + k_us * v * v)


ANGLE_GRID_DEG = 0.1
TORQUE_GRID = 0.005


def _round_to_grid(value: float, grid: float) -> float:
    # round to nearest, half away from zero, so the map is odd-symmetric
    n = math.floor(abs(value) / grid + 0.5)
    q = n * grid
    return -q if value < 0 else q


def quantize_angle_deg(angle_deg: float) -> float:
    """Wheel angle measurement on the 0.1 degree grid."""
    if not math.isfinite(angle_deg):
        raise ValueError("non-finite sensor input")
    return _round_to_grid(angle_deg, ANGLE_GRID_DEG)


def quantize_torque(torque: float) -> float:
    """Torque measurement on the 0.005 N m grid."""
    if not math.isfinite(torque):
        raise ValueError("non-finite sensor input")
    return _round_to_grid(torque, TORQUE_GRID)


def quantize_sensors(angle_deg: float, torque: float):
    """Measurement model for the logging channel; the physics state is
    never quantized."""
    return quantize_angle_deg(angle_deg), quantize_torque(torque)


REDUCTION_RATIO = 14.0
TORQUE_CONSTANT = 0.25   # N m per A
MOTOR_TORQUE_LIMIT = 5.0


def torque_to_current(wheel_torque: float) -> ActuatorCommand:
    """Map a wheel-side torque request to the motor command.

    The motor sits behind a 1/14 reduction, so wheel-side 70 N m corresponds
    to the 5 N m motor limit; larger requests saturate and are flagged.
    """
    limit = MOTOR_TORQUE_LIMIT * REDUCTION_RATIO
    saturated = abs(wheel_torque) > limit
    clamped = max(-limit, min(limit, wheel_torque))
    motor = clamped / REDUCTION_RATIO
    return ActuatorCommand(current=motor / TORQUE_CONSTANT, motor_torque=motor,
                           wheel_torque=clamped, saturated=saturated)
