"""Skid-steer kinematics: wheel/body velocity maps and exact unicycle stepping."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .geometry import Pose2D, wrap_angle

# Action box for learned agents: body velocity set-points.
V_MIN, V_MAX = 0.1, 1.0
OMEGA_MIN, OMEGA_MAX = -0.5, 0.5


class KinematicsError(ValueError):
    """Non-finite or otherwise invalid kinematic input."""


@dataclass(frozen=True)
class BodyTwist:
    """Longitudinal velocity (m/s) and planar yaw rate (rad/s) in the body frame."""

    v: float
    omega: float


@dataclass(frozen=True)
class WheelSpeeds:
    """Left/right wheel angular velocities (rad/s)."""

    left: float
    right: float


@dataclass(frozen=True)
class IKParams:
    """Fitted effective wheel radius and track width of the drive model."""

    r_hat: float = 0.165
    b_hat: float = 0.55

    def __post_init__(self):
        if self.r_hat <= 0 or self.b_hat <= 0:
            raise KinematicsError("r_hat and b_hat must be positive")


@dataclass(frozen=True)
class SlipModel:
    """Fractions of commanded arc length / rotation actually realized."""

    traversal_gain: float = 1.0
    omega_gain: float = 1.0

    def __post_init__(self):
        for g in (self.traversal_gain, self.omega_gain):
            if not 0.0 < g <= 1.0:
                raise KinematicsError("slip gains must lie in (0, 1]")


@dataclass(frozen=True)
class RobotState:
    pose: Pose2D
    twist: BodyTwist
    wheel: WheelSpeeds
    time: float = 0.0


def ik_wheel_to_body(w: WheelSpeeds, p: IKParams) -> BodyTwist:
    """Map wheel speeds to a body twist with the antisymmetric differential-drive form."""
    v = p.r_hat * (w.left + w.right) / 2.0
    omega = p.r_hat * (w.right - w.left) / p.b_hat
    return BodyTwist(v=v, omega=omega)


def body_to_wheel(t: BodyTwist, p: IKParams) -> WheelSpeeds:
    """Exact linear inverse of ik_wheel_to_body."""
    left = (t.v - 0.5 * t.omega * p.b_hat) / p.r_hat
    right = (t.v + 0.5 * t.omega * p.b_hat) / p.r_hat
    return WheelSpeeds(left=left, right=right)


def clamp_action(raw_v: float, raw_omega: float) -> BodyTwist:
    """Project a raw command into the legal action box [0.1, 1.0] x [-0.5, 0.5]."""
    return BodyTwist(
        v=min(max(raw_v, V_MIN), V_MAX),
        omega=min(max(raw_omega, OMEGA_MIN), OMEGA_MAX),
    )


def clamp_wheel_action(w: WheelSpeeds, p: IKParams) -> WheelSpeeds:
    """Project wheel-speed commands so their body-twist image lies in the action box."""
    twist = ik_wheel_to_body(w, p)
    return body_to_wheel(clamp_action(twist.v, twist.omega), p)


def integrate_unicycle(pose: Pose2D, v: float, omega: float, dt: float) -> Pose2D:
    """Advance a pose under a constant twist for dt seconds (exact arc formula)."""
    if abs(omega) > 1e-9:
        x = pose.x + v / omega * (math.sin(pose.theta + omega * dt) - math.sin(pose.theta))
        y = pose.y + v / omega * (-math.cos(pose.theta + omega * dt) + math.cos(pose.theta))
    else:
        x = pose.x + v * dt * math.cos(pose.theta)
        y = pose.y + v * dt * math.sin(pose.theta)
    return Pose2D(x, y, wrap_angle(pose.theta + omega * dt))


def step_dynamics(
    state: RobotState,
    action: BodyTwist | WheelSpeeds,
    dt: float,
    slip: SlipModel,
    p: IKParams,
) -> RobotState:
    """Advance one control period; wheel-speed actions go through the IK map first."""
    if dt <= 0:
        raise KinematicsError(f"dt must be positive, got {dt}")
    if isinstance(action, WheelSpeeds):
        twist = ik_wheel_to_body(action, p)
    else:
        twist = action
    if not (math.isfinite(twist.v) and math.isfinite(twist.omega)):
        raise KinematicsError(f"non-finite action {twist}")
    effective = BodyTwist(v=twist.v * slip.traversal_gain, omega=twist.omega * slip.omega_gain)
    pose = integrate_unicycle(state.pose, effective.v, effective.omega, dt)
    return replace(
        state,
        pose=pose,
        twist=effective,
        wheel=body_to_wheel(effective, p),
        time=state.time + dt,
    )
