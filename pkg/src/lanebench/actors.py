"""Episode-facing adapters that turn observations into actions."""
from __future__ import annotations

import math

import numpy as np

from .controllers import (
    MPCConfig,
    MPCInfeasible,
    NoReferenceError,
    PDGains,
    PurePursuitConfig,
    lane_fit_waypoints,
    nmpc_solve,
    pd_center,
    pure_pursuit,
)
from .geometry import Pose2D, curvature_at, nearest_index
from .robot import OMEGA_MAX, V_MAX, V_MIN
from .sensor import CameraModel, centroid_offset_signed


class ZeroActor:
    """Always outputs the raw zero command (episode clamp floors v at 0.1)."""

    def reset(self):
        pass

    def act(self, view):
        return (0.0, 0.0)


class FixedActionActor:
    """Constant raw action; used for parity and plumbing tests."""

    def __init__(self, v: float, omega: float):
        self.v = v
        self.omega = omega

    def reset(self):
        pass

    def act(self, view):
        return (self.v, self.omega)


def _to_body(pose: Pose2D, x: float, y: float) -> tuple[float, float]:
    dx, dy = x - pose.x, y - pose.y
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return c * dx + s * dy, -s * dx + c * dy


class OracleFollower:
    """Privileged follower that tracks the reference table directly.

    Pure pursuit on the true table with a curvature-aware speed cap; serves as
    the constructive upper baseline in tests and sweeps.
    """

    def __init__(self, v_desired: float = 0.75, lookahead: float = 0.25, margin: float = 0.85):
        self.v_desired = v_desired
        self.lookahead = lookahead
        self.margin = margin

    def reset(self):
        pass

    def act(self, view):
        table = view.table
        idx = nearest_index(table, view.s + self.lookahead)
        ref = table.row_pose(idx)
        gx, gy = _to_body(view.state.pose, ref.x, ref.y)
        dist = max(math.hypot(gx, gy), 1e-6)
        kappa = curvature_at(view.path, min(float(table.s[idx]), view.path.total_length))
        v = min(self.v_desired, self.margin * OMEGA_MAX / max(kappa, 1e-9))
        v = min(max(v, V_MIN), V_MAX)
        if gx <= 0:
            omega = OMEGA_MAX if gy >= 0 else -OMEGA_MAX
        else:
            omega = 2.0 * v * math.sin(math.atan2(gy, gx)) / dist
            omega = min(max(omega, -OMEGA_MAX), OMEGA_MAX)
        return (v, omega)


class PDCenterActor:
    """Vision PD controller centering the active-pixel centroid."""

    def __init__(self, gains: PDGains = PDGains()):
        self.gains = gains
        self.prev_e = 0.0

    def reset(self):
        self.prev_e = 0.0

    def act(self, view):
        offset = centroid_offset_signed(view.image)
        # Positive error = lane features to the robot's left; empty view holds
        # the previous error so the command stays smooth through dropouts.
        e = self.prev_e if offset is None else -offset
        twist = pd_center(e, self.prev_e, view.dt, self.gains)
        self.prev_e = e
        return (twist.v, twist.omega)


class PurePursuitVisionActor:
    """Pure pursuit on lane-fit waypoints extracted from the image."""

    def __init__(
        self,
        cfg: PurePursuitConfig = PurePursuitConfig(),
        cam: CameraModel = CameraModel(),
        lane_width: float = 1.3,
        fit_spacing: float = 0.2,
    ):
        self.cfg = cfg
        self.cam = cam
        self.lane_width = lane_width
        self.fit_spacing = fit_spacing
        self.prev = (cfg.v_fixed, 0.0)

    def reset(self):
        self.prev = (self.cfg.v_fixed, 0.0)

    def act(self, view):
        try:
            waypoints = lane_fit_waypoints(
                view.image, self.cam, horizon_n=10, spacing=self.fit_spacing,
                lane_width=self.lane_width,
            )
        except NoReferenceError:
            return self.prev
        goal = None
        for wp in waypoints:  # farthest fitted waypoint still within L
            if math.hypot(wp.x, wp.y) <= self.cfg.lookahead_l:
                goal = wp
        if goal is None:
            goal = waypoints[0]
        twist = pure_pursuit((goal.x, goal.y), self.cfg.v_fixed, self.cfg.lookahead_l)
        self.prev = (twist.v, twist.omega)
        return self.prev


class PurePursuitTableActor:
    """Classic pure pursuit against the ground-truth reference table."""

    def __init__(self, cfg: PurePursuitConfig = PurePursuitConfig()):
        self.cfg = cfg

    def reset(self):
        pass

    def act(self, view):
        table = view.table
        pose = view.state.pose
        d2 = (table.x - pose.x) ** 2 + (table.y - pose.y) ** 2
        start = int(np.argmin(d2))
        n = len(table)
        goal_idx = n - 1
        for k in range(n):
            idx = (start + k) % n
            if math.hypot(table.x[idx] - pose.x, table.y[idx] - pose.y) >= self.cfg.lookahead_l:
                goal_idx = idx
                break
        goal = _to_body(pose, float(table.x[goal_idx]), float(table.y[goal_idx]))
        twist = pure_pursuit(goal, self.cfg.v_fixed, self.cfg.lookahead_l)
        return (twist.v, twist.omega)


class NMPCTableActor:
    """Linearized MPC tracking body-frame references taken from the true table."""

    def __init__(self, cfg: MPCConfig = MPCConfig(), v_ref: float = 0.75):
        self.cfg = cfg
        self.v_ref = v_ref
        self.warm = None
        self.prev = (0.0, 0.0)
        self.failures = 0

    def reset(self):
        self.warm = None
        self.prev = (0.0, 0.0)
        self.failures = 0

    def _refs(self, view):
        table = view.table
        pose = view.state.pose
        d2 = (table.x - pose.x) ** 2 + (table.y - pose.y) ** 2
        start = int(np.argmin(d2))
        refs = []
        ds = self.cfg.dt * self.v_ref
        n = len(table)
        for k in range(1, self.cfg.horizon_n + 1):
            s_target = float(table.s[start]) + k * ds
            idx = min(nearest_index(table, s_target), n - 1)
            bx, by = _to_body(pose, float(table.x[idx]), float(table.y[idx]))
            refs.append(Pose2D(bx, by, float(table.theta[idx]) - pose.theta))
        return refs

    def act(self, view):
        refs = self._refs(view)
        nominal = self.warm if self.warm is not None else np.tile([self.v_ref, 0.0], (self.cfg.horizon_n, 1))
        try:
            u = nmpc_solve(refs, self.cfg, warm_start=nominal)
        except MPCInfeasible:
            self.failures += 1
            return self.prev
        self.warm = np.vstack([u[1:], u[-1:]])
        self.prev = (float(u[0, 0]), float(u[0, 1]))
        return self.prev


class NMPCVisionActor(NMPCTableActor):
    """Linearized MPC fed by the lane-fit + homography waypoint pipeline."""

    def __init__(
        self,
        cfg: MPCConfig = MPCConfig(),
        v_ref: float = 0.75,
        cam: CameraModel = CameraModel(),
        lane_width: float = 1.3,
    ):
        super().__init__(cfg, v_ref)
        self.cam = cam
        self.lane_width = lane_width

    def act(self, view):
        try:
            refs = lane_fit_waypoints(
                view.image,
                self.cam,
                horizon_n=self.cfg.horizon_n,
                spacing=self.cfg.dt * self.v_ref,
                lane_width=self.lane_width,
            )
        except NoReferenceError:
            self.failures += 1
            return self.prev
        nominal = self.warm if self.warm is not None else np.tile([self.v_ref, 0.0], (self.cfg.horizon_n, 1))
        try:
            u = nmpc_solve(refs, self.cfg, warm_start=nominal)
        except MPCInfeasible:
            self.failures += 1
            return self.prev
        self.warm = np.vstack([u[1:], u[-1:]])
        self.prev = (float(u[0, 0]), float(u[0, 1]))
        return self.prev
