"""Benchmark controllers: PD centroid tracking, pure pursuit, and linearized MPC."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2D, wrap_angle
from .robot import OMEGA_MAX, OMEGA_MIN, BodyTwist, RobotState
from .sensor import IMAGE_W, BinaryImage, CameraModel, ground_homography
from .tracking import icg_reward  # noqa: F401  (re-export: reward lives with the episode core)


class NoReferenceError(RuntimeError):
    """The image contains no usable lane reference."""


class MPCInfeasible(RuntimeError):
    """The QP iteration cap was hit before meeting the KKT tolerance."""


@dataclass(frozen=True)
class PDGains:
    kp: float = 1.2
    kd: float = 0.1
    v_ref: float = 0.75

    def __post_init__(self):
        if not 0.1 <= self.v_ref <= 1.0:
            raise ValueError(f"v_ref must lie in [0.1, 1.0], got {self.v_ref}")


@dataclass(frozen=True)
class PurePursuitConfig:
    lookahead_l: float = 1.5
    v_fixed: float = 0.75

    def __post_init__(self):
        if self.lookahead_l <= 0:
            raise ValueError("lookahead distance must be positive")


@dataclass(frozen=True)
class MPCConfig:
    horizon_n: int = 10
    dt: float = 0.1
    q_pos: float = 10.0
    q_theta: float = 1.0
    r_v: float = 0.1
    r_omega: float = 0.1
    v_box: tuple = (0.0, 1.0)
    omega_box: tuple = (OMEGA_MIN, OMEGA_MAX)
    max_iters: int = 2000
    kkt_tol: float = 1e-6

    def __post_init__(self):
        if self.horizon_n < 1:
            raise ValueError("horizon must be >= 1")
        if min(self.q_pos, self.q_theta, self.r_v, self.r_omega) < 0:
            raise ValueError("cost weights must be >= 0")


def pd_center(e_c: float, e_c_prev: float, dt: float, gains: PDGains) -> BodyTwist:
    """PD law on the signed normalized centroid error; fixed forward speed.

    The caller supplies e with positive meaning the lane features sit to the
    robot's left, so a positive gain steers toward them.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    omega = gains.kp * e_c + gains.kd * (e_c - e_c_prev) / dt
    return BodyTwist(v=gains.v_ref, omega=min(max(omega, OMEGA_MIN), OMEGA_MAX))


def pure_pursuit(goal_body: tuple, v: float, lookahead_l: float) -> BodyTwist:
    """Arc toward a body-frame goal point: omega = 2 v sin(alpha) / L."""
    if lookahead_l <= 0:
        raise ValueError("lookahead distance must be positive")
    x, y = goal_body
    if x <= 0.0:
        # Goal behind the rear axle plane: saturated turn toward its side.
        return BodyTwist(v=v, omega=OMEGA_MAX if y >= 0 else OMEGA_MIN)
    alpha = math.atan2(y, x)
    omega = 2.0 * v * math.sin(alpha) / lookahead_l
    return BodyTwist(v=v, omega=min(max(omega, OMEGA_MIN), OMEGA_MAX))


def _fit_side(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Least-squares column = f(row) quadratic; degree drops for degenerate data."""
    degree = min(2, len(np.unique(rows)) - 1)
    return np.polyfit(rows, cols, degree)


def lane_fit_waypoints(
    img: BinaryImage,
    cam: CameraModel,
    horizon_n: int,
    spacing: float,
    lane_width: float = 1.3,
) -> list[Pose2D]:
    """Fit lane boundaries in the image and return body-frame center waypoints.

    Active pixels are split about the image vertical axis, each side gets a
    quadratic column-vs-row fit, and the pixel center line maps to the ground
    through the camera homography before equidistant resampling.
    """
    rows, cols = np.nonzero(img.grid > 0.5)
    if rows.size == 0:
        raise NoReferenceError("empty image: no lane reference")
    mid = (IMAGE_W - 1) / 2.0
    left = cols < mid
    right = ~left
    n_left, n_right = int(left.sum()), int(right.sum())
    if max(n_left, n_right) < 3:
        raise NoReferenceError(f"too few pixels to fit a boundary ({rows.size})")

    homography = ground_homography(cam)

    def side_curve(mask):
        v_lo, v_hi = rows[mask].min(), rows[mask].max()
        coeffs = _fit_side(rows[mask], cols[mask])
        return coeffs, int(v_lo), int(v_hi)

    both = n_left >= 3 and n_right >= 3
    if both:
        cl, lo_l, hi_l = side_curve(left)
        cr, lo_r, hi_r = side_curve(right)
        v_lo, v_hi = max(lo_l, lo_r), min(hi_l, hi_r)
        if v_hi - v_lo < 1:
            both = False  # row ranges barely overlap; use the denser side
    if both:
        v_grid = np.arange(v_hi, v_lo - 1, -1, dtype=float)  # near to far
        center_cols = 0.5 * (np.polyval(cl, v_grid) + np.polyval(cr, v_grid))
        gx, gy = homography.image_to_ground(center_cols, v_grid)
    else:
        mask = left if n_left >= n_right else right
        coeffs, v_lo, v_hi = side_curve(mask)
        v_grid = np.arange(v_hi, v_lo - 1, -1, dtype=float)
        boundary_cols = np.polyval(coeffs, v_grid)
        bx, by = homography.image_to_ground(boundary_cols, v_grid)
        tangent = np.gradient(np.stack([bx, by], axis=-1), axis=0)
        norm = np.maximum(np.linalg.norm(tangent, axis=-1, keepdims=True), 1e-9)
        normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=-1) / norm
        plus = np.stack([bx, by], axis=-1) + 0.5 * lane_width * normal
        minus = np.stack([bx, by], axis=-1) - 0.5 * lane_width * normal
        # The lane center is the offset that runs closer to the robot axis.
        pick = plus if abs(plus[:, 1].mean()) <= abs(minus[:, 1].mean()) else minus
        gx, gy = pick[:, 0], pick[:, 1]

    pts = np.stack([gx, gy], axis=-1)
    if len(pts) < 2:
        raise NoReferenceError("degenerate lane geometry")
    chord = np.concatenate(([0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=-1))))
    targets = spacing * np.arange(1, horizon_n + 1)
    x_i = np.interp(targets, chord, pts[:, 0])
    y_i = np.interp(targets, chord, pts[:, 1])
    beyond = targets > chord[-1]
    if np.any(beyond):
        # Extrapolate past the visible curve along its final tangent.
        tail = pts[-1] - pts[-2]
        tail = tail / max(np.linalg.norm(tail), 1e-9)
        extra = targets[beyond] - chord[-1]
        x_i[beyond] = pts[-1, 0] + extra * tail[0]
        y_i[beyond] = pts[-1, 1] + extra * tail[1]
    headings = np.arctan2(np.gradient(y_i), np.gradient(x_i))
    return [Pose2D(float(x), float(y), float(th)) for x, y, th in zip(x_i, y_i, headings)]


def _rollout(u: np.ndarray, dt: float) -> np.ndarray:
    """Euler rollout of the unicycle from the body-frame origin."""
    n = len(u)
    x = np.zeros((n + 1, 3))
    for k in range(n):
        v, omega = u[k]
        theta = x[k, 2]
        x[k + 1, 0] = x[k, 0] + dt * v * math.cos(theta)
        x[k + 1, 1] = x[k, 1] + dt * v * math.sin(theta)
        x[k + 1, 2] = theta + dt * omega
    return x


def nmpc_solve(
    ref: list[Pose2D], cfg: MPCConfig, warm_start: np.ndarray | None = None
) -> np.ndarray:
    """Linearize about the warm-start rollout and solve the box-constrained QP.

    Projected gradient (FISTA) on the condensed input-space quadratic; raises
    MPCInfeasible when the KKT residual does not reach tolerance in time.
    """
    n = cfg.horizon_n
    if len(ref) < n:
        raise ValueError(f"need at least {n} reference poses, got {len(ref)}")
    lo = np.tile([cfg.v_box[0], cfg.omega_box[0]], n)
    hi = np.tile([cfg.v_box[1], cfg.omega_box[1]], n)
    u_bar = np.zeros((n, 2)) if warm_start is None else np.asarray(warm_start, float).copy()
    u_bar = np.clip(u_bar.reshape(n, 2), lo.reshape(n, 2), hi.reshape(n, 2))

    x_bar = _rollout(u_bar, cfg.dt)
    a_mats = np.empty((n, 3, 3))
    b_mats = np.empty((n, 3, 2))
    for k in range(n):
        v, theta = u_bar[k, 0], x_bar[k, 2]
        a_mats[k] = [[1, 0, -v * cfg.dt * math.sin(theta)],
                     [0, 1, v * cfg.dt * math.cos(theta)],
                     [0, 0, 1]]
        b_mats[k] = [[cfg.dt * math.cos(theta), 0],
                     [cfg.dt * math.sin(theta), 0],
                     [0, cfg.dt]]

    # Condensed sensitivity of stacked states x_1..x_N to stacked inputs.
    g_mat = np.zeros((3 * n, 2 * n))
    for k in range(n):
        phi = b_mats[k]
        g_mat[3 * k: 3 * k + 3, 2 * k: 2 * k + 2] = phi
        for i in range(k + 1, n):
            phi = a_mats[i] @ phi
            g_mat[3 * i: 3 * i + 3, 2 * k: 2 * k + 2] = phi

    q_diag = np.tile([cfg.q_pos, cfg.q_pos, cfg.q_theta], n)
    r_diag = np.tile([cfg.r_v, cfg.r_omega], n)
    d = np.empty(3 * n)
    for k in range(n):
        d[3 * k] = x_bar[k + 1, 0] - ref[k].x
        d[3 * k + 1] = x_bar[k + 1, 1] - ref[k].y
        d[3 * k + 2] = wrap_angle(x_bar[k + 1, 2] - ref[k].theta)
    c = d - g_mat @ u_bar.ravel()

    h_mat = 2.0 * (g_mat.T * q_diag) @ g_mat + 2.0 * np.diag(r_diag)
    g_vec = 2.0 * g_mat.T @ (q_diag * c)
    lip = float(np.linalg.eigvalsh(h_mat)[-1])
    if lip <= 0:
        return u_bar.reshape(n, 2)

    z = np.clip(u_bar.ravel(), lo, hi)
    y = z.copy()
    t_acc = 1.0
    step = 1.0 / lip
    for _ in range(cfg.max_iters):
        grad = h_mat @ y + g_vec
        z_new = np.clip(y - step * grad, lo, hi)
        kkt = np.max(np.abs(z_new - np.clip(z_new - (h_mat @ z_new + g_vec), lo, hi)))
        if kkt <= cfg.kkt_tol:
            return z_new.reshape(n, 2)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_acc * t_acc))
        y = z_new + (t_acc - 1.0) / t_new * (z_new - z)
        z, t_acc = z_new, t_new
    residual = np.max(np.abs(z - np.clip(z - (h_mat @ z + g_vec), lo, hi)))
    raise MPCInfeasible(f"QP iteration cap hit (KKT residual {residual:.2e})")


def nmpc_step(
    state: RobotState,
    ref: list[Pose2D],
    cfg: MPCConfig,
    warm_start: np.ndarray | None = None,
) -> BodyTwist:
    """First input of the linearized finite-horizon tracking problem."""
    if warm_start is None:
        nominal = np.tile(
            [
                min(max(state.twist.v, cfg.v_box[0]), cfg.v_box[1]),
                min(max(state.twist.omega, cfg.omega_box[0]), cfg.omega_box[1]),
            ],
            (cfg.horizon_n, 1),
        )
    else:
        nominal = warm_start
    u = nmpc_solve(ref, cfg, warm_start=nominal)
    return BodyTwist(v=float(u[0, 0]), omega=float(u[0, 1]))
