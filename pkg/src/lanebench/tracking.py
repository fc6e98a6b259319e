"""Waypoint-guided episode core: arc-length indexing, tracking errors, reward."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2D, RefTable, nearest_index, wrap_angle
from .robot import (
    BodyTwist,
    IKParams,
    RobotState,
    SlipModel,
    WheelSpeeds,
    clamp_action,
    clamp_wheel_action,
    ik_wheel_to_body,
    step_dynamics,
)
from .sensor import (
    BinaryImage,
    CameraModel,
    FeatureVec,
    MarkerKind,
    centroid_error,
    distill,
    frame_hold_ratio,
    render_view,
)


class DoneReason(enum.Enum):
    NONE = "none"
    TRANSLATION = "translation"
    ORIENTATION = "orientation"
    MAX_STEPS = "max_steps"


def _unit(x: float) -> float:
    return min(max(x, 0.0), 1.0)


@dataclass(frozen=True)
class RewardWeights:
    """Desired speed plus the normalizers that keep every reward term in [0, 1].

    v_penalty_center switches the linear-velocity action penalty from |v|/v_max
    (the default) to |v - center|/half-width, i.e. the magnitude of a raw
    [-1, 1] command mapped affinely onto the velocity box. Policies trained at
    realistic speeds need the centered form; the default keeps the plain
    magnitude penalty.
    """

    v_desired: float = 0.75
    v_max: float = 1.0
    omega_max: float = 0.5
    e_x_cap: float = 1.0
    v_penalty_center: float | None = None
    v_penalty_halfwidth: float = 0.45

    def __post_init__(self):
        if min(self.v_desired, self.v_max, self.omega_max, self.e_x_cap) <= 0:
            raise ValueError("reward weights must be positive")
        if self.v_penalty_halfwidth <= 0:
            raise ValueError("v_penalty_halfwidth must be positive")

    def action_v_error(self, v: float) -> float:
        if self.v_penalty_center is None:
            return _unit(abs(v) / self.v_max)
        return _unit(abs(v - self.v_penalty_center) / self.v_penalty_halfwidth)


@dataclass(frozen=True)
class TerminationConfig:
    e_x_limit: float = 1.0
    e_theta_limit: float = 0.1
    max_steps: int = 1000


@dataclass(frozen=True)
class EpisodeState:
    t: int
    s: float
    table_index: int
    last_pose: Pose2D
    done: bool
    done_reason: DoneReason


def arc_increment(prev: Pose2D, nxt: Pose2D) -> float:
    """Chord length between consecutive poses (the per-step arc estimate)."""
    return math.hypot(nxt.x - prev.x, nxt.y - prev.y)


def select_waypoint(table: RefTable, s: float, alpha: int) -> tuple[Pose2D, int]:
    """Nearest-arc-length row index advanced by the look-ahead constant."""
    if alpha < 0:
        raise ValueError(f"look-ahead constant must be >= 0, got {alpha}")
    idx = min(nearest_index(table, s) + alpha, len(table) - 1)
    return table.row_pose(idx), idx


def position_error(pose: Pose2D, ref: Pose2D) -> float:
    return math.hypot(pose.x - ref.x, pose.y - ref.y)


def orientation_error(theta: float, theta_ref: float) -> float:
    """Quaternion similarity error 1 - q.q_ref = 1 - cos(dtheta/2) in [0, 1]."""
    half = 0.5 * wrap_angle(theta - theta_ref)
    return 1.0 - math.cos(half)


def orientation_error_angle(e_theta_limit: float) -> float:
    """Heading difference at which the quaternion error reaches the given limit."""
    return 2.0 * math.acos(1.0 - e_theta_limit)


def velocity_error(v: float, weights: RewardWeights) -> float:
    return min(abs(v - weights.v_desired) / weights.v_max, 1.0)


def step_reward(
    e_x: float, e_theta: float, e_v: float, action: BodyTwist, weights: RewardWeights
) -> float:
    """Sum of five squared (1 - error) terms; each error clamped to [0, 1]."""
    ex = _unit(e_x / weights.e_x_cap)
    et = _unit(e_theta)
    ev = _unit(e_v)
    ea1 = weights.action_v_error(action.v)
    ea2 = _unit(abs(action.omega) / weights.omega_max)
    return (
        (1.0 - ex) ** 2
        + (1.0 - et) ** 2
        + (1.0 - ev) ** 2
        + (1.0 - ea1) ** 2
        + (1.0 - ea2) ** 2
    )


def icg_reward(e_c: float, e_v: float, action: BodyTwist, weights: RewardWeights) -> float:
    """Image-centroid-guided reward: four squared terms, no pose information."""
    ec = _unit(e_c)
    ev = _unit(e_v)
    ea1 = weights.action_v_error(action.v)
    ea2 = _unit(abs(action.omega) / weights.omega_max)
    return (1.0 - ec) ** 2 + (1.0 - ev) ** 2 + (1.0 - ea1) ** 2 + (1.0 - ea2) ** 2


def check_termination(e_x: float, e_theta: float, t: int, cfg: TerminationConfig) -> DoneReason:
    """Termination priority: translation, then orientation, then step budget."""
    if e_x >= cfg.e_x_limit:
        return DoneReason.TRANSLATION
    if e_theta >= cfg.e_theta_limit:
        return DoneReason.ORIENTATION
    if t >= cfg.max_steps:
        return DoneReason.MAX_STEPS
    return DoneReason.NONE


@dataclass(frozen=True)
class EpisodeConfig:
    dt: float = 0.05
    alpha: int = 0
    feature_dim: int = 64
    action_space: str = "body_twist"  # or "wheel_speeds"
    marker: MarkerKind = MarkerKind.cone()
    blur_sigma: float = 0.0
    missing_spans: tuple = ()
    source_hz: float = 20.0
    control_hz: float = 20.0
    slip: SlipModel = SlipModel()
    ik: IKParams = IKParams()
    weights: RewardWeights = RewardWeights()
    termination: TerminationConfig = TerminationConfig()
    reward_mode: str = "wpg"  # or "icg"
    table_index: int | None = None

    def __post_init__(self):
        if self.action_space not in ("body_twist", "wheel_speeds"):
            raise ValueError(f"unknown action space {self.action_space!r}")
        if self.reward_mode not in ("wpg", "icg"):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        frame_hold_ratio(self.source_hz, self.control_hz)


@dataclass
class StepResult:
    obs: FeatureVec
    reward: float
    done: bool
    info: dict


@dataclass(eq=False)
class EpisodeRecord:
    """Per-step log of one episode plus its outcome."""

    table_index: int
    columns: dict = field(default_factory=dict)
    done_reason: DoneReason = DoneReason.NONE
    features: list = field(default_factory=list)

    COLUMN_ORDER = (
        "t",
        "x",
        "y",
        "theta",
        "v",
        "omega",
        "a_v",
        "a_omega",
        "S",
        "i_star",
        "e_x",
        "e_theta",
        "e_V",
        "reward",
    )

    def __post_init__(self):
        if not self.columns:
            self.columns = {name: [] for name in self.COLUMN_ORDER}

    def append(self, **kwargs):
        for name in self.COLUMN_ORDER:
            self.columns[name].append(kwargs[name])

    def __len__(self):
        return len(self.columns["t"])

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name])

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.columns["reward"]))

    @property
    def final_s(self) -> float:
        return float(self.columns["S"][-1]) if len(self) else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.COLUMN_ORDER) + "\n")
            for i in range(len(self)):
                row = []
                for name in self.COLUMN_ORDER:
                    value = self.columns[name][i]
                    if name in ("t", "i_star"):
                        row.append(str(int(value)))
                    else:
                        row.append(f"{value:.9g}")
                fh.write(",".join(row) + "\n")
            fh.write(f"# done_reason={self.done_reason.value}\n")


class EpisodeEngine:
    """Stateful step/reset driver implementing the waypoint selection routine.

    One engine instance owns exactly one episode at a time; everything is
    deterministic given the reset seed.
    """

    def __init__(self, track, camera: CameraModel, cfg: EpisodeConfig):
        self.track = track
        self.camera = camera
        self.cfg = cfg
        self._hold_ratio = frame_hold_ratio(cfg.source_hz, cfg.control_hz)
        self._started = False

    def reset(self, seed: int) -> FeatureVec:
        cfg = self.cfg
        if cfg.table_index is not None:
            self.table_index = int(cfg.table_index)
        else:
            rng = np.random.default_rng(seed)
            self.table_index = int(rng.integers(0, len(self.track.ref_tables)))
        self.table = self.track.ref_tables[self.table_index]
        start = self.table.row_pose(0)
        self.state = RobotState(
            pose=start, twist=BodyTwist(0.0, 0.0), wheel=WheelSpeeds(0.0, 0.0), time=0.0
        )
        self.s = 0.0
        self.t = 0
        self.done = False
        self.done_reason = DoneReason.NONE
        self._held = None
        self._started = True
        self.image = self._observe_image()
        self.obs = distill(self.image, cfg.feature_dim)
        return self.obs

    def _render(self) -> BinaryImage:
        return render_view(
            self.state.pose,
            self.track,
            self.camera,
            kind=self.cfg.marker,
            blur_sigma=self.cfg.blur_sigma,
            missing_spans=self.cfg.missing_spans,
        )

    def _observe_image(self) -> BinaryImage:
        if self.t % self._hold_ratio == 0 or self._held is None:
            self._held = self._render()
        return self._held

    def clamp(self, action) -> BodyTwist:
        """Project a raw action into the episode's action space, as a body twist."""
        if isinstance(action, BodyTwist):
            raw = (action.v, action.omega)
        elif isinstance(action, WheelSpeeds):
            raw = (action.left, action.right)
        else:
            raw = (float(action[0]), float(action[1]))
        if self.cfg.action_space == "wheel_speeds":
            wheels = clamp_wheel_action(WheelSpeeds(raw[0], raw[1]), self.cfg.ik)
            return ik_wheel_to_body(wheels, self.cfg.ik)
        return clamp_action(raw[0], raw[1])

    def step(self, action) -> StepResult:
        if not self._started:
            raise RuntimeError("call reset() before step()")
        if self.done:
            raise RuntimeError("episode is done; call reset() to start a new one")
        cfg = self.cfg
        command = self.clamp(action)
        prev_pose = self.state.pose
        self.state = step_dynamics(self.state, command, cfg.dt, cfg.slip, cfg.ik)
        self.s += arc_increment(prev_pose, self.state.pose)
        ref, i_star = select_waypoint(self.table, self.s, cfg.alpha)
        e_x = position_error(self.state.pose, ref)
        e_theta = orientation_error(self.state.pose.theta, ref.theta)
        e_v = velocity_error(self.state.twist.v, cfg.weights)
        wpg = step_reward(e_x, e_theta, e_v, command, cfg.weights)
        self.t += 1
        self.done_reason = check_termination(e_x, e_theta, self.t, cfg.termination)
        self.done = self.done_reason is not DoneReason.NONE
        self.image = self._observe_image()
        self.obs = distill(self.image, cfg.feature_dim)
        e_c = centroid_error(self.image)
        icg = icg_reward(e_c, e_v, command, cfg.weights)
        reward = wpg if cfg.reward_mode == "wpg" else icg
        info = {
            "t": self.t,
            "S": self.s,
            "i_star": i_star,
            "e_x": e_x,
            "e_theta": e_theta,
            "e_V": e_v,
            "e_c": e_c,
            "reward_wpg": wpg,
            "reward_icg": icg,
            "a_v": command.v,
            "a_omega": command.omega,
            "v": self.state.twist.v,
            "omega": self.state.twist.omega,
            "done_reason": self.done_reason.value,
        }
        return StepResult(obs=self.obs, reward=reward, done=self.done, info=info)

    @property
    def episode_state(self) -> EpisodeState:
        return EpisodeState(
            t=self.t,
            s=self.s,
            table_index=self.table_index,
            last_pose=self.state.pose,
            done=self.done,
            done_reason=self.done_reason,
        )


class ObsView:
    """What an actor sees each step; includes privileged state for oracles."""

    __slots__ = ("image", "features", "dt", "state", "table", "path", "s", "t")

    def __init__(self, engine: EpisodeEngine):
        self.image = engine.image
        self.features = engine.obs
        self.dt = engine.cfg.dt
        self.state = engine.state
        self.table = engine.table
        self.path = engine.track.paths[engine.table_index]
        self.s = engine.s
        self.t = engine.t


def run_episode(track, camera, actor, cfg: EpisodeConfig, seed: int,
                record_features: bool = False) -> EpisodeRecord:
    """Run one full episode with an actor; deterministic given the seed."""
    engine = EpisodeEngine(track, camera, cfg)
    engine.reset(seed)
    if hasattr(actor, "reset"):
        actor.reset()
    record = EpisodeRecord(table_index=engine.table_index)
    if record_features:
        record.features.append(engine.obs.values.copy())
    while not engine.done:
        action = actor.act(ObsView(engine))
        result = engine.step(action)
        pose = engine.state.pose
        record.append(
            t=result.info["t"] - 1,
            x=pose.x,
            y=pose.y,
            theta=pose.theta,
            v=result.info["v"],
            omega=result.info["omega"],
            a_v=result.info["a_v"],
            a_omega=result.info["a_omega"],
            S=result.info["S"],
            i_star=result.info["i_star"],
            e_x=result.info["e_x"],
            e_theta=result.info["e_theta"],
            e_V=result.info["e_V"],
            reward=result.reward,
        )
        if record_features:
            record.features.append(result.obs.values.copy())
    record.done_reason = engine.done_reason
    return record
