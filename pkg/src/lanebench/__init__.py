"""Deterministic skid-steer lane-keeping simulation and control benchmark suite."""

__version__ = "0.1.0"

from .geometry import ArcPath, ClothoidSegment, Pose2D, RefTable  # noqa: F401
from .robot import BodyTwist, IKParams, RobotState, SlipModel, WheelSpeeds  # noqa: F401
from .sensor import BinaryImage, CameraModel, FeatureVec, MarkerKind  # noqa: F401
from .track import ConeLayout, LaneCurves, TrackParams, TrackSpec, WaypointSets  # noqa: F401
from .tracking import (  # noqa: F401
    DoneReason,
    EpisodeConfig,
    EpisodeEngine,
    EpisodeRecord,
    RewardWeights,
    TerminationConfig,
    run_episode,
)
