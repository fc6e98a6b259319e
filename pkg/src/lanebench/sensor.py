"""Pseudo-camera rendering, feature distillation, frame hold and ground homography."""
from __future__ import annotations

import functools
import math
import weakref
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

IMAGE_W = 320
IMAGE_H = 96

# Pooling grids per feature dimension: (cols, rows) chosen closest to the
# 320:96 image aspect among exact divisors.
POOL_GRIDS = {
    16: (8, 2),
    32: (8, 4),
    64: (16, 4),
    128: (16, 8),
    256: (32, 8),
    512: (32, 16),
    1024: (64, 16),
    2048: (64, 32),
}

# Spacing of the disc samples that approximate a solid lane strip; keeps edge
# scalloping below a pixel for strip widths down to ~6x this spacing.
_LANE_SAMPLE_SPACING = 0.02


class SensorError(ValueError):
    """Invalid sensor input (bad dimensions, rates, or projection)."""


@dataclass(frozen=True)
class CameraModel:
    mount_height: float = 0.5
    pitch: float = 0.35
    focal: float = 250.0
    u0: float = 159.5
    v0: float = 47.5
    image_w: int = IMAGE_W
    image_h: int = IMAGE_H
    max_range: float = 25.0

    def __post_init__(self):
        if self.image_w != IMAGE_W or self.image_h != IMAGE_H:
            raise SensorError(f"image size is fixed at {IMAGE_W}x{IMAGE_H}")
        if self.focal <= 0:
            raise SensorError("focal length must be positive")
        if not 0.0 < self.pitch < math.pi / 2:
            raise SensorError("pitch must lie in (0, pi/2)")


@dataclass(frozen=True, eq=False)
class BinaryImage:
    """96x320 occupancy image; {0,1} after thresholding, [0,1] pre-threshold."""

    grid: np.ndarray

    def __post_init__(self):
        if self.grid.shape != (IMAGE_H, IMAGE_W):
            raise SensorError(f"image grid must be {IMAGE_H}x{IMAGE_W}, got {self.grid.shape}")

    def active_count(self) -> int:
        return int(np.count_nonzero(self.grid > 0.5))


@dataclass(frozen=True, eq=False)
class FeatureVec:
    values: np.ndarray
    d: int


@dataclass(frozen=True)
class MarkerKind:
    """Marker footprint: cone disc, cylinder square, or a solid lane strip."""

    kind: str
    size: float

    def __post_init__(self):
        if self.kind not in ("cone", "cylinder", "solid_lane"):
            raise SensorError(f"unknown marker kind {self.kind!r}")
        if self.size <= 0:
            raise SensorError("marker footprint dimension must be positive")

    @classmethod
    def cone(cls, radius: float = 0.10) -> "MarkerKind":
        return cls("cone", radius)

    @classmethod
    def cylinder(cls, side: float = 0.18) -> "MarkerKind":
        return cls("cylinder", side)

    @classmethod
    def solid_lane(cls, width: float = 0.12) -> "MarkerKind":
        return cls("solid_lane", width)


class GroundHomography:
    """Closed-form map between image pixels and body-frame ground points."""

    def __init__(self, cam: CameraModel):
        self.cam = cam
        self._sin = math.sin(cam.pitch)
        self._cos = math.cos(cam.pitch)

    def image_to_ground(self, u, v):
        """Ground point (forward X, left Y) seen by pixel (u, v)."""
        cam = self.cam
        a = (np.asarray(u, dtype=float) - cam.u0) / cam.focal
        b = (np.asarray(v, dtype=float) - cam.v0) / cam.focal
        denom = b * self._cos + self._sin
        if np.any(denom <= 1e-12):
            raise SensorError("image point at or above the horizon has no ground intersection")
        x = cam.mount_height * (self._cos - b * self._sin) / denom
        y = -a * (x * self._cos + cam.mount_height * self._sin)
        return x, y

    def ground_to_image(self, x, y):
        """Pixel coordinates of a body-frame ground point ahead of the camera."""
        cam = self.cam
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z_c = x * self._cos + cam.mount_height * self._sin
        if np.any(z_c <= 1e-12):
            raise SensorError("ground point is behind the camera plane")
        u = cam.u0 + cam.focal * (-y) / z_c
        v = cam.v0 + cam.focal * (-x * self._sin + cam.mount_height * self._cos) / z_c
        return u, v


def ground_homography(cam: CameraModel) -> GroundHomography:
    return GroundHomography(cam)


class _PixelGrid:
    """Body-frame ground coordinates of every pixel center, with a KD-tree."""

    def __init__(self, cam: CameraModel):
        h = GroundHomography(cam)
        u = np.arange(cam.image_w, dtype=float)
        v = np.arange(cam.image_h, dtype=float)
        a = (u - cam.u0) / cam.focal
        b = (v - cam.v0) / cam.focal
        denom = b * h._cos + h._sin
        with np.errstate(divide="ignore", invalid="ignore"):
            x_col = np.where(
                denom > 1e-9, cam.mount_height * (h._cos - b * h._sin) / denom, np.inf
            )
        x = np.broadcast_to(x_col[:, None], (cam.image_h, cam.image_w))
        y = -a[None, :] * (x * h._cos + cam.mount_height * h._sin)
        valid = np.isfinite(x) & (x > 0.0) & (x <= cam.max_range)
        self.valid = valid
        pts = np.stack([x[valid], y[valid]], axis=-1)
        self.points = pts
        self.tree = cKDTree(pts)
        self.flat_index = np.flatnonzero(valid.ravel())
        self.x_bounds = (float(pts[:, 0].min()), float(pts[:, 0].max()))
        self.y_bounds = (float(pts[:, 1].min()), float(pts[:, 1].max()))


@functools.lru_cache(maxsize=8)
def _pixel_grid(cam: CameraModel) -> _PixelGrid:
    return _PixelGrid(cam)


_LANE_SAMPLE_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _lane_strip_samples(track) -> tuple[np.ndarray, np.ndarray]:
    """Dense world-frame samples of both lane curves plus their arc positions."""
    cached = _LANE_SAMPLE_CACHE.get(track)
    if cached is not None:
        return cached
    total = track.paths[0].total_length
    count = max(512, int(total / _LANE_SAMPLE_SPACING))
    t = np.linspace(0.0, 1.0, count, endpoint=False)
    pts = np.vstack([track.lane_curves.c1.point(t), track.lane_curves.c2.point(t)])
    # Arc position of each sample taken from the nearest center waypoint.
    centers = track.waypoint_sets.sets[0]
    tree = cKDTree(centers)
    _, idx = tree.query(pts)
    s_pos = track.cone_s[idx]
    _LANE_SAMPLE_CACHE[track] = (pts, s_pos)
    return pts, s_pos


def _world_to_body(points: np.ndarray, pose) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    d = points - np.array([pose.x, pose.y])
    return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=-1)


def _in_spans(s_values: np.ndarray, spans) -> np.ndarray:
    mask = np.zeros(len(s_values), dtype=bool)
    for lo, hi in spans:
        mask |= (s_values >= lo) & (s_values <= hi)
    return mask


def render_view(
    robot,
    track,
    cam: CameraModel,
    kind: MarkerKind = MarkerKind.cone(),
    blur_sigma: float = 0.0,
    missing_spans=(),
) -> BinaryImage:
    """Project track markers through the pinhole camera into the binary image.

    A pixel is active when its center's ground projection lies inside a marker
    footprint; optional Gaussian blur is applied before re-thresholding at 0.5.
    """
    if blur_sigma < 0:
        raise SensorError("blur_sigma must be >= 0")
    if not (math.isfinite(robot.x) and math.isfinite(robot.y)):
        raise SensorError("robot pose must be finite")
    grid = _pixel_grid(cam)
    active = np.zeros(grid.points.shape[0], dtype=bool)

    if kind.kind in ("cone", "cylinder"):
        markers = np.vstack([track.cones.lane1_cones, track.cones.lane2_cones])
        s_pos = np.concatenate([track.cone_s, track.cone_s])
        if len(missing_spans):
            markers = markers[~_in_spans(s_pos, missing_spans)]
        body = _world_to_body(markers, robot)
        radius = kind.size if kind.kind == "cone" else kind.size * math.sqrt(0.5)
        near = (
            (body[:, 0] >= grid.x_bounds[0] - radius)
            & (body[:, 0] <= grid.x_bounds[1] + radius)
            & (body[:, 1] >= grid.y_bounds[0] - radius)
            & (body[:, 1] <= grid.y_bounds[1] + radius)
        )
        body = body[near]
        markers = markers[near]
        if len(body):
            hits = grid.tree.query_ball_point(body, r=radius)
            if kind.kind == "cone":
                for h in hits:
                    active[h] = True
            else:
                # Exact world-axis-aligned square test on the candidates.
                c, s = math.cos(robot.theta), math.sin(robot.theta)
                half = 0.5 * kind.size
                for center_w, h in zip(markers, hits):
                    if not h:
                        continue
                    cand = grid.points[h]
                    wx = robot.x + c * cand[:, 0] - s * cand[:, 1]
                    wy = robot.y + s * cand[:, 0] + c * cand[:, 1]
                    inside = (np.abs(wx - center_w[0]) <= half) & (
                        np.abs(wy - center_w[1]) <= half
                    )
                    active[np.asarray(h)[inside]] = True
    else:
        pts, s_pos = _lane_strip_samples(track)
        if len(missing_spans):
            keep = ~_in_spans(s_pos, missing_spans)
            pts = pts[keep]
        body = _world_to_body(pts, robot)
        radius = 0.5 * kind.size
        near = (
            (body[:, 0] >= grid.x_bounds[0] - radius)
            & (body[:, 0] <= grid.x_bounds[1] + radius)
            & (body[:, 1] >= grid.y_bounds[0] - radius)
            & (body[:, 1] <= grid.y_bounds[1] + radius)
        )
        body = body[near]
        if len(body):
            for h in grid.tree.query_ball_point(body, r=radius):
                active[h] = True

    img = np.zeros(IMAGE_H * IMAGE_W, dtype=float)
    img[grid.flat_index[active]] = 1.0
    img = img.reshape(IMAGE_H, IMAGE_W)
    if blur_sigma > 0:
        img = gaussian_filter(img, sigma=blur_sigma, mode="constant")
        img = (img >= 0.5).astype(float)
    return BinaryImage(grid=img)


def distill(img: BinaryImage, d: int) -> FeatureVec:
    """Mean-pool the image into d rectangular cells (row-major feature order)."""
    if d not in POOL_GRIDS:
        raise SensorError(f"unsupported feature dimension {d}; allowed: {sorted(POOL_GRIDS)}")
    cols, rows = POOL_GRIDS[d]
    block_h = IMAGE_H // rows
    block_w = IMAGE_W // cols
    pooled = img.grid.reshape(rows, block_h, cols, block_w).mean(axis=(1, 3))
    return FeatureVec(values=pooled.ravel().copy(), d=d)


def frame_hold(
    step_index: int,
    source_hz: float,
    control_hz: float,
    latest: BinaryImage,
    held: BinaryImage | None,
) -> BinaryImage:
    """Return a fresh image every (control_hz/source_hz)-th step, else the held one."""
    ratio = frame_hold_ratio(source_hz, control_hz)
    if step_index % ratio == 0 or held is None:
        return latest
    return held


def frame_hold_ratio(source_hz: float, control_hz: float) -> int:
    if source_hz <= 0 or control_hz <= 0:
        raise SensorError("rates must be positive")
    if control_hz < source_hz:
        raise SensorError("control rate must be >= image source rate")
    ratio = control_hz / source_hz
    if abs(ratio - round(ratio)) > 1e-9:
        raise SensorError(f"control rate {control_hz} not divisible by source rate {source_hz}")
    return int(round(ratio))


def centroid_column(img: BinaryImage) -> float | None:
    """Mean active-pixel column, or None for an empty image."""
    mask = img.grid > 0.5
    count = np.count_nonzero(mask)
    if count == 0:
        return None
    cols = np.nonzero(mask)[1]
    return float(cols.mean())


def centroid_error(img: BinaryImage) -> float:
    """Normalized |centroid - center| in [0, 1]; an empty image scores worst (1)."""
    col = centroid_column(img)
    if col is None:
        return 1.0
    half = (IMAGE_W - 1) / 2.0
    return abs(col - half) / half


def centroid_offset_signed(img: BinaryImage) -> float | None:
    """Signed normalized centroid offset (positive = centroid right of center)."""
    col = centroid_column(img)
    if col is None:
        return None
    half = (IMAGE_W - 1) / 2.0
    return (col - half) / half


def write_pgm(img: BinaryImage, path) -> None:
    """Dump the image as binary PGM (P5), 0/255 after thresholding at 0.5."""
    data = ((img.grid > 0.5) * 255).astype(np.uint8)
    payload = f"P5\n{IMAGE_W} {IMAGE_H}\n255\n".encode() + data.tobytes()
    if hasattr(path, "write"):
        path.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)
