"""Closed-loop lane synthesis, cone layouts, waypoint sets and their reference tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from shapely.geometry import LineString

from .geometry import (
    ArcPath,
    ClothoidFitError,
    ClothoidSegment,
    GeometryError,
    Pose2D,
    concat_path,
    fit_clothoid,
    sample_reftable,
)

# Base-curve tip curvature (1/m) the loop generator aims for; high enough to
# populate the steepest curvature bin, low enough that +-0.65 m lane offsets
# stay cusp-free.
_TIP_CURVATURE = 1.1


class TrackError(ValueError):
    """Track construction failed (geometry violation or bad arguments)."""


class PinchedLoop:
    """Lemniscate-like closed base curve: a long oval pinched at the waist.

    x(t) = A cos(u), y(t) = sin(u) (C + B cos^2 u) with u = 2 pi t. The loop
    is simple (y vanishes only at the tips) and left/right symmetric; with
    C < 2B the waist is concave, so the curvature sweeps from -(2B-C)/A^2
    through zero up to A/(B+C)^2 at the tips.
    """

    def __init__(self, scale: float):
        if scale <= 0:
            raise TrackError(f"scale must be positive, got {scale}")
        self.scale = scale
        total = math.sqrt(scale / _TIP_CURVATURE)
        self.b = total / 1.75
        self.c = 0.75 * self.b

    def point(self, t):
        u = 2.0 * math.pi * np.asarray(t, dtype=float)
        x = self.scale * np.cos(u)
        y = np.sin(u) * (self.c + self.b * np.cos(u) ** 2)
        return np.stack([x, y], axis=-1)

    def _derivatives(self, t):
        u = 2.0 * math.pi * np.asarray(t, dtype=float)
        cos_u, sin_u = np.cos(u), np.sin(u)
        d1 = np.stack(
            [
                -self.scale * sin_u,
                cos_u * (self.c - 2 * self.b + 3 * self.b * cos_u**2),
            ],
            axis=-1,
        )
        d2 = np.stack(
            [
                -self.scale * cos_u,
                -sin_u * (self.c - 2 * self.b + 9 * self.b * cos_u**2),
            ],
            axis=-1,
        )
        return d1, d2

    def unit_normal(self, t):
        """Left unit normal of the traversal direction."""
        d1, _ = self._derivatives(t)
        norm = np.linalg.norm(d1, axis=-1, keepdims=True)
        return np.stack([-d1[..., 1], d1[..., 0]], axis=-1) / norm

    def curvature(self, t):
        """Signed curvature (positive = turning left)."""
        d1, d2 = self._derivatives(t)
        num = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        speed = np.linalg.norm(d1, axis=-1)
        return num / speed**3


class OffsetLoop:
    """A base curve shifted along its unit normal by a constant offset."""

    def __init__(self, base: PinchedLoop, offset: float):
        self.base = base
        self.offset = offset

    def point(self, t):
        return self.base.point(t) + self.offset * self.base.unit_normal(t)


class PolylineLoop:
    """Closed or open polyline curve used for tracks imported from center points."""

    def __init__(self, points: np.ndarray, closed: bool):
        self.points = np.asarray(points, dtype=float)
        self.closed = closed

    def point(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        pts = self.points
        n = len(pts)
        span = n if self.closed else n - 1
        pos = np.clip(t, 0.0, 1.0) * span
        i0 = np.minimum(pos.astype(int), span - 1)
        frac = pos - i0
        i1 = (i0 + 1) % n
        out = pts[i0] * (1 - frac)[:, None] + pts[i1] * frac[:, None]
        return out if out.shape[0] > 1 else out[0]


@dataclass(frozen=True)
class LaneCurves:
    """Left/right lane boundary curves with a guaranteed pointwise separation."""

    c1: object
    c2: object
    min_separation: float


@dataclass(frozen=True, eq=False)
class ConeLayout:
    lane1_cones: np.ndarray
    lane2_cones: np.ndarray
    nominal1: np.ndarray
    nominal2: np.ndarray
    seed: int
    mode: str = "exact"


@dataclass(frozen=True, eq=False)
class WaypointSets:
    sets: tuple
    shift_w: int
    n: int


@dataclass(frozen=True, eq=False)
class TrackSpec:
    lane_curves: LaneCurves
    cones: ConeLayout
    waypoint_sets: WaypointSets
    ref_tables: tuple
    lane_width: float
    paths: tuple
    cone_s: np.ndarray  # arc length of each cone index along the canonical path
    params: "TrackParams"

    @property
    def n_tables(self) -> int:
        return len(self.ref_tables)


@dataclass(frozen=True)
class TrackParams:
    seed: int = 0
    scale: float = 10.0
    n: int = 200
    j: int = 10
    w: int = 40
    perturb_radius: float = 0.15
    ds: float = 0.1
    min_separation: float = 1.3
    lane_width: float = 1.3
    cone_mode: str = "exact"
    closed: bool = True
    source: str = "figure_eight"


def make_figure_eight(scale: float, min_separation: float) -> LaneCurves:
    """Build the two lane curves of the pinched figure-eight-style loop."""
    if scale <= 0 or min_separation <= 0:
        raise TrackError("scale and min_separation must be positive")
    base = PinchedLoop(scale)
    grid = np.linspace(0.0, 1.0, 4096, endpoint=False)
    kappa_max = float(np.max(np.abs(base.curvature(grid))))
    half = 0.5 * min_separation
    if kappa_max * half >= 0.95:
        raise TrackError(
            f"scale {scale} too small for lane separation {min_separation}: "
            f"offset curves would cusp (max base curvature {kappa_max:.3f})"
        )
    curves = LaneCurves(
        c1=OffsetLoop(base, +half), c2=OffsetLoop(base, -half), min_separation=min_separation
    )
    for lane in (curves.c1, curves.c2):
        pts = lane.point(grid)
        ring = LineString(np.vstack([pts, pts[:1]]))
        if not ring.is_simple:
            raise TrackError("lane offset curve self-intersects; increase scale")
    return curves


def discretize_lanes(curves: LaneCurves, n: int):
    """Sample both lanes at parameters (i-1)/(n-1) for i = 1..n."""
    if n < 3:
        raise TrackError(f"need at least 3 discretization points, got {n}")
    t = np.linspace(0.0, 1.0, n)
    return curves.c1.point(t), curves.c2.point(t)


def geometric_center(points1: np.ndarray, points2: np.ndarray) -> np.ndarray:
    """Midpoints of corresponding lane samples."""
    points1 = np.asarray(points1, dtype=float)
    points2 = np.asarray(points2, dtype=float)
    if points1.shape != points2.shape:
        raise TrackError(f"lane point counts differ: {points1.shape} vs {points2.shape}")
    return 0.5 * (points1 + points2)


def randomize_cones(
    nominal1: np.ndarray,
    nominal2: np.ndarray,
    r: float,
    seed: int,
    mode: str = "exact",
) -> ConeLayout:
    """Perturb nominal cone positions by radius r at uniform angles.

    mode "exact" places every cone exactly r away (displacement on the circle);
    mode "uniform-disc" draws the displacement magnitude from U[0, r].
    """
    if r < 0:
        raise TrackError(f"perturbation radius must be >= 0, got {r}")
    if mode not in ("exact", "uniform-disc"):
        raise TrackError(f"unknown cone perturbation mode {mode!r}")
    rng = np.random.default_rng(seed)
    layout = []
    for nominal in (np.asarray(nominal1, float), np.asarray(nominal2, float)):
        beta = rng.uniform(0.0, 2.0 * math.pi, len(nominal))
        rho = r if mode == "exact" else rng.uniform(0.0, r, len(nominal))
        disp = np.stack([rho * np.cos(beta), rho * np.sin(beta)], axis=-1)
        layout.append(nominal + disp)
    return ConeLayout(
        lane1_cones=layout[0],
        lane2_cones=layout[1],
        nominal1=np.asarray(nominal1, float),
        nominal2=np.asarray(nominal2, float),
        seed=seed,
        mode=mode,
    )


def make_waypoint_sets(centers: np.ndarray, j: int, w: int) -> WaypointSets:
    """Generate j waypoint sets: j/2 circular shifts of stride w plus their reversals."""
    centers = np.asarray(centers, dtype=float)
    n = len(centers)
    if j < 2 or j % 2 != 0:
        raise TrackError(f"j must be a positive even count, got {j}")
    if w < 0 or w * (j // 2 - 1) >= n:
        raise TrackError(f"shift stride w={w} with j={j} exceeds n={n}")
    shifted = [np.roll(centers, -k * w, axis=0) for k in range(j // 2)]
    reversed_sets = [s[::-1].copy() for s in shifted]
    return WaypointSets(sets=tuple(shifted + reversed_sets), shift_w=w, n=n)


def _dedupe_cycle(points: np.ndarray, closed: bool) -> np.ndarray:
    """Drop consecutive (and wraparound) duplicate waypoints before fitting."""
    pts = np.asarray(points, dtype=float)
    keep = [0]
    for i in range(1, len(pts)):
        if np.hypot(*(pts[i] - pts[keep[-1]])) > 1e-9:
            keep.append(i)
    out = pts[keep]
    if closed and len(out) > 1 and np.hypot(*(out[-1] - out[0])) <= 1e-9:
        out = out[:-1]
    if len(out) < 3:
        raise TrackError("fewer than 3 distinct waypoints after deduplication")
    return out


def _waypoint_headings(points: np.ndarray, closed: bool) -> np.ndarray:
    n = len(points)
    headings = np.empty(n)
    for i in range(n):
        if closed:
            d = points[(i + 1) % n] - points[(i - 1) % n]
        elif i == 0:
            d = points[1] - points[0]
        elif i == n - 1:
            d = points[-1] - points[-2]
        else:
            d = points[i + 1] - points[i - 1]
        headings[i] = math.atan2(d[1], d[0])
    return headings


def fit_center_path(points: np.ndarray, closed: bool = True, set_index: int = 0) -> ArcPath:
    """Fit a G1 clothoid chain through waypoints, headings from chord directions."""
    pts = _dedupe_cycle(points, closed)
    headings = _waypoint_headings(pts, closed)
    n = len(pts)
    segments = []
    pairs = n if closed else n - 1
    for i in range(pairs):
        k = (i + 1) % n
        p0 = Pose2D(pts[i, 0], pts[i, 1], headings[i])
        p1 = Pose2D(pts[k, 0], pts[k, 1], headings[k])
        try:
            segments.append(fit_clothoid(p0, p1))
        except ClothoidFitError as err:
            raise TrackError(f"clothoid fit failed on set {set_index}, segment {i}: {err}") from err
    # Re-anchor each start on the previous fitted endpoint so the chain is
    # exactly continuous despite 1e-13-level fit residuals.
    anchored = [segments[0]]
    for seg in segments[1:]:
        prev_end = anchored[-1].end()
        anchored.append(
            ClothoidSegment(
                start=prev_end, kappa0=seg.kappa0, kappa_rate=seg.kappa_rate, length=seg.length
            )
        )
    return concat_path(anchored, closed=closed)


def build_ref_tables(sets: WaypointSets, ds: float, closed: bool = True):
    """Fit per-set clothoid paths and sample their reference tables."""
    if ds <= 0:
        raise TrackError(f"ds must be positive, got {ds}")
    paths = []
    tables = []
    for k, points in enumerate(sets.sets):
        path = fit_center_path(points, closed=closed, set_index=k)
        try:
            tables.append(sample_reftable(path, ds))
        except GeometryError as err:
            raise TrackError(f"reference sampling failed on set {k}: {err}") from err
        paths.append(path)
    return tables, paths


def _cone_arc_lengths(path: ArcPath, n_cones: int) -> np.ndarray:
    """Arc length of each cone index along the canonical (unshifted) path."""
    n_seg = len(path.segments)
    s_wp = np.concatenate(([0.0], np.asarray(path.cumulative_length)))
    return np.array([s_wp[i % n_seg] for i in range(n_cones)])


def make_track(params: TrackParams = TrackParams()) -> TrackSpec:
    """Generate the full training track from scratch (deterministic by seed)."""
    curves = make_figure_eight(params.scale, params.min_separation)
    pts1, pts2 = discretize_lanes(curves, params.n)
    centers = geometric_center(pts1, pts2)
    cones = randomize_cones(pts1, pts2, params.perturb_radius, params.seed, params.cone_mode)
    sets = make_waypoint_sets(centers, params.j, params.w)
    tables, paths = build_ref_tables(sets, params.ds, closed=True)
    return TrackSpec(
        lane_curves=curves,
        cones=cones,
        waypoint_sets=sets,
        ref_tables=tuple(tables),
        lane_width=params.lane_width,
        paths=tuple(paths),
        cone_s=_cone_arc_lengths(paths[0], params.n),
        params=params,
    )


def _polyline_normals(points: np.ndarray, closed: bool) -> np.ndarray:
    headings = _waypoint_headings(points, closed)
    return np.stack([-np.sin(headings), np.cos(headings)], axis=-1)


def make_track_from_centers(
    centers: np.ndarray, params: TrackParams, closed: bool = True
) -> TrackSpec:
    """Build a track around imported center points (lanes offset along normals)."""
    centers = np.asarray(centers, dtype=float)
    normals = _polyline_normals(centers, closed)
    half = 0.5 * params.min_separation
    nominal1 = centers + half * normals
    nominal2 = centers - half * normals
    curves = LaneCurves(
        c1=PolylineLoop(nominal1, closed),
        c2=PolylineLoop(nominal2, closed),
        min_separation=params.min_separation,
    )
    cones = randomize_cones(nominal1, nominal2, params.perturb_radius, params.seed, params.cone_mode)
    if closed and params.j >= 2 and params.j % 2 == 0 and params.w * (params.j // 2 - 1) < len(centers):
        sets = make_waypoint_sets(centers, params.j, params.w)
    else:
        sets = WaypointSets(sets=(centers.copy(),), shift_w=0, n=len(centers))
    tables, paths = build_ref_tables(sets, params.ds, closed=closed)
    used = replace(
        params, n=len(centers), closed=closed, source="centers_csv", j=len(sets.sets)
    )
    return TrackSpec(
        lane_curves=curves,
        cones=cones,
        waypoint_sets=sets,
        ref_tables=tuple(tables),
        lane_width=params.lane_width,
        paths=tuple(paths),
        cone_s=_cone_arc_lengths(paths[0], len(centers)),
        params=used,
    )


def make_circle_track(radius: float, params: TrackParams, n: int = 120) -> TrackSpec:
    """Convenience loop of constant curvature 1/radius (test corridors)."""
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    centers = np.stack([radius * np.cos(t), radius * np.sin(t)], axis=-1)
    return make_track_from_centers(centers, params, closed=True)
