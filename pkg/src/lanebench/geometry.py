"""Clothoid curves, arc-length parameterized paths and reference tables."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# 20-point Gauss-Legendre rule on [-1, 1], shared by all quadrature below.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)

# Heading change per quadrature panel is kept below this bound so the
# 20-point rule stays far beyond 1e-10 accurate.
_MAX_PHASE_PER_PANEL = 0.35


class GeometryError(ValueError):
    """Invalid geometric input (out-of-range arc length, bad parameters)."""


class ClothoidFitError(GeometryError):
    """G1 clothoid fitting failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class ContinuityError(GeometryError):
    """A segment chain is not G1 continuous; carries the junction index."""

    def __init__(self, message: str, junction: int):
        super().__init__(message)
        self.junction = junction


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(theta, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


@dataclass(frozen=True)
class Pose2D:
    """Planar pose (meters, meters, radians); theta is wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ClothoidSegment:
    """Curve with linearly varying curvature kappa(s) = kappa0 + kappa_rate*s.

    Heading along the segment is start.theta + kappa0*s + kappa_rate*s^2/2;
    positions follow from Fresnel-type integrals of cos/sin of that heading.
    """

    start: Pose2D
    kappa0: float
    kappa_rate: float
    length: float

    def __post_init__(self):
        if self.length < 0.0:
            raise GeometryError(f"segment length must be >= 0, got {self.length}")

    def end(self) -> Pose2D:
        return point_at(self, self.length)


def _heading_at(seg: ClothoidSegment, s) -> float:
    return seg.start.theta + seg.kappa0 * s + 0.5 * seg.kappa_rate * s * s


def _gl_panels(theta0: float, k0: float, rate: float, a: float, b: float) -> tuple[float, float]:
    """Integrate (cos, sin) of theta0 + k0*s + rate*s^2/2 over [a, b]."""
    phase = abs(k0) * (b - a) + 0.5 * abs(rate) * abs(b * b - a * a)
    n = min(max(1, int(math.ceil(phase / _MAX_PHASE_PER_PANEL))), 2000)
    edges = np.linspace(a, b, n + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    s = mid + half * _GL_NODES[None, :]
    ang = theta0 + k0 * s + 0.5 * rate * s * s
    cx = float(np.sum((np.cos(ang) * _GL_WEIGHTS[None, :]) * half))
    sy = float(np.sum((np.sin(ang) * _GL_WEIGHTS[None, :]) * half))
    return cx, sy


def point_at(seg: ClothoidSegment, s: float) -> Pose2D:
    """Pose at arc length s in [0, length] along a clothoid segment."""
    if s < -1e-12 or s > seg.length + 1e-12:
        raise GeometryError(f"arc length {s} outside [0, {seg.length}]")
    s = min(max(s, 0.0), seg.length)
    th0 = seg.start.theta
    if s == 0.0:
        return seg.start
    if seg.kappa_rate == 0.0:
        if seg.kappa0 == 0.0:
            dx = s * math.cos(th0)
            dy = s * math.sin(th0)
        else:
            k = seg.kappa0
            dx = (math.sin(th0 + k * s) - math.sin(th0)) / k
            dy = (-math.cos(th0 + k * s) + math.cos(th0)) / k
    else:
        dx, dy = _gl_panels(th0, seg.kappa0, seg.kappa_rate, 0.0, s)
    return Pose2D(seg.start.x + dx, seg.start.y + dy, _heading_at(seg, s))


def points_along(seg: ClothoidSegment, s_values: np.ndarray) -> np.ndarray:
    """Poses at sorted arc lengths; returns an (n, 3) array of x, y, theta.

    Positions are accumulated incrementally between consecutive arc lengths,
    which keeps dense table sampling O(n) with one quadrature per interval.
    """
    s_values = np.asarray(s_values, dtype=float)
    if s_values.size == 0:
        return np.zeros((0, 3))
    if np.any(np.diff(s_values) < 0):
        raise GeometryError("s_values must be sorted ascending")
    if s_values[0] < -1e-12 or s_values[-1] > seg.length + 1e-12:
        raise GeometryError("s_values outside segment range")

    out = np.empty((s_values.size, 3))
    out[:, 2] = seg.start.theta + seg.kappa0 * s_values + 0.5 * seg.kappa_rate * s_values**2
    if seg.kappa_rate == 0.0:
        # Straight or circular arc: closed form, no quadrature needed.
        for i, s in enumerate(s_values):
            p = point_at(seg, float(s))
            out[i, 0], out[i, 1] = p.x, p.y
        return out

    bounds = np.concatenate(([0.0], s_values))
    x, y = seg.start.x, seg.start.y
    for i in range(s_values.size):
        a, b = float(bounds[i]), float(bounds[i + 1])
        if b > a:
            dx, dy = _gl_panels(seg.start.theta, seg.kappa0, seg.kappa_rate, a, b)
            x += dx
            y += dy
        out[i, 0], out[i, 1] = x, y
    return out


def _g1_integrals(phi0: float, delta: float, a_param: float) -> tuple[float, float, float]:
    """Return (Y, dY/dA, X) for the normalized clothoid heading polynomial.

    Y(A) = int_0^1 sin(phi0 + (delta - A) t + A t^2) dt and X is the cosine
    counterpart; the G1 fit solves Y(A) = 0.
    """
    phase = abs(delta - a_param) + abs(a_param) + abs(phi0)
    n = min(max(2, int(math.ceil(phase / _MAX_PHASE_PER_PANEL))), 400)
    edges = np.linspace(0.0, 1.0, n + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    t = mid + half * _GL_NODES[None, :]
    ang = phi0 + (delta - a_param) * t + a_param * t * t
    w = _GL_WEIGHTS[None, :] * half
    sin_a = np.sin(ang)
    cos_a = np.cos(ang)
    y = float(np.sum(sin_a * w))
    dy = float(np.sum((t * t - t) * cos_a * w))
    x = float(np.sum(cos_a * w))
    return y, dy, x


def fit_clothoid(p_start: Pose2D, p_end: Pose2D, max_iter: int = 100) -> ClothoidSegment:
    """Fit a single clothoid interpolating both endpoint poses (G1 Hermite).

    Newton iteration on the normalized curvature-rate parameter with a
    bracketing bisection fallback; raises ClothoidFitError on non-convergence.
    """
    dx = p_end.x - p_start.x
    dy = p_end.y - p_start.y
    r = math.hypot(dx, dy)
    if r < 1e-9:
        raise GeometryError("fit_clothoid requires distinct endpoint positions")
    phi = math.atan2(dy, dx)
    phi0 = wrap_angle(p_start.theta - phi)
    phi1 = wrap_angle(p_end.theta - phi)
    delta = phi1 - phi0

    a = 3.0 * (phi0 + phi1)
    converged = False
    residual = math.inf
    for _ in range(max_iter):
        y, dy_da, _ = _g1_integrals(phi0, delta, a)
        residual = abs(y)
        if residual <= 1e-13:
            converged = True
            break
        if dy_da == 0.0 or not math.isfinite(dy_da):
            break
        step = y / dy_da
        if not math.isfinite(step) or abs(step) > 1e3:
            break
        a -= step

    if not converged:
        a = _bisect_g1(phi0, delta, 3.0 * (phi0 + phi1), max_iter)
        y, _, _ = _g1_integrals(phi0, delta, a)
        residual = abs(y)
        if residual > 1e-10:
            raise ClothoidFitError("G1 clothoid root-find did not converge", residual)

    _, _, x_int = _g1_integrals(phi0, delta, a)
    if x_int <= 1e-12:
        raise ClothoidFitError("degenerate G1 solution (non-positive length)", x_int)
    length = r / x_int
    kappa0 = (delta - a) / length
    kappa_rate = 2.0 * a / (length * length)
    # Snap the numerically tiny parameters of straight/circular solutions.
    if abs(a) < 1e-12 * max(1.0, abs(delta)):
        kappa_rate = 0.0
        kappa0 = delta / length
    if abs(delta) < 1e-14 and abs(phi0) < 1e-14:
        kappa0 = 0.0
        kappa_rate = 0.0
        length = r
    return ClothoidSegment(start=p_start, kappa0=kappa0, kappa_rate=kappa_rate, length=length)


def _bisect_g1(phi0: float, delta: float, a_center: float, max_iter: int) -> float:
    """Find a sign change of Y around a_center and bisect it down."""
    span = 1.0
    lo = hi = a_center
    ylo = _g1_integrals(phi0, delta, a_center)[0]
    yhi = ylo
    for _ in range(60):
        lo, hi = a_center - span, a_center + span
        ylo = _g1_integrals(phi0, delta, lo)[0]
        yhi = _g1_integrals(phi0, delta, hi)[0]
        if ylo == 0.0:
            return lo
        if yhi == 0.0:
            return hi
        if ylo * yhi < 0.0:
            break
        span *= 1.6
    else:
        raise ClothoidFitError("no bracket for G1 bisection", min(abs(ylo), abs(yhi)))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        ym = _g1_integrals(phi0, delta, mid)[0]
        if abs(ym) <= 1e-13 or hi - lo < 1e-15:
            return mid
        if ylo * ym <= 0.0:
            hi = mid
        else:
            lo, ylo = mid, ym
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ArcPath:
    """Chain of G1-continuous clothoid segments with prefix-sum arc lengths."""

    segments: tuple[ClothoidSegment, ...]
    cumulative_length: tuple[float, ...]
    closed: bool

    @property
    def total_length(self) -> float:
        return self.cumulative_length[-1]


def concat_path(segments: list[ClothoidSegment], closed: bool) -> ArcPath:
    """Concatenate segments into a path, checking G1 continuity at junctions."""
    if not segments:
        raise GeometryError("cannot build a path from an empty segment list")
    for i in range(1, len(segments)):
        prev_end = segments[i - 1].end()
        nxt = segments[i].start
        if math.hypot(nxt.x - prev_end.x, nxt.y - prev_end.y) > 1e-6:
            raise ContinuityError(f"position discontinuity at junction {i}", i)
        if abs(wrap_angle(nxt.theta - prev_end.theta)) > 1e-6:
            raise ContinuityError(f"heading discontinuity at junction {i}", i)
    cumulative = []
    total = 0.0
    for seg in segments:
        total += seg.length
        cumulative.append(total)
    return ArcPath(segments=tuple(segments), cumulative_length=tuple(cumulative), closed=closed)


def _locate(path: ArcPath, s: float) -> tuple[int, float]:
    """Map path arc length to (segment index, local arc length)."""
    if s < -1e-9 or s > path.total_length + 1e-9:
        raise GeometryError(f"arc length {s} outside [0, {path.total_length}]")
    s = min(max(s, 0.0), path.total_length)
    idx = bisect.bisect_right(path.cumulative_length, s)
    if idx >= len(path.segments):
        idx = len(path.segments) - 1
    start_s = path.cumulative_length[idx - 1] if idx > 0 else 0.0
    local = min(s - start_s, path.segments[idx].length)
    return idx, local


def path_point_at(path: ArcPath, s: float) -> Pose2D:
    """Pose at cumulative arc length s along the path."""
    idx, local = _locate(path, s)
    return point_at(path.segments[idx], local)


def curvature_at(path: ArcPath, s: float) -> float:
    """Unsigned curvature magnitude at cumulative arc length s."""
    idx, local = _locate(path, s)
    seg = path.segments[idx]
    return abs(seg.kappa0 + seg.kappa_rate * local)


@dataclass(frozen=True, eq=False)
class RefTable:
    """Distance-stamped reference poses sampled every spacing_ds meters."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    spacing_ds: float

    def __len__(self) -> int:
        return int(self.s.size)

    def row_pose(self, i: int) -> Pose2D:
        return Pose2D(float(self.x[i]), float(self.y[i]), float(self.theta[i]))


def sample_reftable(path: ArcPath, ds: float) -> RefTable:
    """Sample the path at S = 0, ds, 2ds, ...; open paths keep their endpoint."""
    if ds <= 0.0:
        raise GeometryError(f"ds must be positive, got {ds}")
    total = path.total_length
    if total < ds:
        raise GeometryError(f"path length {total} shorter than ds={ds}")
    count = int(math.floor(total / ds + 1e-9))
    # On a closed loop a row at S = total would duplicate row 0.
    if path.closed and count * ds >= total - 1e-9:
        count -= 1
    s_values = [k * ds for k in range(count + 1)]
    if s_values[-1] > total:
        s_values[-1] = total
    if not path.closed and total - s_values[-1] > 1e-9:
        s_values.append(total)
    s_arr = np.array(s_values)

    xs = np.empty_like(s_arr)
    ys = np.empty_like(s_arr)
    thetas = np.empty_like(s_arr)
    # Batch per segment so dense tables do one incremental quadrature pass.
    seg_idx = np.empty(s_arr.size, dtype=int)
    local = np.empty_like(s_arr)
    for i, s in enumerate(s_arr):
        seg_idx[i], local[i] = _locate(path, float(s))
    for idx in np.unique(seg_idx):
        mask = seg_idx == idx
        pts = points_along(path.segments[idx], local[mask])
        xs[mask] = pts[:, 0]
        ys[mask] = pts[:, 1]
        thetas[mask] = [wrap_angle(t) for t in pts[:, 2]]
    return RefTable(s=s_arr, x=xs, y=ys, theta=thetas, spacing_ds=ds)


def nearest_index(table: RefTable, s: float) -> int:
    """Index minimizing |S_r - s|; ties go to the lower index; ends clamp."""
    n = len(table)
    if n == 0:
        raise GeometryError("reference table is empty")
    col = table.s
    pos = int(np.searchsorted(col, s))
    if pos <= 0:
        return 0
    if pos >= n:
        return n - 1
    below = s - col[pos - 1]
    above = col[pos] - s
    return pos - 1 if below <= above else pos


def write_reftable_csv(table: RefTable, path) -> None:
    """Serialize a reference table as CSV (S,x,y,theta at 9 significant digits)."""
    with open(path, "w", newline="") as fh:
        fh.write("S,x,y,theta\n")
        for i in range(len(table)):
            fh.write(
                f"{table.s[i]:.9g},{table.x[i]:.9g},{table.y[i]:.9g},{table.theta[i]:.9g}\n"
            )


def read_reftable_csv(path, spacing_ds: float) -> RefTable:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return RefTable(
        s=data[:, 0], x=data[:, 1], y=data[:, 2], theta=data[:, 3], spacing_ds=spacing_ds
    )
