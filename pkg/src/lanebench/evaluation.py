"""Experiment harness: metric aggregation, curvature bins, KL study, sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from .actors import OracleFollower
from .geometry import Pose2D, curvature_at, path_point_at, sample_reftable, wrap_angle
from .robot import BodyTwist, IKParams, body_to_wheel
from .sensor import MarkerKind, distill, render_view
from .tracking import EpisodeConfig, run_episode

TABLE_IV_EDGES = (0.001, 0.2, 0.4, 0.6, 0.8, 0.99)
KL_SIZES = (16, 32, 64, 128, 256, 512, 1024, 2048)
KL_BINS = 20
KL_SMOOTHING = 1e-6


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsRow:
    mean_e_x: float
    mean_e_theta: float
    mean_e_v: float
    e_v_signed: float  # mean realized v minus desired; sign annotation source
    s_term: float
    n: float
    mean_reward: float
    episodes: int

    @property
    def e_v_sign(self) -> str:
        return "+" if self.e_v_signed >= 0 else "-"


def normalized_error(mean_e_x: float, mean_e_v: float, s_term: float) -> float:
    """Distance-normalized cumulative tracking error |(e_x + e_V) / S_term|."""
    if s_term <= 0:
        raise EvalError("normalized error undefined for S_term <= 0")
    return abs((mean_e_x + mean_e_v) / s_term)


def episode_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def aggregate(records, v_desired: float) -> MetricsRow:
    """Pool per-step metrics over episodes (step-count weighted means)."""
    if not records:
        raise EvalError("no episodes to aggregate")
    e_x = np.concatenate([r.column("e_x") for r in records])
    e_theta = np.concatenate([r.column("e_theta") for r in records])
    e_v = np.concatenate([r.column("e_V") for r in records])
    v = np.concatenate([r.column("v") for r in records])
    s_term = float(np.mean([r.final_s for r in records]))
    mean_reward = float(np.mean([r.total_reward for r in records]))
    mean_e_x = float(e_x.mean())
    mean_e_v = float(e_v.mean())
    return MetricsRow(
        mean_e_x=mean_e_x,
        mean_e_theta=float(e_theta.mean()),
        mean_e_v=mean_e_v,
        e_v_signed=float((v - v_desired).mean()),
        s_term=s_term,
        n=normalized_error(mean_e_x, mean_e_v, s_term) if s_term > 0 else math.inf,
        mean_reward=mean_reward,
        episodes=len(records),
    )


def run_eval(actor_factory, track, camera, cfg: EpisodeConfig, episodes: int, seed: int,
             jobs: int = 1):
    """Run seeded episodes and aggregate their metrics.

    actor_factory is a zero-argument callable building a fresh actor per
    episode, so stateful controllers cannot leak across episodes or workers.
    """
    if episodes < 1:
        raise EvalError("need at least one episode")
    seeds = [episode_seed(seed, k) for k in range(episodes)]

    def one(ep_seed):
        return run_episode(track, camera, actor_factory(), cfg, seed=ep_seed)

    if jobs != 1:
        records = Parallel(n_jobs=jobs)(delayed(one)(s) for s in seeds)
    else:
        records = [one(s) for s in seeds]
    return records, aggregate(records, cfg.weights.v_desired)


@dataclass(frozen=True)
class CurvatureBin:
    kappa_lo: float
    kappa_hi: float
    mean_e_x: float
    mean_v: float
    samples: int


def bin_by_curvature(records, track, bin_edges=TABLE_IV_EDGES):
    """Assign each step to the curvature bin of its selected reference point."""
    edges = tuple(bin_edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise EvalError("bin edges must be strictly increasing")
    n_bins = len(edges) - 1
    sums_e = np.zeros(n_bins)
    sums_v = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=int)
    overflow = 0
    for rec in records:
        path = track.paths[rec.table_index]
        table = track.ref_tables[rec.table_index]
        idx = rec.column("i_star").astype(int)
        s_ref = np.clip(table.s[idx], 0.0, path.total_length)
        kappa = np.array([curvature_at(path, float(s)) for s in s_ref])
        e_x = rec.column("e_x")
        v = rec.column("v")
        which = np.searchsorted(edges, kappa, side="right") - 1
        for b in range(n_bins):
            mask = which == b
            sums_e[b] += e_x[mask].sum()
            sums_v[b] += v[mask].sum()
            counts[b] += int(mask.sum())
        overflow += int(((kappa < edges[0]) | (kappa > edges[-1])).sum())
    bins = [
        CurvatureBin(
            kappa_lo=edges[b],
            kappa_hi=edges[b + 1],
            mean_e_x=float(sums_e[b] / counts[b]) if counts[b] else math.nan,
            mean_v=float(sums_v[b] / counts[b]) if counts[b] else math.nan,
            samples=int(counts[b]),
        )
        for b in range(n_bins)
    ]
    return bins, overflow


@dataclass(frozen=True)
class ErrorHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float


def error_histogram(records, bin_width: float) -> ErrorHistogram:
    """Histogram of per-step e_x plus a moment-fit normal."""
    if bin_width <= 0:
        raise EvalError("bin width must be positive")
    e_x = np.concatenate([r.column("e_x") for r in records])
    top = max(bin_width, float(np.ceil(e_x.max() / bin_width)) * bin_width)
    edges = np.arange(0.0, top + 0.5 * bin_width, bin_width)
    counts, edges = np.histogram(e_x, bins=edges)
    return ErrorHistogram(
        edges=edges, counts=counts, mean=float(e_x.mean()), std=float(e_x.std())
    )


def _feature_histogram(values: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(values, bins=KL_BINS, range=(0.0, 1.0))
    p = counts.astype(float) + KL_SMOOTHING
    return p / p.sum()


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * np.log(p / q)))


def sample_track_poses(track, samples: int, seed: int):
    """Poses scattered along the canonical path with small lateral/heading jitter."""
    rng = np.random.default_rng(seed)
    path = track.paths[0]
    poses = []
    for _ in range(samples):
        s = rng.uniform(0.0, path.total_length)
        base = path_point_at(path, s)
        lateral = rng.uniform(-0.2, 0.2)
        heading = rng.uniform(-0.15, 0.15)
        poses.append(
            Pose2D(
                base.x - lateral * math.sin(base.theta),
                base.y + lateral * math.cos(base.theta),
                wrap_angle(base.theta + heading),
            )
        )
    return poses


def feature_kl(
    track,
    camera,
    reference: MarkerKind,
    others,
    sizes=KL_SIZES,
    samples: int = 200,
    seed: int = 0,
):
    """Per-dimension histogram KL of each marker's features against the reference.

    The same pose set is rendered under every marker kind; KL is averaged over
    feature dimensions for each distillation size d.
    """
    poses = sample_track_poses(track, samples, seed)
    kinds = [reference] + list(others)
    features = {}
    for kind in kinds:
        stacks = {d: [] for d in sizes}
        for pose in poses:
            img = render_view(pose, track, camera, kind=kind)
            for d in sizes:
                stacks[d].append(distill(img, d).values)
        features[kind.kind] = {d: np.stack(v) for d, v in stacks.items()}
    rows = []
    ref_name = reference.kind
    for d in sizes:
        ref_hists = [
            _feature_histogram(features[ref_name][d][:, i]) for i in range(d)
        ]
        for kind in kinds:
            hists = [_feature_histogram(features[kind.kind][d][:, i]) for i in range(d)]
            kl = float(np.mean([_kl(h, r) for h, r in zip(hists, ref_hists)]))
            rows.append({"d": d, "kind": kind.kind, "kl": kl})
    return rows


SWEEP_EXPERIMENTS = (
    "waypoint_spacing",
    "lookahead_alpha",
    "input_frequency",
    "marker_kind",
    "controller_compare",
    "ik_vs_e2e",
)

WAYPOINT_SPACING_GRID = (1.0, 0.75, 0.5, 0.25, 0.1)
VELOCITY_GRID = (0.75, 0.6, 0.45, 0.3, 0.15)
ALPHA_GRID = (0, 1, 2, 3, 4)
FREQUENCY_GRID = (20.0, 4.0, 2.0, 1.0)
MARKER_GRID = ("cone", "cylinder", "solid_lane")


def _with_tables(track, ds: float):
    if abs(ds - track.params.ds) < 1e-12:
        return track
    tables = tuple(sample_reftable(path, ds) for path in track.paths)
    return replace(track, ref_tables=tables)


class _WheelAdapter:
    """Present a body-twist actor to a wheel-speed action space."""

    def __init__(self, inner, ik: IKParams):
        self.inner = inner
        self.ik = ik

    def reset(self):
        self.inner.reset()

    def act(self, view):
        v, omega = self.inner.act(view)
        wheels = body_to_wheel(BodyTwist(v, omega), self.ik)
        return (wheels.left, wheels.right)


def sweep(experiment: str, track, camera, cfg: EpisodeConfig, episodes: int, seed: int,
          actor_factory=None, grid=None, jobs: int = 1):
    """One MetricsRow per grid point; default actor is the oracle follower.

    Returns (header, rows) ready for CSV serialization.
    """
    if experiment not in SWEEP_EXPERIMENTS:
        raise EvalError(f"unknown experiment {experiment!r}")
    base_factory = actor_factory

    def metrics(local_track, local_cfg, factory):
        _, row = run_eval(factory, local_track, camera, local_cfg, episodes, seed, jobs=jobs)
        return row

    rows = []
    if experiment == "waypoint_spacing":
        ds_grid, v_grid = grid if grid else (WAYPOINT_SPACING_GRID, VELOCITY_GRID)
        for ds in ds_grid:
            local = _with_tables(track, ds)
            for v_d in v_grid:
                weights = replace(cfg.weights, v_desired=v_d)
                local_cfg = replace(cfg, weights=weights)
                factory = base_factory or (lambda v=v_d: OracleFollower(v_desired=v))
                m = metrics(local, local_cfg, factory)
                rows.append({"ds": ds, "v_d": v_d, **_metrics_dict(m)})
        header = ["ds", "v_d"]
    elif experiment == "lookahead_alpha":
        for alpha in grid or ALPHA_GRID:
            local_cfg = replace(cfg, alpha=int(alpha))
            m = metrics(track, local_cfg, base_factory or OracleFollower)
            rows.append({"alpha": int(alpha), **_metrics_dict(m)})
        header = ["alpha"]
    elif experiment == "input_frequency":
        for hz in grid or FREQUENCY_GRID:
            local_cfg = replace(cfg, source_hz=float(hz))
            m = metrics(track, local_cfg, base_factory or OracleFollower)
            rows.append({"hz": float(hz), **_metrics_dict(m)})
        header = ["hz"]
    elif experiment == "marker_kind":
        for kind in grid or MARKER_GRID:
            local_cfg = replace(cfg, marker=_marker_by_name(kind))
            m = metrics(track, local_cfg, base_factory or OracleFollower)
            rows.append({"kind": kind, **_metrics_dict(m)})
        header = ["kind"]
    elif experiment == "controller_compare":
        from .actors import NMPCVisionActor, PDCenterActor, PurePursuitVisionActor

        controllers = grid or ("pd", "pure_pursuit", "nmpc", "oracle")
        factories = {
            "pd": PDCenterActor,
            "pure_pursuit": PurePursuitVisionActor,
            "nmpc": NMPCVisionActor,
            "oracle": OracleFollower,
        }
        for name in controllers:
            if base_factory is not None and name == "policy":
                factory = base_factory
            elif name in factories:
                factory = factories[name]
            else:
                raise EvalError(f"unknown controller {name!r}")
            m = metrics(track, cfg, factory)
            rows.append({"controller": name, **_metrics_dict(m)})
        header = ["controller"]
    else:  # ik_vs_e2e
        for space in grid or ("body_twist", "wheel_speeds"):
            local_cfg = replace(cfg, action_space=space)
            if base_factory is not None:
                factory = base_factory
            elif space == "wheel_speeds":
                factory = lambda: _WheelAdapter(OracleFollower(), cfg.ik)  # noqa: E731
            else:
                factory = OracleFollower
            m = metrics(track, local_cfg, factory)
            rows.append({"action_space": space, **_metrics_dict(m)})
        header = ["action_space"]
    header += ["mean_e_x", "mean_e_theta", "mean_e_v", "S_term", "N", "mean_reward"]
    return header, rows


def _marker_by_name(name: str) -> MarkerKind:
    builders = {
        "cone": MarkerKind.cone,
        "cylinder": MarkerKind.cylinder,
        "solid_lane": MarkerKind.solid_lane,
    }
    if name not in builders:
        raise EvalError(f"unknown marker kind {name!r}")
    return builders[name]()


def _metrics_dict(m: MetricsRow) -> dict:
    return {
        "mean_e_x": m.mean_e_x,
        "mean_e_theta": m.mean_e_theta,
        "mean_e_v": m.mean_e_v,
        "S_term": m.s_term,
        "N": m.n,
        "mean_reward": m.mean_reward,
    }


def write_rows_csv(header, rows, path) -> None:
    """Serialize sweep rows; floats at 6 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            out = []
            for key in header:
                value = row[key]
                if isinstance(value, str):
                    out.append(value)
                elif isinstance(value, (int, np.integer)):
                    out.append(str(int(value)))
                else:
                    out.append(f"{value:.6g}")
            fh.write(",".join(out) + "\n")


def write_kl_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("d,kind,kl\n")
        for row in rows:
            fh.write(f"{row['d']},{row['kind']},{row['kl']:.6g}\n")


def write_bins_csv(bins, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("kappa_lo,kappa_hi,mean_e_x,mean_v,samples\n")
        for b in bins:
            fh.write(
                f"{b.kappa_lo:.6g},{b.kappa_hi:.6g},{b.mean_e_x:.6g},{b.mean_v:.6g},{b.samples}\n"
            )
