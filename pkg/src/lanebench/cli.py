"""Command-line entry point: track generation, runs, training, eval, sweeps."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .actors import (
    FixedActionActor,
    NMPCTableActor,
    NMPCVisionActor,
    OracleFollower,
    PDCenterActor,
    PurePursuitTableActor,
    PurePursuitVisionActor,
    ZeroActor,
)
from .config import ConfigError, RunConfig
from .evaluation import (
    EvalError,
    aggregate,
    bin_by_curvature,
    error_histogram,
    feature_kl,
    run_eval,
    sweep,
    write_bins_csv,
    write_kl_csv,
    write_rows_csv,
)
from .policy import PolicyActor, TrainEnv, cem_train, load_policy, save_policy, write_curve_csv
from .sensor import MarkerKind, render_view, write_pgm
from .track import TrackError, make_track, make_track_from_centers
from .trackio import load_centers_csv, load_track, save_track
from .tracking import run_episode
from .evaluation import episode_seed, sample_track_poses

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2


class InfeasibleRun(RuntimeError):
    pass


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.apply_overrides(args.set)
    return cfg


def _actor_factory(cfg: RunConfig, camera):
    kind = cfg["controller.kind"]
    if kind == "oracle":
        return lambda: OracleFollower(
            v_desired=cfg["reward.v_desired"],
            lookahead=cfg["oracle.lookahead"],
            margin=cfg["oracle.margin"],
        )
    if kind == "pd":
        return lambda: PDCenterActor(cfg.pd_gains())
    if kind == "pure_pursuit":
        if cfg["pp.source"] == "table":
            return lambda: PurePursuitTableActor(cfg.pp_config())
        return lambda: PurePursuitVisionActor(
            cfg.pp_config(), camera, lane_width=cfg["track.lane_width"]
        )
    if kind == "nmpc":
        if cfg["mpc.source"] == "table":
            return lambda: NMPCTableActor(cfg.mpc_config(), v_ref=cfg["reward.v_desired"])
        return lambda: NMPCVisionActor(
            cfg.mpc_config(),
            v_ref=cfg["reward.v_desired"],
            cam=camera,
            lane_width=cfg["track.lane_width"],
        )
    if kind == "policy":
        path = cfg["controller.policy_file"]
        if not path or not Path(path).exists():
            raise ConfigError(f"controller.kind=policy requires controller.policy_file, got {path!r}")
        policy = load_policy(path)
        if policy.feature_dim != cfg["tracking.feature_dim"]:
            raise ConfigError(
                f"policy dimension {policy.feature_dim} != tracking.feature_dim "
                f"{cfg['tracking.feature_dim']}"
            )
        return lambda: PolicyActor(policy, ik=cfg.ik_params())
    if kind == "fixed":
        return lambda: FixedActionActor(cfg["fixed.v"], cfg["fixed.omega"])
    if kind == "zero":
        return ZeroActor
    raise ConfigError(f"unknown controller.kind {kind!r}")


def _build_track(cfg: RunConfig):
    params = cfg.track_params()
    centers_csv = cfg["track.centers_csv"]
    if centers_csv:
        centers = load_centers_csv(centers_csv)
        return make_track_from_centers(centers, params, closed=cfg["track.closed"])
    return make_track(params)


def cmd_gen_track(args) -> int:
    cfg = _load_config(args)
    track = _build_track(cfg)
    out = Path(args.out)
    save_track(track, out)
    cfg.save(out / "run_config.toml")
    print(f"track bundle written to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    track = load_track(args.track)
    camera = cfg.camera()
    episodes = args.episodes if args.episodes is not None else cfg["run.episodes"]
    seed = cfg["run.seed"]
    factory = _actor_factory(cfg, camera)
    episode_cfg = cfg.episode_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for k in range(episodes):
        actor = factory()
        record = run_episode(
            track,
            camera,
            actor,
            episode_cfg,
            seed=episode_seed(seed, k),
            record_features=cfg["run.record_features"],
        )
        record.write_csv(out / f"episode_{k:03d}.csv")
        if cfg["run.record_features"]:
            with open(out / f"features_{k:03d}.csv", "w", newline="") as fh:
                for row in record.features:
                    fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
        records.append(record)
        failures = getattr(actor, "failures", 0)
        if failures and failures >= len(record):
            raise InfeasibleRun(
                f"controller produced no feasible command for all {len(record)} steps "
                f"of episode {k}"
            )
    row = aggregate(records, episode_cfg.weights.v_desired)
    write_rows_csv(
        ["mean_e_x", "mean_e_theta", "mean_e_v", "e_v_sign", "S_term", "N", "mean_reward", "episodes"],
        [
            {
                "mean_e_x": row.mean_e_x,
                "mean_e_theta": row.mean_e_theta,
                "mean_e_v": row.mean_e_v,
                "e_v_sign": row.e_v_sign,
                "S_term": row.s_term,
                "N": row.n,
                "mean_reward": row.mean_reward,
                "episodes": row.episodes,
            }
        ],
        out / "metrics.csv",
    )
    print(f"{episodes} episode(s) written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    track = load_track(args.track)
    camera = cfg.camera()
    episode_cfg = cfg.episode_config(max_steps=cfg["cem.train_max_steps"])
    env = TrainEnv(track=track, camera=camera, cfg=episode_cfg)
    policy, curve = cem_train(env, cfg["tracking.reward_mode"], cfg.cem_config(jobs=args.jobs))
    save_policy(policy, args.out)
    if args.curve:
        write_curve_csv(curve, args.curve)
    print(f"policy written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    track = load_track(args.track)
    camera = cfg.camera()
    factory = _actor_factory(cfg, camera)
    episode_cfg = cfg.episode_config()
    records, row = run_eval(
        factory, track, camera, episode_cfg, episodes=cfg["eval.episodes"],
        seed=cfg["eval.seed"], jobs=args.jobs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(
        ["mean_e_x", "mean_e_theta", "mean_e_v", "e_v_sign", "S_term", "N", "mean_reward", "episodes"],
        [
            {
                "mean_e_x": row.mean_e_x,
                "mean_e_theta": row.mean_e_theta,
                "mean_e_v": row.mean_e_v,
                "e_v_sign": row.e_v_sign,
                "S_term": row.s_term,
                "N": row.n,
                "mean_reward": row.mean_reward,
                "episodes": row.episodes,
            }
        ],
        out / "metrics.csv",
    )
    bins, overflow = bin_by_curvature(records, track, bin_edges=tuple(cfg["eval.bin_edges"]))
    write_bins_csv(bins, out / "curvature_bins.csv")
    hist = error_histogram(records, cfg["eval.hist_bin_width"])
    with open(out / "histogram.csv", "w", newline="") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for lo, hi, count in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            fh.write(f"{lo:.6g},{hi:.6g},{int(count)}\n")
        fh.write(f"# normal_fit mean={hist.mean:.6g} std={hist.std:.6g}\n")
        fh.write(f"# overflow_samples={overflow}\n")
    print(f"evaluation artifacts written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    track = load_track(args.track)
    camera = cfg.camera()
    factory = None
    if cfg["controller.kind"] == "policy":
        factory = _actor_factory(cfg, camera)
    episode_cfg = cfg.episode_config()
    header, rows = sweep(
        args.experiment,
        track,
        camera,
        episode_cfg,
        episodes=cfg["eval.episodes"],
        seed=cfg["eval.seed"],
        actor_factory=factory,
        jobs=args.jobs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{args.experiment}.csv"
    write_rows_csv(header, rows, csv_path)
    if args.plot:
        _plot_rows(header, rows, out / f"{args.experiment}.svg")
    print(f"sweep written to {csv_path}")
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _load_config(args)
    track = load_track(args.track)
    camera = cfg.camera()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reference = cfg["kl.reference"]
    kinds = {
        "cone": MarkerKind("cone", cfg["marker.cone_radius"]),
        "cylinder": MarkerKind("cylinder", cfg["marker.cylinder_side"]),
        "solid_lane": MarkerKind("solid_lane", cfg["marker.lane_stripe_width"]),
    }
    if reference not in kinds:
        raise ConfigError(f"kl.reference: unknown marker {reference!r}")
    others = [v for k, v in kinds.items() if k != reference]
    rows = feature_kl(
        track,
        camera,
        kinds[reference],
        others,
        sizes=tuple(int(v) for v in cfg["kl.sizes"]),
        samples=cfg["kl.samples"],
        seed=cfg["kl.seed"],
    )
    write_kl_csv(rows, out / "kl.csv")
    # Feature dump at the configured dimension plus one sample image per kind.
    from .sensor import distill

    d = cfg["tracking.feature_dim"]
    poses = sample_track_poses(track, min(cfg["kl.samples"], 50), cfg["kl.seed"])
    for name, kind in kinds.items():
        with open(out / f"features_{name}.csv", "w", newline="") as fh:
            for pose in poses:
                img = render_view(pose, track, camera, kind=kind)
                fh.write(",".join(f"{v:.9g}" for v in distill(img, d).values) + "\n")
        if args.dump_images:
            write_pgm(render_view(poses[0], track, camera, kind=kind), out / f"view_{name}.pgm")
    print(f"feature study written to {out}")
    return EXIT_OK


def _plot_rows(header, rows, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "lanebench"
    import matplotlib.pyplot as plt

    x_key = header[0]
    metric_keys = [k for k in header[1:] if isinstance(rows[0][k], (int, float))]
    fig, ax = plt.subplots(figsize=(7, 4))
    x_raw = [row[x_key] for row in rows]
    numeric_x = all(isinstance(v, (int, float)) for v in x_raw)
    xs = x_raw if numeric_x else range(len(x_raw))
    for key in metric_keys:
        ax.plot(xs, [row[key] for row in rows], marker="o", label=key)
    if not numeric_x:
        ax.set_xticks(list(xs), [str(v) for v in x_raw])
    ax.set_xlabel(x_key)
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanebench",
        description="Deterministic skid-steer lane-keeping simulation benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, track=True):
        p.add_argument("--config", help="TOML config file (flat dotted keys)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                       help="override a config key")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        if track:
            p.add_argument("--track", required=True, help="track bundle directory")

    p = sub.add_parser("gen-track", help="generate a track bundle")
    common(p, track=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_track)

    p = sub.add_parser("run", help="run controller episodes")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="train a policy with the cross-entropy method")
    common(p)
    p.add_argument("--out", required=True, help="output policy CSV")
    p.add_argument("--curve", default=None, help="output training-curve CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a controller and aggregate metrics")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run an experiment grid")
    common(p)
    p.add_argument("--experiment", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true", help="emit an SVG plot of the sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("features", help="feature distributions and KL study")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-images", action="store_true")
    p.set_defaults(func=cmd_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleRun as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, TrackError, EvalError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
