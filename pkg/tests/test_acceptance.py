"""Acceptance suite: every criterion prints one PASS line at its stated tolerance.

The cross-entropy training block (criterion 7, reused by 8 and 11) honors the
stated budget: population 64, <= 200 iterations, 3 seeds, both reward modes.
Set LANEBENCH_FAST=1 to shrink it during development; the default is the full
protocol.
"""
import math
import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from lanebench.actors import NMPCTableActor, OracleFollower, PDCenterActor, PurePursuitTableActor
from lanebench.controllers import MPCConfig, PDGains, PurePursuitConfig
from lanebench.evaluation import (
    bin_by_curvature,
    episode_seed,
    feature_kl,
    normalized_error,
    run_eval,
    sweep,
)
from lanebench.geometry import (
    Pose2D,
    RefTable,
    fit_clothoid,
    nearest_index,
    point_at,
    sample_reftable,
    wrap_angle,
)
from lanebench.policy import CEMConfig, PolicyActor, TrainEnv, cem_train
from lanebench.robot import (
    BodyTwist,
    IKParams,
    RobotState,
    SlipModel,
    WheelSpeeds,
    body_to_wheel,
    ik_wheel_to_body,
    step_dynamics,
)
from lanebench.sensor import CameraModel, MarkerKind
from lanebench.tracking import (
    DoneReason,
    EpisodeConfig,
    RewardWeights,
    TerminationConfig,
    orientation_error,
    orientation_error_angle,
    run_episode,
    select_waypoint,
    step_reward,
)

FAST = os.environ.get("LANEBENCH_FAST", "") == "1"

# Policy-block configuration. Cruise speed per the mid-range sweet spot of the
# operating envelope; the steep shared velocity-penalty valley pins both reward
# modes to the same speed so completed arc length compares survival, and the
# longer-preview camera exposes the centroid's curve bias that separates
# centroid-guided from waypoint-guided learning.
TRAIN_WEIGHTS = RewardWeights(
    v_desired=0.45, v_penalty_center=0.45, v_penalty_halfwidth=0.2
)
POLICY_CAMERA = CameraModel(pitch=0.22)


def ok(name: str, detail: str):
    print(f"[PASS] {name}: {detail}")


@pytest.fixture(scope="module")
def eval_track(figure_eight):
    """Evaluation track: same loop resampled at ds = 0.01 m."""
    tables = tuple(sample_reftable(p, 0.01) for p in figure_eight.paths)
    return replace(figure_eight, ref_tables=tables)


@pytest.fixture(scope="module")
def trained_policies(figure_eight):
    """Three seeds x {wpg, icg} trained at the acceptance budget."""
    train_cfg = EpisodeConfig(
        termination=TerminationConfig(max_steps=400), weights=TRAIN_WEIGHTS
    )
    env = TrainEnv(track=figure_eight, camera=POLICY_CAMERA, cfg=train_cfg)
    if FAST:
        scale = dict(population=16, iterations=4, episodes_per_candidate=2)
        seeds = (1,)
    else:
        scale = dict(population=64, iterations=14, episodes_per_candidate=3)
        seeds = (1, 2, 3)
    policies = {}
    for seed in seeds:
        for offset, mode in ((0, "wpg"), (50, "icg")):
            cem = CEMConfig(
                init_std=0.2,
                v_bias_init=0.45,
                steer_prior_gain=4.0,
                seed=101 * seed + offset,
                jobs=2,
                **scale,
            )
            policies[(mode, seed)], _ = cem_train(env, mode, cem)
    return policies, seeds


def eval_policy(policy, track, camera, episodes=20, source_hz=20.0, marker=None, seed=777):
    cfg = EpisodeConfig(weights=TRAIN_WEIGHTS, source_hz=source_hz)
    if marker is not None:
        cfg = replace(cfg, marker=marker)
    records = [
        run_episode(track, camera, PolicyActor(policy), cfg, seed=episode_seed(seed, k))
        for k in range(episodes)
    ]
    e_x = float(np.concatenate([r.column("e_x") for r in records]).mean())
    s_term = float(np.mean([r.final_s for r in records]))
    early = sum(1 for r in records if r.done_reason is not DoneReason.MAX_STEPS)
    return e_x, s_term, early, len(records)


class TestCriterion01RewardBounds:
    def test_bounds_and_oracle_return(self, figure_eight, camera):
        rng = np.random.default_rng(0)
        w = RewardWeights()
        lo, hi = math.inf, -math.inf
        for _ in range(100_000):
            r = step_reward(
                rng.uniform(-2, 5),
                rng.uniform(-1, 2),
                rng.uniform(-1, 2),
                BodyTwist(rng.uniform(-3, 3), rng.uniform(-3, 3)),
                w,
            )
            lo, hi = min(lo, r), max(hi, r)
            assert 0.0 <= r <= 5.0
        slow = RewardWeights(v_desired=0.1)
        record = run_episode(
            figure_eight,
            camera,
            OracleFollower(v_desired=0.1),
            EpisodeConfig(weights=slow),
            seed=3,
        )
        ret = record.total_reward
        assert len(record) == 1000
        assert 4500.0 <= ret <= 5000.0
        ok(
            "reward-bounds",
            f"1e5 samples in [{lo:.3f}, {hi:.3f}] within [0,5]; oracle return {ret:.1f}",
        )


class TestCriterion02OrientationError:
    def test_closed_form_and_termination_angle(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(10_000):
            a, b = rng.uniform(-math.pi, math.pi, 2)
            d = math.remainder(a - b, 2 * math.pi)
            worst = max(worst, abs(orientation_error(a, b) - (1 - math.cos(d / 2))))
        assert worst <= 1e-12
        angle = orientation_error_angle(0.1)
        assert abs(angle - 2 * math.acos(0.9)) <= 1e-9
        assert abs(angle - 0.902054) < 1e-6
        ok("orientation-error", f"max closed-form deviation {worst:.2e}; angle {angle:.6f} rad")


class TestCriterion03ClothoidG1:
    def test_random_pairs_and_quarter_circle(self):
        rng = np.random.default_rng(2)
        worst_pos, worst_head = 0.0, 0.0
        for _ in range(1000):
            x0, y0 = rng.uniform(-5, 5, 2)
            th0 = rng.uniform(-math.pi, math.pi)
            dist = rng.uniform(0.1, 5.0)
            ang = rng.uniform(-math.pi, math.pi)
            p0 = Pose2D(x0, y0, th0)
            p1 = Pose2D(
                x0 + dist * math.cos(ang), y0 + dist * math.sin(ang),
                th0 + rng.uniform(-2.0, 2.0),
            )
            seg = fit_clothoid(p0, p1)
            end = point_at(seg, seg.length)
            worst_pos = max(worst_pos, math.hypot(end.x - p1.x, end.y - p1.y))
            worst_head = max(worst_head, abs(wrap_angle(end.theta - p1.theta)))
        assert worst_pos <= 1e-6
        assert worst_head <= 1e-6
        arc = fit_clothoid(Pose2D(0, 0, 0), Pose2D(1, 1, math.pi / 2))
        assert abs(arc.kappa0 - 1.0) <= 1e-6
        assert abs(arc.length - math.pi / 2) <= 1e-6
        ok(
            "clothoid-g1",
            f"1000 pairs: max endpoint error {worst_pos:.2e} m / {worst_head:.2e} rad; "
            f"quarter circle kappa={arc.kappa0:.8f}, L={arc.length:.8f}",
        )


class TestCriterion04IndexSearch:
    def test_binary_equals_linear_and_alpha_shift(self):
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(10):
            s_col = np.sort(rng.uniform(0, 40, int(rng.integers(5, 500))))
            table = RefTable(
                s=s_col, x=np.zeros_like(s_col), y=np.zeros_like(s_col),
                theta=np.zeros_like(s_col), spacing_ds=0.1,
            )
            for q in rng.uniform(-2, 42, 1000):
                diffs = np.abs(s_col - q)
                expected = int(np.flatnonzero(diffs == diffs.min())[0])
                got = nearest_index(table, float(q))
                assert got == expected
                base = got
                for alpha in range(5):
                    _, idx = select_waypoint(table, float(q), alpha)
                    assert idx == min(base + alpha, len(table) - 1)
                checked += 1
        assert checked == 10_000
        ok("index-search", f"{checked} queries exact, alpha shift verified for 0..4")


class TestCriterion05Kinematics:
    def test_round_trip_arc_and_slip(self):
        rng = np.random.default_rng(4)
        p = IKParams()
        worst = 0.0
        for _ in range(1000):
            t = BodyTwist(rng.uniform(-2, 2), rng.uniform(-3, 3))
            back = ik_wheel_to_body(body_to_wheel(t, p), p)
            worst = max(worst, abs(back.v - t.v), abs(back.omega - t.omega))
        assert worst <= 1e-12
        state = RobotState(Pose2D(0, 0, 0), BodyTwist(0, 0), WheelSpeeds(0, 0))
        s = step_dynamics(state, BodyTwist(1.0, 1.0), math.pi / 2, SlipModel(), p)
        circle_err = math.hypot(s.pose.x - 1.0, s.pose.y - 1.0)
        assert circle_err <= 1e-9
        assert abs(wrap_angle(s.pose.theta - math.pi / 2)) <= 1e-9
        full = step_dynamics(state, BodyTwist(0.8, 0.0), 2.0, SlipModel(), p)
        half = step_dynamics(state, BodyTwist(0.8, 0.0), 2.0, SlipModel(traversal_gain=0.5), p)
        assert half.pose.x == 0.5 * full.pose.x
        ok(
            "kinematics",
            f"IK round trip max {worst:.2e}; circle endpoint error {circle_err:.2e}; "
            f"traversal gain halves arc exactly",
        )


class TestCriterion06ControllersGroundTruth:
    def test_pure_pursuit_circle(self, circle_track, camera):
        cfg = EpisodeConfig(
            termination=TerminationConfig(e_x_limit=5.0, e_theta_limit=1.9, max_steps=700),
            table_index=0,
        )
        rec = run_episode(
            circle_track,
            camera,
            PurePursuitTableActor(PurePursuitConfig(lookahead_l=1.5, v_fixed=0.75)),
            cfg,
            seed=0,
        )
        steady = rec.column("e_x")[200:]
        assert steady.max() < 0.25
        ok("pure-pursuit-circle", f"steady-state e_x max {steady.max():.4f} m < 0.25")

    def test_nmpc_straight(self, straight_corridor):
        from types import SimpleNamespace

        actor = NMPCTableActor(MPCConfig(), v_ref=0.75)
        state = RobotState(Pose2D(0.0, 0.25, 0.0), BodyTwist(0, 0), WheelSpeeds(0, 0))
        table = straight_corridor.ref_tables[0]
        lateral = []
        for t in range(100):  # 5 simulated seconds at 20 Hz
            view = SimpleNamespace(
                state=state, table=table, path=straight_corridor.paths[0],
                dt=0.05, s=0.0, t=t, image=None, features=None,
            )
            v, omega = actor.act(view)
            assert 0.0 <= v <= 1.0
            assert abs(omega) <= 0.5
            state = step_dynamics(state, BodyTwist(v, omega), 0.05, SlipModel(), IKParams())
            lateral.append(abs(state.pose.y))
        assert lateral[-1] < 0.02
        ok("nmpc-straight", f"|e_x| {lateral[-1]:.4f} m < 0.02 within 5 s, all actions boxed")

    def test_pd_corridor_lap(self, circle_track, camera):
        lap = 2 * math.pi * 5.0
        cfg = EpisodeConfig(
            termination=TerminationConfig(e_x_limit=10.0, e_theta_limit=1.9, max_steps=1000),
            table_index=0,
        )
        rec = run_episode(
            circle_track, camera, PDCenterActor(PDGains(kp=1.2, kd=0.1, v_ref=0.75)), cfg, seed=0
        )
        radial = np.abs(np.hypot(rec.column("x"), rec.column("y")) - 5.0)
        assert rec.final_s >= lap
        assert radial.max() < 0.75
        ok(
            "pd-corridor-lap",
            f"lap of {lap:.1f} m completed (S={rec.final_s:.1f}); "
            f"max |lateral| {radial.max():.3f} m < 0.75",
        )


class TestCriterion07WpgVsIcg:
    def test_contrast(self, trained_policies, eval_track):
        policies, seeds = trained_policies
        episodes = 5 if FAST else 30
        wins = 0
        details = []
        for seed in seeds:
            wpg = eval_policy(policies[("wpg", seed)], eval_track, POLICY_CAMERA, episodes=episodes)
            icg = eval_policy(policies[("icg", seed)], eval_track, POLICY_CAMERA, episodes=episodes)
            hold = wpg[0] <= icg[0] and wpg[1] >= icg[1]
            wins += hold
            details.append(
                f"seed {seed}: wpg e_x={wpg[0]:.3f} S={wpg[1]:.2f} | "
                f"icg e_x={icg[0]:.3f} S={icg[1]:.2f} -> {'ok' if hold else 'no'}"
            )
        need = 1 if FAST else 2
        assert wins >= need, "; ".join(details)
        ok("wpg-vs-icg", f"{wins}/{len(seeds)} seeds hold; " + "; ".join(details))


class TestCriterion08FrequencyDropout:
    def test_trend_and_one_hz_failure(self, trained_policies, eval_track):
        policies, seeds = trained_policies
        policy = policies[("wpg", seeds[0])]
        episodes = 5 if FAST else 20
        results = {
            hz: eval_policy(policy, eval_track, POLICY_CAMERA, episodes=episodes, source_hz=hz)
            for hz in (20.0, 4.0, 2.0, 1.0)
        }
        e20, e4, e2 = results[20.0][0], results[4.0][0], results[2.0][0]
        assert e20 <= 1.1 * e4
        assert e4 <= 1.1 * e2
        early, total = results[1.0][2], results[1.0][3]
        assert early >= 0.5 * total
        ok(
            "frequency-dropout",
            f"e_x 20/4/2 Hz = {e20:.3f}/{e4:.3f}/{e2:.3f} (10% slack); "
            f"1 Hz early termination {early}/{total}",
        )


class TestCriterion09SweepPlumbing:
    def test_rows_and_normalized_error(self, figure_eight, camera, tmp_path):
        cfg = EpisodeConfig(termination=TerminationConfig(max_steps=50))
        header, rows = sweep(
            "waypoint_spacing", figure_eight, camera, cfg, episodes=1, seed=0
        )
        assert len(rows) == 25
        ds_values = sorted({r["ds"] for r in rows})
        v_values = sorted({r["v_d"] for r in rows})
        assert ds_values == [0.1, 0.25, 0.5, 0.75, 1.0]
        assert v_values == [0.15, 0.3, 0.45, 0.6, 0.75]
        n = normalized_error(0.1630, 0.0950, 21.213)
        assert abs(n - 0.012162) <= 1e-6
        ok("sweep-plumbing", f"25 rows (5 ds x 5 v_d); N check {n:.6f} within 1e-6 of 0.012162")


class TestCriterion10CurvatureBinning:
    def test_edges_conservation_population(self, figure_eight, camera):
        cfg = EpisodeConfig()
        records, _ = run_eval(
            OracleFollower, figure_eight, camera, cfg, episodes=8, seed=11
        )
        bins, overflow = bin_by_curvature(records, figure_eight)
        edges = [b.kappa_lo for b in bins] + [bins[-1].kappa_hi]
        assert edges == [0.001, 0.2, 0.4, 0.6, 0.8, 0.99]
        total = sum(len(r) for r in records)
        assert sum(b.samples for b in bins) + overflow == total
        minimum = min(b.samples for b in bins)
        assert minimum >= 100
        ok(
            "curvature-binning",
            f"edges Table-IV; {total} samples conserved (overflow {overflow}); "
            f"thinnest bin has {minimum} samples >= 100",
        )


class TestCriterion11MarkerGeneralization:
    def test_zero_shot_lanes_and_kl_pipeline(self, trained_policies, eval_track, camera,
                                             figure_eight):
        policies, seeds = trained_policies
        policy = policies[("wpg", seeds[0])]
        episodes = 5 if FAST else 20
        cones = eval_policy(policy, eval_track, POLICY_CAMERA, episodes=episodes)
        lanes = eval_policy(
            policy, eval_track, POLICY_CAMERA, episodes=episodes, marker=MarkerKind.solid_lane()
        )
        ratio = lanes[1] / cones[1]
        assert ratio >= 0.8
        samples = 100 if FAST else 120
        rows = feature_kl(
            figure_eight,
            camera,
            MarkerKind.cone(),
            [MarkerKind.cylinder(), MarkerKind.solid_lane()],
            samples=samples,
            seed=5,
        )
        sizes = sorted({r["d"] for r in rows})
        assert sizes == [16, 32, 64, 128, 256, 512, 1024, 2048]
        self_kl = [r["kl"] for r in rows if r["kind"] == "cone"]
        assert all(abs(v) <= 1e-12 for v in self_kl)
        assert all(r["kl"] >= 0.0 for r in rows)
        ok(
            "marker-generalization",
            f"solid-lane arc ratio {ratio:.2f} >= 0.8 "
            f"(S {lanes[1]:.2f} vs {cones[1]:.2f}); kl.csv covers d=16..2048, self-KL = 0",
        )


class TestCriterion12Determinism:
    def test_cli_rerun_byte_identical(self, tmp_path):
        def cli(*argv):
            return subprocess.run(
                [sys.executable, "-m", "lanebench.cli", *argv],
                capture_output=True, text=True,
            )

        bundle = tmp_path / "bundle"
        args = ["--set", "track.n=100", "--set", "track.j=2", "--set", "track.w=0",
                "--set", "track.ds=0.25"]
        assert cli("gen-track", *args, "--out", str(bundle)).returncode == 0
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            res = cli(
                "run", "--track", str(bundle),
                "--set", "run.episodes=2",
                "--set", "termination.max_steps=50",
                "--out", str(out),
            )
            assert res.returncode == 0, res.stderr
            outs.append(out)
        for name in ["episode_000.csv", "episode_001.csv", "metrics.csv"]:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        bundle2 = tmp_path / "bundle2"
        assert cli("gen-track", *args, "--out", str(bundle2)).returncode == 0
        assert (bundle / "reftable_1.csv").read_bytes() == (bundle2 / "reftable_1.csv").read_bytes()
        ok("determinism", "gen-track and run reruns byte-identical")
