"""Flat dotted-key run configuration with schema validation and TOML round trip."""
from __future__ import annotations

import json

from .controllers import MPCConfig, PDGains, PurePursuitConfig
from .policy import CEMConfig
from .robot import IKParams, SlipModel
from .sensor import CameraModel, MarkerKind
from .track import TrackParams
from .tracking import EpisodeConfig, RewardWeights, TerminationConfig
from .trackio import read_flat_toml, write_flat_toml


class ConfigError(ValueError):
    pass


# key -> (type, default). Types: int, float, bool, str, list (of numbers/pairs).
SCHEMA = {
    "track.seed": (int, 0),
    "track.scale": (float, 10.0),
    "track.n": (int, 200),
    "track.j": (int, 10),
    "track.w": (int, 40),
    "track.r": (float, 0.15),
    "track.ds": (float, 0.1),
    "track.min_separation": (float, 1.3),
    "track.lane_width": (float, 1.3),
    "track.cone_mode": (str, "exact"),
    "track.centers_csv": (str, ""),
    "track.closed": (bool, True),
    "robot.r_hat": (float, 0.165),
    "robot.b_hat": (float, 0.55),
    "robot.dt": (float, 0.05),
    "robot.traversal_gain": (float, 1.0),
    "robot.omega_gain": (float, 1.0),
    "camera.mount_height": (float, 0.5),
    "camera.pitch": (float, 0.35),
    "camera.focal": (float, 250.0),
    "camera.u0": (float, 159.5),
    "camera.v0": (float, 47.5),
    "camera.max_range": (float, 25.0),
    "marker.kind": (str, "cone"),
    "marker.cone_radius": (float, 0.10),
    "marker.cylinder_side": (float, 0.18),
    "marker.lane_stripe_width": (float, 0.12),
    "marker.blur_sigma": (float, 0.0),
    "marker.missing_spans": (list, []),
    "reward.v_desired": (float, 0.75),
    "reward.v_max": (float, 1.0),
    "reward.omega_max": (float, 0.5),
    "reward.e_x_cap": (float, 1.0),
    "reward.v_penalty_centered": (bool, False),
    "reward.v_penalty_center": (float, 0.55),
    "reward.v_penalty_halfwidth": (float, 0.45),
    "termination.e_x_limit": (float, 1.0),
    "termination.e_theta_limit": (float, 0.1),
    "termination.max_steps": (int, 1000),
    "tracking.alpha": (int, 0),
    "tracking.feature_dim": (int, 64),
    "tracking.action_space": (str, "body_twist"),
    "tracking.reward_mode": (str, "wpg"),
    "tracking.source_hz": (float, 20.0),
    "tracking.control_hz": (float, 20.0),
    "controller.kind": (str, "oracle"),
    "controller.policy_file": (str, ""),
    "pd.kp": (float, 1.2),
    "pd.kd": (float, 0.1),
    "pd.v_ref": (float, 0.75),
    "pp.lookahead": (float, 1.5),
    "pp.v": (float, 0.75),
    "pp.source": (str, "vision"),
    "mpc.horizon": (int, 10),
    "mpc.dt": (float, 0.1),
    "mpc.q_pos": (float, 10.0),
    "mpc.q_theta": (float, 1.0),
    "mpc.r_v": (float, 0.1),
    "mpc.r_omega": (float, 0.1),
    "mpc.max_iters": (int, 2000),
    "mpc.kkt_tol": (float, 1e-6),
    "mpc.source": (str, "vision"),
    "oracle.lookahead": (float, 0.25),
    "oracle.margin": (float, 0.85),
    "fixed.v": (float, 0.3),
    "fixed.omega": (float, 0.0),
    "cem.population": (int, 64),
    "cem.elite_fraction": (float, 0.25),
    "cem.iterations": (int, 40),
    "cem.init_std": (float, 0.5),
    "cem.episodes_per_candidate": (int, 2),
    "cem.seed": (int, 0),
    "cem.v_bias_init": (float, 0.0),
    "cem.steer_prior_gain": (float, 0.0),
    "cem.train_max_steps": (int, 1000),
    "run.episodes": (int, 100),
    "run.seed": (int, 0),
    "run.jobs": (int, 1),
    "run.record_features": (bool, False),
    "eval.episodes": (int, 100),
    "eval.seed": (int, 0),
    "eval.ds": (float, 0.01),
    "eval.bin_edges": (list, [0.001, 0.2, 0.4, 0.6, 0.8, 0.99]),
    "eval.hist_bin_width": (float, 0.05),
    "kl.sizes": (list, [16, 32, 64, 128, 256, 512, 1024, 2048]),
    "kl.samples": (int, 200),
    "kl.seed": (int, 0),
    "kl.reference": (str, "cone"),
}


def _coerce(key: str, value):
    kind, _ = SCHEMA[key]
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        return str(value)
    if kind is list:
        if isinstance(value, str):
            try:
                value = json.loads(value)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{key}: cannot parse list from {value!r}") from err
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    raise ConfigError(f"{key}: unsupported schema type {kind}")


class RunConfig:
    """Validated flat key/value configuration with schema defaults."""

    def __init__(self, values: dict | None = None):
        self._values = {k: default for k, (_, default) in SCHEMA.items()}
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key: str, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self._values[key] = _coerce(key, value)

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def as_dict(self) -> dict:
        return dict(self._values)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls(read_flat_toml(path))

    def save(self, path) -> None:
        write_flat_toml(self._values, path)

    def apply_overrides(self, overrides) -> None:
        """Apply repeated --set key=value pairs."""
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, value = item.split("=", 1)
            self.set(key.strip(), value.strip())

    # Builders for the module-level parameter objects.

    def track_params(self) -> TrackParams:
        return TrackParams(
            seed=self["track.seed"],
            scale=self["track.scale"],
            n=self["track.n"],
            j=self["track.j"],
            w=self["track.w"],
            perturb_radius=self["track.r"],
            ds=self["track.ds"],
            min_separation=self["track.min_separation"],
            lane_width=self["track.lane_width"],
            cone_mode=self["track.cone_mode"],
            closed=self["track.closed"],
        )

    def camera(self) -> CameraModel:
        return CameraModel(
            mount_height=self["camera.mount_height"],
            pitch=self["camera.pitch"],
            focal=self["camera.focal"],
            u0=self["camera.u0"],
            v0=self["camera.v0"],
            max_range=self["camera.max_range"],
        )

    def marker(self) -> MarkerKind:
        name = self["marker.kind"]
        sizes = {
            "cone": self["marker.cone_radius"],
            "cylinder": self["marker.cylinder_side"],
            "solid_lane": self["marker.lane_stripe_width"],
        }
        if name not in sizes:
            raise ConfigError(f"marker.kind: unknown marker {name!r}")
        return MarkerKind(name, sizes[name])

    def reward_weights(self) -> RewardWeights:
        return RewardWeights(
            v_desired=self["reward.v_desired"],
            v_max=self["reward.v_max"],
            omega_max=self["reward.omega_max"],
            e_x_cap=self["reward.e_x_cap"],
            v_penalty_center=(
                self["reward.v_penalty_center"] if self["reward.v_penalty_centered"] else None
            ),
            v_penalty_halfwidth=self["reward.v_penalty_halfwidth"],
        )

    def termination(self, max_steps: int | None = None) -> TerminationConfig:
        return TerminationConfig(
            e_x_limit=self["termination.e_x_limit"],
            e_theta_limit=self["termination.e_theta_limit"],
            max_steps=max_steps if max_steps is not None else self["termination.max_steps"],
        )

    def ik_params(self) -> IKParams:
        return IKParams(r_hat=self["robot.r_hat"], b_hat=self["robot.b_hat"])

    def slip(self) -> SlipModel:
        return SlipModel(
            traversal_gain=self["robot.traversal_gain"], omega_gain=self["robot.omega_gain"]
        )

    def episode_config(self, max_steps: int | None = None) -> EpisodeConfig:
        spans = tuple(tuple(float(v) for v in pair) for pair in self["marker.missing_spans"])
        return EpisodeConfig(
            dt=self["robot.dt"],
            alpha=self["tracking.alpha"],
            feature_dim=self["tracking.feature_dim"],
            action_space=self["tracking.action_space"],
            marker=self.marker(),
            blur_sigma=self["marker.blur_sigma"],
            missing_spans=spans,
            source_hz=self["tracking.source_hz"],
            control_hz=self["tracking.control_hz"],
            slip=self.slip(),
            ik=self.ik_params(),
            weights=self.reward_weights(),
            termination=self.termination(max_steps=max_steps),
            reward_mode=self["tracking.reward_mode"],
        )

    def pd_gains(self) -> PDGains:
        return PDGains(kp=self["pd.kp"], kd=self["pd.kd"], v_ref=self["pd.v_ref"])

    def pp_config(self) -> PurePursuitConfig:
        return PurePursuitConfig(lookahead_l=self["pp.lookahead"], v_fixed=self["pp.v"])

    def mpc_config(self) -> MPCConfig:
        return MPCConfig(
            horizon_n=self["mpc.horizon"],
            dt=self["mpc.dt"],
            q_pos=self["mpc.q_pos"],
            q_theta=self["mpc.q_theta"],
            r_v=self["mpc.r_v"],
            r_omega=self["mpc.r_omega"],
            max_iters=self["mpc.max_iters"],
            kkt_tol=self["mpc.kkt_tol"],
        )

    def cem_config(self, jobs: int = 1) -> CEMConfig:
        return CEMConfig(
            population=self["cem.population"],
            elite_fraction=self["cem.elite_fraction"],
            iterations=self["cem.iterations"],
            init_std=self["cem.init_std"],
            episodes_per_candidate=self["cem.episodes_per_candidate"],
            seed=self["cem.seed"],
            jobs=jobs,
            v_bias_init=self["cem.v_bias_init"],
            steer_prior_gain=self["cem.steer_prior_gain"],
        )
