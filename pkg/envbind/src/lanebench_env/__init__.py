"""Step/reset environment bindings around the lanebench episode engine.

One handle owns one episode; observation and reward streams are bit-identical
to the native engine because the binding drives the same EpisodeEngine the
command-line runner uses.
"""
from __future__ import annotations

import io

import numpy as np

from lanebench.config import RunConfig
from lanebench.robot import OMEGA_MAX, OMEGA_MIN, V_MAX, V_MIN
from lanebench.sensor import write_pgm
from lanebench.tracking import DoneReason, EpisodeConfig, EpisodeEngine
from lanebench.trackio import load_track

ABI_VERSION = "lanebench-env/1"

__all__ = ["ABI_VERSION", "EnvError", "LaneKeepEnv"]


class EnvError(RuntimeError):
    """Invalid use of an environment handle."""


class LaneKeepEnv:
    """Gym-convention environment over one lanebench episode.

    reset(seed) -> observation; step(action) -> (observation, reward,
    terminated, truncated, info). Observations are flat float arrays of the
    configured feature dimension; actions are two floats in the configured
    action space's box.
    """

    def __init__(self, track, camera, cfg: EpisodeConfig):
        self._engine = EpisodeEngine(track, camera, cfg)
        self._cfg = cfg
        self._active = False

    @classmethod
    def from_bundle(cls, track_dir, config_path=None, overrides=None) -> "LaneKeepEnv":
        """Build from a track bundle directory plus an optional config file."""
        cfg = RunConfig.load(config_path) if config_path else RunConfig()
        cfg.apply_overrides(overrides or [])
        track = load_track(track_dir)
        return cls(track, cfg.camera(), cfg.episode_config())

    @property
    def abi_version(self) -> str:
        return ABI_VERSION

    @property
    def observation_spec(self) -> dict:
        return {
            "shape": (self._cfg.feature_dim,),
            "dtype": "float64",
            "low": 0.0,
            "high": 1.0,
        }

    @property
    def action_spec(self) -> dict:
        if self._cfg.action_space == "body_twist":
            low, high = (V_MIN, OMEGA_MIN), (V_MAX, OMEGA_MAX)
        else:
            # Wheel-speed commands are projected so their body-twist image
            # stays inside the body box; the nominal per-wheel range below is
            # the image of that box under the inverse drive map.
            ik = self._cfg.ik
            reach = (V_MAX + 0.5 * OMEGA_MAX * ik.b_hat) / ik.r_hat
            low, high = (-reach, -reach), (reach, reach)
        return {"shape": (2,), "dtype": "float64", "low": low, "high": high}

    def reset(self, seed: int) -> np.ndarray:
        obs = self._engine.reset(seed)
        self._active = True
        return obs.values.copy()

    def step(self, action):
        if not self._active:
            raise EnvError("reset() must be called before step()")
        if self._engine.done:
            raise EnvError("episode is done; call reset() to start a new one")
        action = np.asarray(action, dtype=float).reshape(-1)
        if action.shape != (2,):
            raise EnvError(f"action must be two floats, got shape {action.shape}")
        result = self._engine.step((float(action[0]), float(action[1])))
        terminated = self._engine.done_reason in (DoneReason.TRANSLATION, DoneReason.ORIENTATION)
        truncated = self._engine.done_reason is DoneReason.MAX_STEPS
        return result.obs.values.copy(), result.reward, terminated, truncated, dict(result.info)

    def debug_image(self) -> bytes:
        """Current observation frame as binary PGM bytes."""
        if not self._active:
            raise EnvError("no active episode")
        buffer = io.BytesIO()
        write_pgm(self._engine.image, buffer)
        return buffer.getvalue()

    @property
    def episode_state(self):
        return self._engine.episode_state

    def close(self) -> None:
        self._active = False
