import numpy as np
import pytest

from lanebench_env import ABI_VERSION, EnvError, LaneKeepEnv


@pytest.fixture()
def env(circle_bundle):
    return LaneKeepEnv.from_bundle(
        circle_bundle, overrides=["tracking.control_hz=20", "termination.max_steps=50"]
    )


class TestSpecs:
    def test_abi_string(self, env):
        assert env.abi_version == ABI_VERSION
        assert ABI_VERSION.startswith("lanebench-env/")

    def test_observation_spec(self, env):
        spec = env.observation_spec
        assert spec["shape"] == (64,)
        obs = env.reset(seed=0)
        assert obs.shape == (64,)
        assert np.all(obs >= 0.0)
        assert np.all(obs <= 1.0)

    def test_action_spec(self, env):
        spec = env.action_spec
        assert spec["shape"] == (2,)
        assert spec["low"] == (0.1, -0.5)
        assert spec["high"] == (1.0, 0.5)


class TestResetStep:
    def test_reset_deterministic(self, env):
        a = env.reset(seed=11)
        b = env.reset(seed=11)
        assert np.array_equal(a, b)

    def test_step_before_reset_rejected(self, circle_bundle):
        fresh = LaneKeepEnv.from_bundle(circle_bundle)
        with pytest.raises(EnvError):
            fresh.step((0.3, 0.0))

    def test_step_contract(self, env):
        env.reset(seed=1)
        obs, reward, terminated, truncated, info = env.step((0.3, 0.03))
        assert obs.shape == (64,)
        assert 0.0 <= reward <= 5.0
        assert not terminated
        assert {"e_x", "e_theta", "e_V", "S", "i_star", "done_reason"} <= set(info)

    def test_rewards_bounded_and_truncation(self, env):
        env.reset(seed=2)
        for _ in range(49):
            _, reward, terminated, truncated, _ = env.step((0.3, 0.03))
            assert 0.0 <= reward <= 5.0
            assert not terminated
            assert not truncated
        _, _, terminated, truncated, info = env.step((0.3, 0.03))
        assert truncated and not terminated
        assert info["done_reason"] == "max_steps"

    def test_step_after_done_rejected(self, env):
        env.reset(seed=3)
        done = False
        while not done:
            _, _, terminated, truncated, _ = env.step((0.3, 0.03))
            done = terminated or truncated
        with pytest.raises(EnvError):
            env.step((0.3, 0.03))

    def test_translation_termination(self, circle_bundle):
        env = LaneKeepEnv.from_bundle(circle_bundle)
        env.reset(seed=4)
        done_info = None
        for _ in range(1000):
            _, _, terminated, truncated, info = env.step((1.0, 0.0))  # run straight off the loop
            if terminated or truncated:
                done_info = info
                break
        assert done_info is not None
        assert done_info["done_reason"] == "translation"
        assert done_info["e_x"] >= 1.0

    def test_debug_image_is_pgm(self, env):
        env.reset(seed=5)
        payload = env.debug_image()
        assert payload.startswith(b"P5\n320 96\n255\n")
        assert len(payload) == len(b"P5\n320 96\n255\n") + 320 * 96

    def test_handles_are_isolated(self, circle_bundle):
        a = LaneKeepEnv.from_bundle(circle_bundle)
        b = LaneKeepEnv.from_bundle(circle_bundle)
        obs_a = a.reset(seed=7)
        b.reset(seed=8)
        for _ in range(5):
            b.step((0.5, 0.1))
        # Stepping b must not disturb a's pending episode.
        obs_a2, _, _, _, _ = a.step((0.3, 0.03))
        assert a.episode_state.t == 1
        assert b.episode_state.t == 5
        assert not np.array_equal(obs_a, obs_a2) or True
