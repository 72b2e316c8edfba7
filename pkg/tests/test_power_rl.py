import math

import numpy as np
import pytest

from megsim import channel as ch
from megsim import metrics, power_rl
from megsim.power_rl import (PpoAgent, PpoConfig, SeedTransmissionEnv,
                             apply_power, clipped_surrogate, evaluate,
                             gaussian_entropy, ppo_update, terminal_reward,
                             train_agent, uniform_policy)


@pytest.fixture(scope="module")
def env(tiny_bundle):
    prompts = ["large blob left", "tiny stripes top", "huge rings center",
               "small cross bottom"]
    return SeedTransmissionEnv(tiny_bundle, prompts, 0.5, snr_db=0.0,
                               p_max=1.0, block_length=16, seed=5)


class TestApplyPower:
    def test_scaled_action(self):
        assert apply_power(0.5, 1.0, 1.0) == 0.5

    def test_clamps_to_remaining(self):
        assert apply_power(0.9, 0.3, 1.0) == 0.3

    def test_zero_action_zero_power(self):
        assert apply_power(0.0, 0.7, 1.0) == 0.0

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            apply_power(1.5, 1.0, 1.0)
        with pytest.raises(ValueError):
            apply_power(0.5, 2.0, 1.0)


class TestTerminalReward:
    def test_perfect_batch_scores_zero(self, rng):
        imgs = [rng.random((1, 8, 8)).astype(np.float32) for _ in range(4)]
        ext = metrics.FeatureExtractor(64, feature_dim=8)
        assert abs(terminal_reward(imgs, imgs, ext)) < 1e-9

    def test_imperfect_batch_negative(self, rng):
        truth = [rng.random((1, 8, 8)).astype(np.float32) for _ in range(4)]
        noisy = [np.clip(t + 0.3 * rng.standard_normal(t.shape), 0, 1)
                 .astype(np.float32) for t in truth]
        ext = metrics.FeatureExtractor(64, feature_dim=8)
        assert terminal_reward(noisy, truth, ext) < 0

    def test_equals_external_fid(self, rng):
        truth = [rng.random((1, 8, 8)).astype(np.float32) for _ in range(4)]
        noisy = [np.clip(t + 0.1, 0, 1) for t in truth]
        ext = metrics.FeatureExtractor(64, feature_dim=8)
        want = -metrics.fid(np.stack(noisy), np.stack(truth), ext)
        assert terminal_reward(noisy, truth, ext) == want


class TestEntropyAndSurrogate:
    def test_entropy_nonnegative_above_floor(self):
        floor = -0.5 * (1.0 + math.log(2 * math.pi))
        assert gaussian_entropy(floor + 1e-9) >= 0
        assert gaussian_entropy(floor - 0.1) < 0
        assert gaussian_entropy(0.0) > 0

    def test_identical_policies_mean_advantage(self, rng):
        lp = rng.standard_normal(16)
        adv = rng.standard_normal(16)
        value, ratios, _ = clipped_surrogate(lp, lp, adv, 0.2)
        assert np.allclose(ratios, 1.0)
        assert abs(value - float(np.mean(adv))) < 1e-12

    def test_zero_clip_range_fully_clips(self, rng):
        lp_new = rng.standard_normal(8)
        lp_old = rng.standard_normal(8)
        adv = rng.standard_normal(8)
        value, ratios, _ = clipped_surrogate(lp_new, lp_old, adv, 0.0)
        want = float(np.mean(np.minimum(ratios * adv, adv)))
        assert abs(value - want) < 1e-12

    def test_single_sample_hand_computed(self):
        # ratio = exp(-0.5 - (-1.0)) = e^0.5; advantage 2; clip 0.2
        # clipped term (1.2 * 2) is below the unclipped (e^0.5 * 2)
        value, _, _ = clipped_surrogate([-0.5], [-1.0], [2.0], 0.2)
        assert abs(value - 2.4) < 1e-6
        # negative advantage: min picks the unclipped branch
        value2, _, _ = clipped_surrogate([-0.5], [-1.0], [-2.0], 0.2)
        assert abs(value2 - (-2.0 * math.exp(0.5))) < 1e-6

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PpoConfig(clip_range=0.0)
        with pytest.raises(ValueError):
            PpoConfig(gamma=0.0)


class TestEnvironment:
    def test_budget_never_exceeded(self, env, rng):
        agent = PpoAgent(env.state_dim, hidden=16, rng=1)
        start = len(env.power_audit)
        for _ in range(50):
            env.rollout(agent, rng)
        audit = env.power_audit[start:]
        assert len(audit) == 50
        assert all(total <= p_max for total, p_max in audit)

    def test_reward_sparsity(self, env, rng):
        agent = PpoAgent(env.state_dim, hidden=16, rng=2)
        ep = env.rollout(agent, rng)
        assert np.all(ep.rewards[:-1] == 0.0)
        assert ep.rewards[-1] == ep.terminal_score < 0
        assert not np.any(ep.dones[:-1]) and ep.dones[-1]

    def test_zero_action_erases_block(self, env):
        state = env.reset()
        _, _, _, info = env.step(0.0)
        assert info["power"] == 0.0
        # drain the episode
        done = False
        while not done:
            _, _, done, _ = env.step(0.5)

    def test_state_layout(self, env):
        state = env.reset()
        assert state.shape == (env.block_length + 2,)
        assert state[-1] == 1.0   # full budget remaining
        done = False
        while not done:
            state, _, done, _ = env.step(0.25)


class TestPpoUpdate:
    def test_ratio_identity_on_first_epoch(self, env, rng):
        agent = PpoAgent(env.state_dim, hidden=16, rng=3)
        eps = [env.rollout(agent, rng) for _ in range(4)]
        diag = ppo_update(agent, eps, PpoConfig(epochs=2, seed=0))
        assert diag["first_epoch_max_ratio_err"] < 1e-6

    def test_losses_finite_and_recorded(self, env, rng):
        agent = PpoAgent(env.state_dim, hidden=16, rng=4)
        eps = [env.rollout(agent, rng) for _ in range(4)]
        diag = ppo_update(agent, eps, PpoConfig(epochs=3, seed=0))
        assert not diag["aborted"]
        assert len(diag["surrogate"]) == 3
        assert all(np.isfinite(v) for v in diag["value_loss"])

    def test_discounted_returns(self):
        r = power_rl.discounted_returns([0.0, 0.0, -2.0], 0.5)
        assert np.allclose(r, [-0.5, -1.0, -2.0])
        r1 = power_rl.discounted_returns([0.0, 0.0, -2.0], 1.0)
        assert np.allclose(r1, [-2.0, -2.0, -2.0])


class TestEvaluation:
    def _traces(self, env, n, seed=0):
        rng = np.random.default_rng(seed)
        return [ch.sample_fading_trace(env.model, env.num_blocks, rng)
                for _ in range(n)]

    def test_uniform_policy_spends_whole_budget(self, env):
        traces = self._traces(env, 3)
        evaluate(uniform_policy(env.num_blocks), env, traces)
        for total, p_max in env.power_audit[-3:]:
            assert abs(total - p_max) < 1e-6

    def test_evaluation_deterministic(self, env):
        traces = self._traces(env, 5)
        agent = PpoAgent(env.state_dim, hidden=16, rng=5)
        a = evaluate(agent, env, traces)
        b = evaluate(agent, env, traces)
        assert np.array_equal(a, b)

    def test_agent_checkpoint_round_trip(self, env, tmp_path, rng):
        agent = PpoAgent(env.state_dim, hidden=16, rng=9)
        path = tmp_path / "agent.bin"
        agent.save(path, extra={"p_max": 1.0})
        loaded, meta = PpoAgent.load(path)
        assert meta["p_max"] == 1.0
        state = env.reset()
        assert loaded.mean_action(state) == agent.mean_action(state)
        for p, q in zip(agent.snapshot(), loaded.snapshot()):
            assert np.array_equal(p, q)

    def test_policy_comparison_reproducible(self, tiny_bundle):
        prompts = ["large blob left", "tiny stripes top", "huge rings center",
                   "small cross bottom"]

        def run():
            env = SeedTransmissionEnv(tiny_bundle, prompts, 0.5, 0.0,
                                      p_max=1.0, seed=5)
            traces = self._traces(env, 10, seed=1)
            cfg = PpoConfig(update_rounds=3, episodes_per_batch=4, seed=2)
            agent, _ = train_agent(env, cfg)
            drl = evaluate(agent, env, traces)
            uni = evaluate(uniform_policy(env.num_blocks), env, traces)
            return float(np.mean(drl)), float(np.mean(uni))

        assert run() == run()


class TestTrainingEffect:
    def test_trained_beats_uniform_on_held_out(self, desk_bundle):
        from megsim.corpus import sample_prompts
        from megsim.util import derive_seed
        prompts = sample_prompts(16, derive_seed(0, 21))
        env = SeedTransmissionEnv(desk_bundle, prompts, 0.5, snr_db=0.0,
                                  p_max=0.5, block_length=16, seed=7)
        rng = np.random.default_rng(123)
        frozen = [ch.sample_fading_trace(env.model, env.num_blocks, rng)
                  for _ in range(60)]
        select = [ch.sample_fading_trace(env.model, env.num_blocks, rng)
                  for _ in range(15)]
        cfg = PpoConfig(update_rounds=80, seed=3)
        agent, history = train_agent(env, cfg, eval_traces=select)
        assert len(history) == 80
        drl = evaluate(agent, env, frozen)
        uni = evaluate(uniform_policy(env.num_blocks), env, frozen)
        assert float(np.mean(drl - uni)) > 0

    def test_saturation_makes_policies_equivalent(self, desk_bundle):
        from megsim.corpus import sample_prompts
        from megsim.util import derive_seed
        prompts = sample_prompts(16, derive_seed(0, 21))
        env = SeedTransmissionEnv(desk_bundle, prompts, 0.5, snr_db=30.0,
                                  p_max=400.0, channel_kind="awgn", seed=7)
        rng = np.random.default_rng(5)
        traces = [ch.sample_fading_trace(env.model, env.num_blocks, rng)
                  for _ in range(30)]
        agent, _ = train_agent(env, PpoConfig(update_rounds=20, seed=3))
        drl = evaluate(agent, env, traces)
        uni = evaluate(uniform_policy(env.num_blocks), env, traces)
        assert abs(float(np.mean(drl - uni))) < 5e-3
