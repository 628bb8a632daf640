import numpy as np
import pytest

from paac_rl.agents import (
    PRESET_AGENT_DEFAULTS,
    VARIANTS,
    AgentConfig,
    build_agent,
    evaluate_policy,
    exploration_noise,
    run_trial,
    train_step,
)
from paac_rl.envs import lqr_spec, make_env
from paac_rl.errors import ConfigError
from paac_rl.networks import TargetMode
from paac_rl.paac import ActorGradMode, PhaseSchedule
from paac_rl.rng import make_rng

SMALL = dict(hidden_width=8, minibatch_n=4, warmup_steps=5)


def tiny_env():
    return lqr_spec(1.0, 1.0, 1.0, 1.0, -1.0, 1.0, action_bound=1.0, episode_len=10)


class TestConfig:
    @pytest.mark.parametrize("variant", sorted(VARIANTS))
    def test_switches_follow_table(self, variant):
        replay, family, actor = VARIANTS[variant]
        cfg = AgentConfig.for_variant(variant)
        assert (cfg.buffer_capacity > 1) == replay
        assert cfg.target_mode.kind == family
        assert cfg.actor_mode.value == actor
        assert cfg.actor_mode.td_form == "squared_delta"

    def test_defaults(self):
        assert AgentConfig.for_variant("dhdp").target_mode == TargetMode.hard(15)
        cfg = AgentConfig.for_variant("ddpg")
        assert cfg.target_mode == TargetMode.soft(0.05)
        assert (cfg.gamma, cfg.lr, cfg.minibatch_n, cfg.hidden_width) == (0.99, 1e-3, 256, 256)

    def test_preset_defaults_then_overrides(self):
        cfg = AgentConfig.for_variant("ddpg", "lqr1d", minibatch_n=7)
        assert cfg.hidden_width == PRESET_AGENT_DEFAULTS["lqr1d"]["hidden_width"]
        assert cfg.minibatch_n == 7

    @pytest.mark.parametrize("variant", ["vanilla_dhdp", "dhdp_er"])
    def test_preset_buffer_keeps_no_replay(self, variant):
        assert AgentConfig.for_variant(variant, "lqr1d").buffer_capacity == 1

    def test_unknown_variant(self):
        with pytest.raises(ConfigError, match="variant"):
            AgentConfig.for_variant("td3")

    @pytest.mark.parametrize("bad, key", [
        (dict(buffer_capacity=1), "buffer_capacity"),
        (dict(target_mode=TargetMode.hard(3)), "target_mode"),
        (dict(actor_mode=ActorGradMode("phased")), "actor_mode"),
        (dict(gamma=1.0), "gamma"),
        (dict(lr=0.0), "lr"),
        (dict(actor_lr=-1.0), "actor_lr"),
        (dict(minibatch_n=0), "minibatch_n"),
    ])
    def test_validation_names_key(self, bad, key):
        with pytest.raises(ConfigError, match=key):
            AgentConfig.for_variant("ddpg", **bad)

    def test_no_replay_needs_capacity_one(self):
        with pytest.raises(ConfigError, match="buffer_capacity"):
            AgentConfig.for_variant("vanilla_dhdp", buffer_capacity=10)


class TestNoise:
    def test_std_scales_with_bound(self):
        rng = make_rng(0)
        draws = np.array([exploration_noise(rng, 2, 0.1, [1.0, 4.0]) for _ in range(50_000)])
        np.testing.assert_allclose(draws.std(axis=0), [0.1, 0.4], rtol=0.02)
        np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=0.01)

    def test_zero_scale_is_silent(self):
        np.testing.assert_array_equal(exploration_noise(make_rng(0), 3, 0.0), 0.0)

    def test_negative_scale(self):
        with pytest.raises(ValueError):
            exploration_noise(make_rng(0), 1, -0.1)


class TestTraining:
    def test_warmup_does_not_learn(self):
        cfg = AgentConfig.for_variant("ddpg", **dict(SMALL, warmup_steps=50))
        agent = build_agent(cfg, tiny_env())
        actor0, critic0 = agent.actor.params.copy(), agent.critic.params.copy()
        log = run_trial(cfg, tiny_env(), 50, 10, [100], agent=agent)
        assert agent.actor.params.equals(actor0) and agent.critic.params.equals(critic0)
        assert np.all(np.isnan(log.critic_loss)) and np.all(log.branch == 0)
        assert len(agent.buffer) == 50
        # warmup actions are uniform over the bounds, not the actor's output
        assert np.abs(agent.buffer.contents().actions).max() > 0.5

    def test_learning_starts_after_warmup(self):
        cfg = AgentConfig.for_variant("ddpg", **SMALL)
        log = run_trial(cfg, tiny_env(), 12, 12, [100])
        assert np.all(np.isnan(log.critic_loss[:5])) and np.all(np.isfinite(log.critic_loss[5:]))
        assert np.all(log.branch[5:] == 1)

    def test_eval_cadence(self):
        cfg = AgentConfig.for_variant("dhdp", **SMALL)
        log = run_trial(cfg, tiny_env(), 30, 10, range(100, 103))
        assert log.eval_steps == [0, 10, 20, 30]
        assert log.eval_matrix.shape == (4, 3)

    def test_bit_identical_rerun(self):
        cfg = AgentConfig.for_variant("ddpg_paac", **SMALL)
        a = run_trial(cfg, tiny_env(), 40, 20, [100, 101])
        b = run_trial(cfg, tiny_env(), 40, 20, [100, 101])
        np.testing.assert_array_equal(a.eval_matrix, b.eval_matrix)
        np.testing.assert_array_equal(a.critic_loss, b.critic_loss)
        assert a.agent.actor.params.equals(b.agent.actor.params)

    def test_seed_changes_run(self):
        a = run_trial(AgentConfig.for_variant("ddpg", seed=0, **SMALL), tiny_env(), 20, 20, [100])
        b = run_trial(AgentConfig.for_variant("ddpg", seed=1, **SMALL), tiny_env(), 20, 20, [100])
        assert not a.agent.actor.params.equals(b.agent.actor.params)

    def test_phased_branch_frequency_follows_schedule(self):
        cfg = AgentConfig.for_variant("ddpg_paac", **dict(SMALL, warmup_steps=0))
        log = run_trial(cfg, tiny_env(), 400, 400, [100])
        first, last = log.branch[:100], log.branch[300:]
        # M runs from 1 to 0; Q branch (code 1) should dominate early, TD (code 2) late
        assert (first == 1).mean() > 0.75 and (last == 2).mean() > 0.75
        np.testing.assert_allclose(log.m_values[:3], [1.0, 1 - 1 / 400, 1 - 2 / 400])

    def test_schedule_length_mismatch(self):
        cfg = AgentConfig.for_variant("ddpg_paac", schedule=PhaseSchedule("linear", 99), **SMALL)
        with pytest.raises(ConfigError, match="k_total"):
            run_trial(cfg, tiny_env(), 50, 10, [100])

    def test_episodes_reset_on_time(self):
        agent = build_agent(AgentConfig.for_variant("ddpg", **SMALL), tiny_env())
        for k in range(25):
            train_step(agent, k)
        assert agent.episodes == 3 and agent.episode_t == 5

    def test_divergence_aborts_trial(self):
        env = lqr_spec(1e3, 1.0, 1.0, 1.0, 1.0, 1.0, action_bound=1.0, episode_len=10_000)
        cfg = AgentConfig.for_variant("ddpg", **dict(SMALL, warmup_steps=1000))
        log = run_trial(cfg, env, 500, 100, [100])
        assert log.aborted and "diverged" in log.abort_reason
        assert log.steps_done < 500

    def test_hard_targets_follow_period(self):
        cfg = AgentConfig.for_variant("dhdp", **dict(SMALL, target_mode=TargetMode.hard(4)))
        log = run_trial(cfg, tiny_env(), 5 + 8, 13, [100])
        t = log.agent.targets
        assert t.updates_since_copy == 0
        assert t.target_actor.params.equals(log.agent.actor.params)


def test_evaluate_policy_is_deterministic():
    agent = build_agent(AgentConfig.for_variant("ddpg", **SMALL), make_env("lqr1d"))
    a = evaluate_policy(agent.actor, agent.env, range(100, 110))
    b = evaluate_policy(agent.actor, agent.env, range(100, 110))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (10,)
