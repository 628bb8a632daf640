"""Algorithm variants and the training loop.

Every variant is the same actor-critic skeleton with three switches: replay
on/off, the target-network family, and how the actor gradient is formed.

=============  ======  =========  ==========
variant        replay  targets    actor
=============  ======  =========  ==========
vanilla_dhdp   off     none       q_only
dhdp_er        off     hard       q_only
dhdp_target    on      none       q_only
dhdp           on      hard       q_only
dhdp_paac      on      hard       phased
ddpg           on      soft       q_only
ddpg_paac      on      soft       phased
=============  ======  =========  ==========

"Replay off" is a capacity-1 buffer, so every minibatch is the latest
transition.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .envs import clip_action, env_reset, env_step, rollout_costs
from .errors import ConfigError, NumericError
from .networks import TargetMode, actor_forward, init_agent_networks, target_tick
from .paac import (
    ActorGradMode,
    Branch,
    PhaseSchedule,
    actor_update,
    branch_form,
    branch_gradient,
    choose_branch,
    critic_update,
    phase_value,
)
from .replay import DEFAULT_CAPACITY, ReplayBuffer, Transition
from .rng import make_rng
from .tensor_core import DEFAULT_HIDDEN, adam_init

log = logging.getLogger(__name__)

VARIANTS = {
    "vanilla_dhdp": (False, "none", "q_only"),
    "dhdp_er": (False, "hard", "q_only"),
    "dhdp_target": (True, "none", "q_only"),
    "dhdp": (True, "hard", "q_only"),
    "dhdp_paac": (True, "hard", "phased"),
    "ddpg": (True, "soft", "q_only"),
    "ddpg_paac": (True, "soft", "phased"),
}

DEFAULT_TARGETS = {"hard": TargetMode.hard(15), "soft": TargetMode.soft(0.05), "none": TargetMode.none()}

# Per-preset overrides of the agent defaults. The LQR tasks use smaller
# networks and batches so that multi-trial runs finish in minutes.
PRESET_AGENT_DEFAULTS = {
    # a slow actor and a short buffer let the critic settle near the quadratic Q*
    "lqr1d": {"hidden_width": 64, "minibatch_n": 64, "warmup_steps": 1000, "actor_lr": 3e-5,
              "buffer_capacity": 2000},
    "lqr2d": {"hidden_width": 64, "minibatch_n": 64, "warmup_steps": 1000},
    "cartpole": {"warmup_steps": 8000},
    "pendulum": {"warmup_steps": 8000},
}


@dataclass(frozen=True)
class AgentConfig:
    variant: str = "ddpg"
    gamma: float = 0.99
    minibatch_n: int = 256
    buffer_capacity: int = DEFAULT_CAPACITY
    target_mode: TargetMode = field(default_factory=lambda: TargetMode.soft(0.05))
    actor_mode: ActorGradMode = field(default_factory=ActorGradMode)
    # k_total = 0 means "fill in from the trial length"
    schedule: PhaseSchedule = field(default_factory=lambda: PhaseSchedule("linear", 0))
    noise_scale: float = 0.1
    warmup_steps: int = 8000
    lr: float = 1e-3
    # None means the actor shares ``lr`` with the critic
    actor_lr: float = None
    seed: int = 0
    hidden_width: int = DEFAULT_HIDDEN
    updates_per_step: int = 1
    zero_critic_output: bool = True
    actor_output_init: float = 3e-3

    @classmethod
    def for_variant(cls, variant, env_name=None, **overrides):
        """Config whose switches follow the variant table, then ``overrides``."""
        if variant not in VARIANTS:
            raise ConfigError(f"variant: unknown {variant!r}; choose from {sorted(VARIANTS)}")
        replay, family, actor = VARIANTS[variant]
        base = dict(
            variant=variant,
            target_mode=DEFAULT_TARGETS[family],
            actor_mode=ActorGradMode(actor, "squared_delta"),
        )
        base.update(PRESET_AGENT_DEFAULTS.get(env_name, {}))
        if not replay:
            base["buffer_capacity"] = 1
        base.update(overrides)
        cfg = cls(**base)
        cfg.validate()
        return cfg

    def validate(self):
        """Raise ``ConfigError`` naming the first violated constraint."""
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: unknown {self.variant!r}")
        replay, family, actor = VARIANTS[self.variant]
        if replay and self.buffer_capacity < 2:
            raise ConfigError(f"buffer_capacity: variant {self.variant} uses replay, capacity must be >= 2")
        if not replay and self.buffer_capacity != 1:
            raise ConfigError(f"buffer_capacity: variant {self.variant} has no replay, capacity must be 1")
        if self.target_mode.kind != family:
            raise ConfigError(f"target_mode: variant {self.variant} requires {family} targets, got {self.target_mode}")
        if self.actor_mode.value != actor:
            raise ConfigError(f"actor_mode: variant {self.variant} requires {actor}, got {self.actor_mode.value}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma: must lie in (0, 1)")
        checks = [
            ("minibatch_n", self.minibatch_n >= 1),
            ("noise_scale", self.noise_scale >= 0),
            ("warmup_steps", self.warmup_steps >= 0),
            ("lr", self.lr > 0),
            ("actor_lr", self.actor_lr is None or self.actor_lr > 0),
            ("hidden_width", self.hidden_width >= 1),
            ("updates_per_step", self.updates_per_step >= 1),
            ("seed", self.seed >= 0),
            ("actor_output_init", self.actor_output_init > 0),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"{key}: out of range ({getattr(self, key)!r})")


@dataclass
class AgentState:
    cfg: AgentConfig
    env: object
    actor: object
    critic: object
    targets: object
    actor_adam: object
    critic_adam: object
    buffer: ReplayBuffer
    noise_rng: np.random.Generator
    sample_rng: np.random.Generator
    omega_rng: np.random.Generator
    episode_rng: np.random.Generator
    state: np.ndarray = None
    episode_t: int = 0
    episodes: int = 0


@dataclass(frozen=True)
class StepRecord:
    """``branch`` is ``None`` during warmup (no learning happened)."""

    k: int
    cost: float
    critic_loss: float
    branch: Branch
    m: float


def build_agent(cfg, env):
    cfg.validate()
    actor, critic, targets = init_agent_networks(
        cfg.seed, env.state_dim, env.action_dim, env.action_bound, cfg.target_mode,
        hidden_width=cfg.hidden_width, zero_critic_output=cfg.zero_critic_output,
        actor_output_init=cfg.actor_output_init,
    )
    return AgentState(
        cfg=cfg,
        env=env,
        actor=actor,
        critic=critic,
        targets=targets,
        actor_adam=adam_init(actor.params, cfg.lr if cfg.actor_lr is None else cfg.actor_lr),
        critic_adam=adam_init(critic.params, cfg.lr),
        buffer=ReplayBuffer(cfg.buffer_capacity),
        noise_rng=make_rng(cfg.seed, 1),
        sample_rng=make_rng(cfg.seed, 2),
        omega_rng=make_rng(cfg.seed, 3),
        episode_rng=make_rng(cfg.seed, 4),
    )


def exploration_noise(rng, dim, scale, action_bound=1.0):
    """I.i.d. Gaussian with std ``scale * action_bound`` per dimension."""
    if scale < 0:
        raise ValueError("noise scale must be >= 0")
    std = scale * np.broadcast_to(np.asarray(action_bound, dtype=np.float64), (dim,))
    return rng.standard_normal(dim) * std


def _maybe_reset(agent):
    if agent.state is None or agent.episode_t >= agent.env.episode_len:
        seed = int(agent.episode_rng.integers(0, 2**31 - 1))
        agent.state = env_reset(agent.env, seed)
        agent.episode_t = 0
        agent.episodes += 1


def train_step(agent, k):
    """One environment step plus (after warmup) one round of learning.

    Mutates ``agent`` and returns ``(transition, StepRecord)``.
    """
    cfg, env = agent.cfg, agent.env
    _maybe_reset(agent)
    x = agent.state
    warm = k < cfg.warmup_steps
    if warm:
        u = agent.noise_rng.uniform(-env.action_bound, env.action_bound)
    else:
        u = actor_forward(agent.actor, x) + exploration_noise(agent.noise_rng, env.action_dim, cfg.noise_scale,
                                                              env.action_bound)
    u = clip_action(env, u)
    x_next, cost = env_step(env, x, u)
    t = Transition(x, u, cost, x_next)
    agent.buffer.push(t)
    agent.state = x_next
    agent.episode_t += 1

    schedule = cfg.schedule
    m = phase_value(schedule, k)
    if warm:
        return t, StepRecord(k, cost, float("nan"), None, m)

    loss, branch = float("nan"), None
    for _ in range(cfg.updates_per_step):
        batch = agent.buffer.sample(cfg.minibatch_n, agent.sample_rng)
        agent.critic, agent.critic_adam, loss = critic_update(
            agent.critic, batch, agent.targets, cfg.gamma, agent.critic_adam)
        omega = float(agent.omega_rng.random())
        branch = choose_branch(cfg.actor_mode, schedule, k, omega)
        grad = branch_gradient(branch_form(cfg.actor_mode, branch), batch, agent.critic, agent.actor,
                               agent.targets, cfg.gamma)
        agent.actor, agent.actor_adam = actor_update(agent.actor, grad, agent.actor_adam)
        agent.targets = target_tick(agent.targets, agent.actor, agent.critic)
    return t, StepRecord(k, cost, loss, branch, m)


def evaluate_policy(actor, env, seeds, episode_len=None):
    """Greedy (noise-free) total cost, one episode per seed."""
    return rollout_costs(env, lambda x: actor_forward(actor, x), seeds, episode_len)


@dataclass
class TrainingLog:
    eval_steps: list = field(default_factory=list)
    eval_costs: list = field(default_factory=list)
    critic_loss: np.ndarray = None
    branch: np.ndarray = None
    m_values: np.ndarray = None
    stage_cost: np.ndarray = None
    steps_done: int = 0
    aborted: bool = False
    abort_reason: str = ""
    agent: AgentState = None

    @property
    def eval_matrix(self):
        """``(n_evals, n_seeds)`` array of evaluation total costs."""
        return np.array(self.eval_costs)


BRANCH_CODES = {None: 0, Branch.Q_VALUE: 1, Branch.TD_ERROR: 2}


def run_trial(cfg, env, total_steps, eval_period, eval_seeds, agent=None):
    """Train for ``total_steps`` with an evaluation at step 0 and every ``eval_period`` steps.

    Numeric failures end the trial early; the partial log is returned with
    ``aborted`` set.
    """
    if eval_period < 1:
        raise ConfigError("eval_period: must be >= 1")
    if cfg.schedule.k_total == 0:
        cfg = replace(cfg, schedule=replace(cfg.schedule, k_total=total_steps))
    elif cfg.schedule.k_total != total_steps:
        raise ConfigError(f"schedule: k_total {cfg.schedule.k_total} differs from total_steps {total_steps}")
    agent = agent or build_agent(cfg, env)
    agent.cfg = cfg
    eval_seeds = list(eval_seeds)
    out = TrainingLog(
        critic_loss=np.full(total_steps, np.nan),
        branch=np.zeros(total_steps, dtype=np.int8),
        m_values=np.zeros(total_steps),
        stage_cost=np.zeros(total_steps),
        agent=agent,
    )

    def evaluate(step):
        costs = evaluate_policy(agent.actor, env, eval_seeds)
        out.eval_steps.append(step)
        out.eval_costs.append(costs)

    try:
        evaluate(0)
        for k in range(total_steps):
            _, rec = train_step(agent, k)
            out.critic_loss[k] = rec.critic_loss
            out.branch[k] = BRANCH_CODES[rec.branch]
            out.m_values[k] = rec.m
            out.stage_cost[k] = rec.cost
            out.steps_done = k + 1
            if (k + 1) % eval_period == 0:
                evaluate(k + 1)
    except NumericError as exc:
        out.aborted = True
        out.abort_reason = f"step {out.steps_done}: {exc}"
        log.warning("trial seed=%d variant=%s aborted: %s", cfg.seed, cfg.variant, out.abort_reason)
    return out
