"""Phased actor-critic (PAAC) reinforcement-learning toolkit in numpy."""

from .agents import VARIANTS, AgentConfig, build_agent, evaluate_policy, run_trial, train_step
from .bench import EvalMatrix, ExperimentConfig, MetricsRecord, run_experiment, variance_probe
from .envs import env_reset, env_step, make_env, riccati_solve
from .errors import (
    ConfigError,
    ContractError,
    EmptyBufferError,
    NumericError,
    OracleError,
    PaacError,
    ShapeError,
    UndefinedMetricError,
)
from .paac import ActorGradMode, Branch, PhaseSchedule, actor_gradient, phase_value, select_branch

__version__ = "0.1.0"
