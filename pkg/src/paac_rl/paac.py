"""Phased actor gradient, Bellman targets and the critic regression step.

The actor is trained to *minimize* cost. In the Q branch it descends the
critic's value of its own action, ``Q(x, pi(x))``. In the TD branch it
descends a function of ``delta = Q(x, pi(x)) - y``, where the bootstrapped
target ``y`` comes from the target networks and is a constant w.r.t. the
actor weights. Which branch runs is decided per update by comparing a
uniform draw ``omega`` against the decaying schedule value ``M(k)``.

Two TD forms are available:

``linear_delta``
    gradient of ``mean(delta)``. Since ``y`` is constant this equals the Q
    branch exactly, which is what the gradient-equivalence checks rely on.
``squared_delta``
    gradient of ``mean(delta**2 / 2)`` = ``mean(delta * grad Q)``. Steps
    shrink as the critic's estimate of the current policy approaches its
    bootstrapped target.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NumericError, ShapeError
from .networks import actor_forward, critic_forward, critic_input
from .tensor_core import adam_step, mlp_backward, mlp_forward, mlp_input_grad, per_sample_grads

SCHEDULE_KINDS = ("linear", "quadratic", "hard_switch")
ACTOR_MODES = ("q_only", "td_only", "phased")
TD_FORMS = ("linear_delta", "squared_delta")


@dataclass(frozen=True)
class PhaseSchedule:
    """Probability ``M(k)`` of taking the Q branch at global step ``k``."""

    kind: str = "linear"
    k_total: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}; choose from {SCHEDULE_KINDS}")
        if self.k_total < 0:
            raise ValueError("k_total must be >= 0")


def phase_value(schedule, k):
    """``M(k)``; ``k`` beyond ``k_total`` is clamped."""
    kt = schedule.k_total
    if kt == 0:
        return 0.0 if k > 0 else 1.0
    k = min(max(k, 0), kt)
    if schedule.kind == "hard_switch":
        return 1.0 if k < kt / 2 else 0.0
    frac = 1.0 - k / kt
    return frac * frac if schedule.kind == "quadratic" else frac


class Branch(Enum):
    Q_VALUE = "q_value"
    TD_ERROR = "td_error"


def select_branch(m, omega):
    return Branch.Q_VALUE if omega <= m else Branch.TD_ERROR


@dataclass(frozen=True)
class ActorGradMode:
    value: str = "q_only"
    td_form: str = "squared_delta"

    def __post_init__(self):
        if self.value not in ACTOR_MODES:
            raise ValueError(f"unknown actor mode {self.value!r}; choose from {ACTOR_MODES}")
        if self.td_form not in TD_FORMS:
            raise ValueError(f"unknown td form {self.td_form!r}; choose from {TD_FORMS}")


def choose_branch(mode, schedule, k, omega):
    if mode.value == "q_only":
        return Branch.Q_VALUE
    if mode.value == "td_only":
        return Branch.TD_ERROR
    return select_branch(phase_value(schedule, k), omega)


def bellman_target(batch, targets, gamma):
    """``y = R + gamma * Q'(x', pi'(x'))``; absorbing terminals give ``y = R``.

    Accepts a ``Batch`` (returns an array) or a single ``Transition``.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    single = not hasattr(batch, "costs")
    if single:
        nxt = batch.next_state[None, :]
        costs = np.array([batch.cost])
        terminals = np.array([batch.terminal])
    else:
        nxt, costs, terminals = batch.next_states, batch.costs, batch.terminals
    q_next = critic_forward(targets.target_critic, nxt, actor_forward(targets.target_actor, nxt))
    if not np.all(np.isfinite(q_next)):
        raise NumericError("target critic produced a non-finite value")
    y = costs + gamma * np.where(terminals, 0.0, q_next)
    return float(y[0]) if single else y


def td_error(critic, actor, batch, y):
    """``delta = Q(x, pi(x)) - y`` with the *current* policy's action."""
    states = batch.states if hasattr(batch, "states") else batch.state
    return critic_forward(critic, states, actor_forward(actor, states)) - y


def critic_loss_and_grad(critic, batch, y):
    """Mean squared Bellman error at the stored actions, and its gradient."""
    q, cache = mlp_forward(critic.params, critic_input(critic, batch.states, batch.actions))
    q = q[:, 0]
    y = np.asarray(y, dtype=np.float64)
    if y.shape != q.shape:
        raise ShapeError(f"target shape {y.shape} does not match batch of {q.shape[0]}")
    err = q - y
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericError("critic loss is not finite")
    grads, _ = mlp_backward(critic.params, cache, (2.0 / len(q)) * err[:, None])
    return loss, grads


def critic_update(critic, batch, targets, gamma, adam):
    """One Adam step on the Bellman regression; returns ``(critic, adam, loss)``.

    ``loss`` is measured before the step.
    """
    y = bellman_target(batch, targets, gamma)
    loss, grads = critic_loss_and_grad(critic, batch, y)
    params, adam = adam_step(critic.params, grads, adam)
    return type(critic)(params, critic.state_dim), adam, loss


def _actor_chain(actor, critic, states):
    """Forward both nets on the actor's own actions; returns what backprop needs."""
    raw, a_cache = mlp_forward(actor.params, states)
    actions = actor.action_bound * raw
    q, c_cache = mlp_forward(critic.params, critic_input(critic, states, actions))
    return a_cache, c_cache, q[:, 0]


def _actor_upstream(actor, critic, c_cache, weights):
    dq_din = mlp_input_grad(critic.params, c_cache, weights[:, None])
    return dq_din[:, critic.state_dim:] * actor.action_bound


def _sample_weights(form, q, batch, targets, gamma):
    """d(per-sample objective)/dQ for each branch form."""
    if form in ("q", "td_linear"):
        # d(delta)/dQ = 1: y carries no actor dependence.
        return np.ones_like(q)
    if form == "td_squared":
        return q - bellman_target(batch, targets, gamma)
    raise ValueError(f"unknown gradient form {form!r}")


def branch_form(mode, branch):
    if branch is Branch.Q_VALUE:
        return "q"
    return "td_linear" if mode.td_form == "linear_delta" else "td_squared"


def actor_gradient(mode, schedule, k, omega, batch, critic, actor, targets, gamma):
    """Gradient of the phased actor objective w.r.t. the actor parameters.

    Critic parameters are held fixed; the gradient flows through the
    critic's action input into the actor.
    """
    if len(batch) == 0:
        raise ShapeError("actor_gradient needs a nonempty batch")
    branch = choose_branch(mode, schedule, k, omega)
    return branch_gradient(branch_form(mode, branch), batch, critic, actor, targets, gamma)


def branch_gradient(form, batch, critic, actor, targets, gamma):
    """Batch-mean actor gradient for ``form`` in {"q", "td_linear", "td_squared"}."""
    a_cache, c_cache, q = _actor_chain(actor, critic, batch.states)
    w = _sample_weights(form, q, batch, targets, gamma) / len(q)
    grads, _ = mlp_backward(actor.params, a_cache, _actor_upstream(actor, critic, c_cache, w))
    for i, g in enumerate(grads.arrays):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite actor gradient in parameter array {i}")
    return grads


def per_sample_actor_grads(form, batch, critic, actor, targets, gamma):
    """``(N, P)`` matrix of single-transition actor gradients for ``form``."""
    a_cache, c_cache, q = _actor_chain(actor, critic, batch.states)
    w = _sample_weights(form, q, batch, targets, gamma)
    return per_sample_grads(actor.params, a_cache, _actor_upstream(actor, critic, c_cache, w))


def actor_update(actor, grad, adam):
    params, adam = adam_step(actor.params, grad, adam)
    return type(actor)(params, actor.action_bound), adam
