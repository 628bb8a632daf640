"""Actor and critic wrappers plus target-network bookkeeping."""

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, ShapeError
from .rng import make_rng
from .tensor_core import (
    ACTOR_ACTIVATION,
    CRITIC_ACTIVATION,
    DEFAULT_HIDDEN,
    NetParams,
    check_same_shape,
    init_params,
    mlp_forward,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ActorNet:
    """Deterministic policy ``u = bound * tanh(mlp(x))``."""

    params: NetParams
    action_bound: np.ndarray

    def __post_init__(self):
        bound = np.atleast_1d(np.asarray(self.action_bound, dtype=np.float64))
        if self.params.activation != ACTOR_ACTIVATION:
            raise ShapeError("actor parameters must use the tanh output activation")
        if bound.shape != (self.params.out_dim,) or np.any(bound <= 0):
            raise ShapeError(f"action_bound {bound} does not fit an actor with {self.params.out_dim} outputs")
        object.__setattr__(self, "action_bound", bound)

    @property
    def state_dim(self):
        return self.params.in_dim

    @property
    def action_dim(self):
        return self.params.out_dim


@dataclass(frozen=True)
class CriticNet:
    """Q(x, u) approximator fed the concatenation ``[x, u]``."""

    params: NetParams
    state_dim: int

    def __post_init__(self):
        if self.params.activation != CRITIC_ACTIVATION or self.params.out_dim != 1:
            raise ShapeError("critic must have a scalar linear output")
        if not 0 < self.state_dim < self.params.in_dim:
            raise ShapeError("critic state_dim must leave room for the action input")

    @property
    def action_dim(self):
        return self.params.in_dim - self.state_dim


def actor_forward(net, state):
    """Action(s) for a state vector or an ``(N, state_dim)`` batch."""
    raw, _ = mlp_forward(net.params, state)
    return net.action_bound * raw


def critic_input(net, state, action):
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if state.ndim != action.ndim or state.shape[:-1] != action.shape[:-1]:
        raise ShapeError(f"state {state.shape} and action {action.shape} do not pair up")
    if state.shape[-1] != net.state_dim or action.shape[-1] != net.action_dim:
        raise ShapeError(
            f"critic expects state dim {net.state_dim} and action dim {net.action_dim}, "
            f"got {state.shape[-1]} and {action.shape[-1]}"
        )
    return np.concatenate([state, action], axis=-1)


def critic_forward(net, state, action):
    """Scalar Q for a single pair, or an ``(N,)`` array for batches."""
    q, _ = mlp_forward(net.params, critic_input(net, state, action))
    return q[..., 0] if q.ndim == 2 else float(q[0])


@dataclass(frozen=True)
class TargetMode:
    """``kind`` is ``"hard"`` (copy every ``period`` ticks), ``"soft"`` (Polyak ``tau``) or ``"none"``."""

    kind: str
    period: int = 15
    tau: float = 0.05

    def __post_init__(self):
        if self.kind not in ("hard", "soft", "none"):
            raise ValueError(f"unknown target mode {self.kind!r}")
        if self.kind == "hard" and self.period < 1:
            raise ValueError("hard target period must be >= 1")
        if self.kind == "soft" and not 0.0 <= self.tau <= 1.0:
            raise ValueError("soft target tau must lie in [0, 1]")

    @classmethod
    def hard(cls, period=15):
        return cls("hard", period=int(period))

    @classmethod
    def soft(cls, tau=0.05):
        return cls("soft", tau=float(tau))

    @classmethod
    def none(cls):
        return cls("none")

    def __str__(self):
        if self.kind == "hard":
            return f"hard({self.period})"
        if self.kind == "soft":
            return f"soft({self.tau:g})"
        return "none"


@dataclass(frozen=True)
class TargetPair:
    target_actor: ActorNet
    target_critic: CriticNet
    mode: TargetMode
    updates_since_copy: int = 0


def soft_update(targets, live_actor, live_critic):
    """``p' <- tau * p + (1 - tau) * p'`` for every target parameter."""
    if targets.mode.kind != "soft":
        raise ContractError(f"soft_update called on a {targets.mode} target pair")
    tau = targets.mode.tau
    blend = lambda t, p: tau * p + (1.0 - tau) * t  # noqa: E731
    actor = replace(targets.target_actor, params=targets.target_actor.params.map(blend, live_actor.params))
    critic = replace(targets.target_critic, params=targets.target_critic.params.map(blend, live_critic.params))
    return replace(targets, target_actor=actor, target_critic=critic)


def hard_update_tick(targets, live_actor, live_critic):
    """Count one parameter update; copy the live nets every ``period`` ticks."""
    if targets.mode.kind != "hard":
        raise ContractError(f"hard_update_tick called on a {targets.mode} target pair")
    count = targets.updates_since_copy + 1
    if count < targets.mode.period:
        return replace(targets, updates_since_copy=count)
    check_same_shape(targets.target_actor.params, live_actor.params)
    check_same_shape(targets.target_critic.params, live_critic.params)
    return replace(
        targets,
        target_actor=replace(live_actor, params=live_actor.params.copy()),
        target_critic=replace(live_critic, params=live_critic.params.copy()),
        updates_since_copy=0,
    )


def alias_targets(targets, live_actor, live_critic):
    """Mode ``none``: the target slots simply point at the live nets."""
    if targets.mode.kind != "none":
        raise ContractError(f"alias_targets called on a {targets.mode} target pair")
    return replace(targets, target_actor=live_actor, target_critic=live_critic)


def target_tick(targets, live_actor, live_critic):
    """Dispatch the per-iteration target update for whichever mode is active."""
    kind = targets.mode.kind
    if kind == "soft":
        return soft_update(targets, live_actor, live_critic)
    if kind == "hard":
        return hard_update_tick(targets, live_actor, live_critic)
    return alias_targets(targets, live_actor, live_critic)


def init_agent_networks(
    seed,
    state_dim,
    action_dim,
    action_bound,
    mode=None,
    hidden_width=DEFAULT_HIDDEN,
    zero_critic_output=False,
    actor_output_init=None,
):
    """Seeded live actor/critic and target copies made at birth.

    ``actor_output_init``, if given, re-draws the actor's last layer from
    ``U(-s, s)`` so the initial policy sits near zero instead of wherever
    the fan-in init puts it.
    """
    if state_dim < 1 or action_dim < 1:
        raise ShapeError("state and action dimensions must be >= 1")
    mode = mode or TargetMode.hard()
    rng = make_rng(seed, 0)
    actor_params = init_params(rng, state_dim, action_dim, hidden_width, ACTOR_ACTIVATION)
    critic_params = init_params(rng, state_dim + action_dim, 1, hidden_width, CRITIC_ACTIVATION)
    if actor_output_init is not None:
        arrays = list(actor_params.arrays)
        arrays[2] = rng.uniform(-actor_output_init, actor_output_init, arrays[2].shape)
        arrays[5] = rng.uniform(-actor_output_init, actor_output_init, arrays[5].shape)
        actor_params = actor_params.with_arrays(arrays)
    if zero_critic_output:
        arrays = list(critic_params.arrays)
        arrays[2] = np.zeros_like(arrays[2])
        arrays[5] = np.zeros_like(arrays[5])
        critic_params = critic_params.with_arrays(arrays)
    bound = np.broadcast_to(np.asarray(action_bound, dtype=np.float64), (action_dim,)).copy()
    actor = ActorNet(actor_params, bound)
    critic = CriticNet(critic_params, state_dim)
    if mode.kind == "none":
        targets = TargetPair(actor, critic, mode)
    else:
        targets = TargetPair(
            ActorNet(actor_params.copy(), bound.copy()), CriticNet(critic_params.copy(), state_dim), mode
        )
    return actor, critic, targets


# -- checkpoints -----------------------------------------------------------


def _pack_net(prefix, params, out):
    out[f"{prefix}.activation"] = np.array(params.activation)
    for i, a in enumerate(params.arrays):
        out[f"{prefix}.{i}"] = a


def _unpack_net(prefix, data):
    activation = str(data[f"{prefix}.activation"])
    arrays = [np.array(data[f"{prefix}.{i}"], dtype=np.float64) for i in range(6)]
    return NetParams(tuple(arrays[:3]), tuple(arrays[3:]), activation)


def save_checkpoint(path, actor, critic, targets=None, buffer=None, meta=None):
    """Write networks (and optionally targets and replay contents) to ``.npz``.

    Values are stored as raw float64 arrays, so a reload is bit-exact.
    """
    out = {"format_version": np.array(CHECKPOINT_VERSION)}
    _pack_net("actor", actor.params, out)
    _pack_net("critic", critic.params, out)
    out["action_bound"] = actor.action_bound
    out["state_dim"] = np.array(critic.state_dim)
    if targets is not None:
        _pack_net("target_actor", targets.target_actor.params, out)
        _pack_net("target_critic", targets.target_critic.params, out)
        mode = targets.mode
        out["target_mode"] = np.array(json.dumps(
            {"kind": mode.kind, "period": mode.period, "tau": mode.tau, "since": targets.updates_since_copy}
        ))
    if buffer is not None:
        for key, arr in buffer.snapshot().items():
            out[f"buffer.{key}"] = arr
    out["meta"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **out)


@dataclass
class Checkpoint:
    actor: ActorNet
    critic: CriticNet
    targets: TargetPair = None
    buffer: object = None
    meta: dict = None


def load_checkpoint(path):
    from .replay import ReplayBuffer

    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        bound = np.array(data["action_bound"], dtype=np.float64)
        state_dim = int(data["state_dim"])
        actor = ActorNet(_unpack_net("actor", data), bound)
        critic = CriticNet(_unpack_net("critic", data), state_dim)
        targets = None
        if "target_mode" in data:
            m = json.loads(str(data["target_mode"]))
            mode = TargetMode(m["kind"], period=m["period"], tau=m["tau"])
            if mode.kind == "none":
                targets = TargetPair(actor, critic, mode)
            else:
                targets = TargetPair(
                    ActorNet(_unpack_net("target_actor", data), bound.copy()),
                    CriticNet(_unpack_net("target_critic", data), state_dim),
                    mode,
                    m["since"],
                )
        snap = {k[len("buffer."):]: np.array(data[k]) for k in data.files if k.startswith("buffer.")}
        buffer = ReplayBuffer.from_snapshot(snap) if snap else None
        meta = json.loads(str(data["meta"]))
    return Checkpoint(actor, critic, targets, buffer, meta)
