"""Desk-scale control tasks, stated as costs to minimize, plus exact oracles.

Stepping is a pure function of ``(spec, state, action)`` and broadcasts over
leading batch dimensions, so evaluation can roll out many seeds at once.

Presets (see ``make_env``):

``lqr1d`` / ``lqr2d``
    ``x' = A x + B u``, cost ``x'Qx + u'Ru``.
``cartpole``
    Cart-pole balance, state ``(x, x_dot, cos th, sin th, th_dot)`` with
    ``th = 0`` upright. The pole rotates freely.
``pendulum``
    Pendulum swing-up from hanging, state ``(cos th, sin th, th_dot)``.

The two mechanical tasks use semi-implicit Euler at ``dt = 0.02`` and a
stage cost ``1 - r`` with a shaped reward ``r`` in ``[0, 1]``. They are
re-implementations of standard dynamics, not copies of any benchmark suite.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, OracleError, ShapeError
from .rng import make_rng


@dataclass(frozen=True)
class EnvSpec:
    name: str
    kind: str
    state_dim: int
    action_dim: int
    action_bound: np.ndarray
    episode_len: int
    cost_normalized: bool
    x0_low: np.ndarray
    x0_high: np.ndarray
    A: np.ndarray = None
    B: np.ndarray = None
    Qc: np.ndarray = None
    Rc: np.ndarray = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("action_bound", "x0_low", "x0_high", "A", "B", "Qc", "Rc"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.atleast_1d(np.asarray(val, dtype=np.float64)))
        if self.kind not in ("lqr", "cartpole_balance", "pendulum_swingup"):
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.action_bound.shape != (self.action_dim,):
            raise ShapeError("action_bound must have one entry per action dimension")
        if self.kind == "lqr":
            n, m = self.state_dim, self.action_dim
            if self.A.shape != (n, n) or self.B.shape != (n, m) or self.Qc.shape != (n, n) or self.Rc.shape != (m, m):
                raise ShapeError("LQR matrices do not match the declared dimensions")
            if np.min(np.linalg.eigvalsh(self.Qc)) < -1e-12 or np.min(np.linalg.eigvalsh(self.Rc)) <= 0:
                raise ValueError("LQR needs Qc positive semi-definite and Rc positive definite")

    def with_overrides(self, **kw):
        return replace(self, **kw)


def lqr_spec(A, B, Qc, Rc, x0_low, x0_high, action_bound, episode_len=50, name="lqr"):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    n, m = B.shape
    return EnvSpec(name, "lqr", n, m, np.broadcast_to(action_bound, (m,)), episode_len, False,
                   np.broadcast_to(x0_low, (n,)), np.broadcast_to(x0_high, (n,)),
                   A, B, np.atleast_2d(Qc), np.atleast_2d(Rc))


CARTPOLE_PARAMS = {
    "gravity": 9.8,
    "cart_mass": 1.0,
    "pole_mass": 0.1,
    "half_length": 0.5,
    "force_mag": 10.0,
    "dt": 0.02,
}

PENDULUM_PARAMS = {
    "gravity": 10.0,
    "mass": 1.0,
    "length": 1.0,
    "max_speed": 8.0,
    "dt": 0.02,
}


def make_env(name):
    """Named preset environments.

    ``lqr1d`` is the scalar plant a=b=q=r=1. Its bound of 1 keeps the
    optimal action (|K* x| <= 0.62 on the start interval) unclipped, and
    20-step episodes keep the evaluation cost dominated by the transient.
    """
    if name == "lqr1d":
        return lqr_spec(1.0, 1.0, 1.0, 1.0, -1.0, 1.0, action_bound=1.0, episode_len=20, name=name)
    if name == "lqr2d":
        return lqr_spec([[1.0, 0.1], [0.0, 1.0]], [[0.005], [0.1]], np.eye(2), [[0.1]],
                        -1.0, 1.0, action_bound=5.0, episode_len=100, name=name)
    if name == "cartpole":
        # x0 stored as (x, x_dot, theta, theta_dot); env_reset converts theta to (cos, sin)
        return EnvSpec(name, "cartpole_balance", 5, 1, [1.0], 1000, True,
                       [-0.1, -0.05, -0.05, -0.05], [0.1, 0.05, 0.05, 0.05], params=dict(CARTPOLE_PARAMS))
    if name == "pendulum":
        return EnvSpec(name, "pendulum_swingup", 3, 1, [2.0], 1000, True,
                       [np.pi - 0.1, -0.1], [np.pi + 0.1, 0.1], params=dict(PENDULUM_PARAMS))
    raise ValueError(f"unknown environment preset {name!r}; choose lqr1d, lqr2d, cartpole or pendulum")


PRESETS = ("lqr1d", "lqr2d", "cartpole", "pendulum")


def env_reset(spec, seed):
    """Seeded initial state drawn uniformly from the preset range."""
    rng = make_rng(seed, 7)
    raw = rng.uniform(spec.x0_low, spec.x0_high)
    if spec.kind == "cartpole_balance":
        x, xd, th, thd = raw
        return np.array([x, xd, np.cos(th), np.sin(th), thd])
    if spec.kind == "pendulum_swingup":
        th, thd = raw
        return np.array([np.cos(th), np.sin(th), thd])
    return raw


def _lqr_step(spec, x, u):
    nxt = x @ spec.A.T + u @ spec.B.T
    cost = np.einsum("...i,ij,...j->...", x, spec.Qc, x) + np.einsum("...i,ij,...j->...", u, spec.Rc, u)
    return nxt, cost


def _cartpole_step(spec, s, u):
    p = spec.params
    x, xd, c, sn, thd = (s[..., i] for i in range(5))
    force = p["force_mag"] * u[..., 0]
    total = p["cart_mass"] + p["pole_mass"]
    ml = p["pole_mass"] * p["half_length"]
    temp = (force + ml * thd * thd * sn) / total
    thdd = (p["gravity"] * sn - c * temp) / (p["half_length"] * (4.0 / 3.0 - p["pole_mass"] * c * c / total))
    xdd = temp - ml * thdd * c / total
    dt = p["dt"]
    xd2 = xd + dt * xdd
    thd2 = thd + dt * thdd
    x2 = x + dt * xd2
    th2 = np.arctan2(sn, c) + dt * thd2
    nxt = np.stack([x2, xd2, np.cos(th2), np.sin(th2), thd2], axis=-1)
    upright = (c + 1.0) / 2.0
    centered = (1.0 + np.exp(-x * x)) / 2.0
    small_control = (4.0 + np.exp(-u[..., 0] ** 2)) / 5.0
    small_velocity = (1.0 + np.exp(-thd * thd / 25.0)) / 2.0
    return nxt, 1.0 - upright * centered * small_control * small_velocity


def _pendulum_step(spec, s, u):
    p = spec.params
    c, sn, thd = s[..., 0], s[..., 1], s[..., 2]
    g, m, l, dt = p["gravity"], p["mass"], p["length"], p["dt"]
    torque = u[..., 0]
    thdd = 3.0 * g / (2.0 * l) * sn + 3.0 / (m * l * l) * torque
    thd2 = np.clip(thd + dt * thdd, -p["max_speed"], p["max_speed"])
    th2 = np.arctan2(sn, c) + dt * thd2
    nxt = np.stack([np.cos(th2), np.sin(th2), thd2], axis=-1)
    umax = spec.action_bound[0]
    cost = (0.8 * (1.0 - c) / 2.0
            + 0.1 * np.minimum(thd * thd / p["max_speed"] ** 2, 1.0)
            + 0.1 * np.minimum((torque / umax) ** 2, 1.0))
    return nxt, cost


_STEPS = {"lqr": _lqr_step, "cartpole_balance": _cartpole_step, "pendulum_swingup": _pendulum_step}


def env_step(spec, state, action):
    """Advance one step; returns ``(next_state, cost)``. Broadcasts over leading axes."""
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if state.shape[-1] != spec.state_dim or action.shape[-1] != spec.action_dim:
        raise ShapeError(f"{spec.name}: expected state dim {spec.state_dim} and action dim {spec.action_dim}")
    nxt, cost = _STEPS[spec.kind](spec, state, action)
    if not (np.all(np.isfinite(nxt)) and np.all(np.isfinite(cost))):
        raise NumericError(f"{spec.name}: state diverged")
    if nxt.ndim == 1:
        return nxt, float(cost)
    return nxt, cost


def clip_action(spec, action):
    return np.clip(action, -spec.action_bound, spec.action_bound)


def rollout_costs(spec, policy, seeds, episode_len=None):
    """Total (undiscounted) cost of ``policy`` for one episode per seed.

    ``policy`` maps an ``(S, state_dim)`` batch to ``(S, action_dim)``;
    actions are clipped to the bounds before stepping.
    """
    seeds = list(seeds)
    if not seeds:
        return np.zeros(0)
    T = spec.episode_len if episode_len is None else episode_len
    x = np.stack([env_reset(spec, s) for s in seeds])
    total = np.zeros(len(seeds))
    for _ in range(T):
        u = clip_action(spec, policy(x))
        x, c = env_step(spec, x, u)
        total += c
    return total


# -- Riccati oracle --------------------------------------------------------


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    gamma: float
    residual: float
    iterations: int


def _riccati_map(P, A, B, Q, R, gamma):
    PA = P @ A
    PB = P @ B
    S = R + gamma * B.T @ PB
    return Q + gamma * A.T @ PA - gamma**2 * PA.T @ B @ np.linalg.solve(S, B.T @ PA)


def riccati_residual(P, A, B, Q, R, gamma):
    return float(np.max(np.abs(P - _riccati_map(P, A, B, Q, R, gamma))))


def riccati_solve(spec, gamma, tol=1e-12, max_iters=100_000):
    """Discounted DARE by fixed-point iteration from ``P = 0``.

    ``gamma = 1`` gives the undiscounted equation. The optimal feedback is
    ``u = -K x`` with ``K = gamma (R + gamma B'PB)^-1 B'PA``.
    """
    A, B, Q, R = spec.A, spec.B, spec.Qc, spec.Rc
    P = np.zeros_like(Q)
    for it in range(1, max_iters + 1):
        # divergence is detected below, so silence the overflow warnings
        with np.errstate(over="ignore", invalid="ignore"):
            P_next = _riccati_map(P, A, B, Q, R, gamma)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise OracleError("Riccati iteration diverged")
        delta = np.max(np.abs(P_next - P))
        P = P_next
        if delta < tol:
            break
    else:
        raise OracleError(f"Riccati iteration did not reach tol {tol} in {max_iters} iterations")
    K = gamma * np.linalg.solve(R + gamma * B.T @ P @ B, B.T @ P @ A)
    return RiccatiSolution(P, K, gamma, riccati_residual(P, A, B, Q, R, gamma), it)


def lqr_q_star(sol, spec, x, u):
    """``Q*(x, u) = x'Qx + u'Ru + gamma (Ax+Bu)' P (Ax+Bu)``."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    nxt, cost = _lqr_step(spec, x, u)
    return cost + sol.gamma * np.einsum("...i,ij,...j->...", nxt, sol.P, nxt)


def closed_loop_radius(spec, K, gamma):
    """Spectral radius of ``sqrt(gamma) (A - B K)``."""
    M = np.sqrt(gamma) * (spec.A - spec.B @ np.atleast_2d(K))
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def lqr_optimal_costs(spec, gamma, seeds, episode_len=None):
    """Evaluation-protocol total costs of the Riccati-optimal feedback."""
    K = riccati_solve(spec, gamma).K
    return rollout_costs(spec, lambda x: -x @ K.T, seeds, episode_len)


def zero_policy_cost(spec, episode_len=None):
    """Total cost of ``u = 0`` from the worst corner of the initial-state box."""
    T = spec.episode_len if episode_len is None else episode_len
    n = spec.x0_low.size
    worst = 0.0
    for mask in range(2**n):
        raw = np.where([(mask >> i) & 1 for i in range(n)], spec.x0_high, spec.x0_low)
        x = raw
        total = 0.0
        for _ in range(T):
            x, c = env_step(spec, x, np.zeros(spec.action_dim))
            total += c
        worst = max(worst, total)
    return worst


# -- tabular value iteration -----------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Product grid over a compact region of state (and action) space.

    ``to_state`` / ``from_state`` convert between grid coordinates and the
    environment state (identity for LQR). Next states falling outside the
    grid are clamped to its boundary.
    """

    env: EnvSpec
    state_axes: tuple
    action_axes: tuple
    to_state: object = None
    from_state: object = None

    @property
    def n_states(self):
        return int(np.prod([len(a) for a in self.state_axes]))

    @property
    def n_actions(self):
        return int(np.prod([len(a) for a in self.action_axes]))

    def state_points(self):
        mesh = np.meshgrid(*self.state_axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def action_points(self):
        mesh = np.meshgrid(*self.action_axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def lqr_grid(spec, half_width=2.0, n_state=41, n_action=21):
    axes = tuple(np.linspace(-half_width, half_width, n_state) for _ in range(spec.state_dim))
    actions = tuple(np.linspace(-b, b, n_action) for b in spec.action_bound)
    return GridSpec(spec, axes, actions)


def pendulum_grid(spec, n_state=41, n_action=21):
    axes = (np.linspace(-np.pi, np.pi, n_state),
            np.linspace(-spec.params["max_speed"], spec.params["max_speed"], n_state))
    actions = (np.linspace(-spec.action_bound[0], spec.action_bound[0], n_action),)

    def to_state(g):
        return np.stack([np.cos(g[:, 0]), np.sin(g[:, 0]), g[:, 1]], axis=-1)

    def from_state(s):
        return np.stack([np.arctan2(s[:, 1], s[:, 0]), s[:, 2]], axis=-1)

    return GridSpec(spec, axes, actions, to_state, from_state)


def _interp_matrix(axes, points):
    """Sparse multilinear interpolation weights of ``points`` onto the grid."""
    n_pts, d = points.shape
    shape = [len(a) for a in axes]
    lo_idx, frac = [], []
    for j, ax in enumerate(axes):
        p = np.clip(points[:, j], ax[0], ax[-1])
        i = np.clip(np.searchsorted(ax, p, side="right") - 1, 0, len(ax) - 2)
        lo_idx.append(i)
        frac.append((p - ax[i]) / (ax[i + 1] - ax[i]))
    rows, cols, vals = [], [], []
    for corner in range(2**d):
        w = np.ones(n_pts)
        flat = np.zeros(n_pts, dtype=np.int64)
        for j in range(d):
            bit = (corner >> j) & 1
            w = w * (frac[j] if bit else 1.0 - frac[j])
            flat = flat * shape[j] + lo_idx[j] + bit
        rows.append(np.arange(n_pts))
        cols.append(flat)
        vals.append(w)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n_pts, int(np.prod(shape))))


def grid_model(grid):
    """Stage costs ``(S, A)`` and the sparse next-state interpolation operator."""
    g = grid.state_points()
    acts = grid.action_points()
    S, nA = len(g), len(acts)
    states = grid.to_state(g) if grid.to_state else g
    xs = np.repeat(states, nA, axis=0)
    us = np.tile(acts, (S, 1))
    nxt, cost = env_step(grid.env, xs, us)
    nxt_g = grid.from_state(nxt) if grid.from_state else nxt
    return cost.reshape(S, nA), _interp_matrix(grid.state_axes, nxt_g)


def value_iteration_oracle(grid, gamma, iters):
    """``Q_{i+1} = R + gamma * min_u Q_i(x', u)`` from ``Q_0 = 0``.

    Returns an ``(iters + 1, S, A)`` array holding every iterate.
    """
    R, T = grid_model(grid)
    S, nA = R.shape
    out = np.zeros((iters + 1, S, nA))
    Q = out[0]
    for i in range(iters):
        V = Q.min(axis=1)
        Q = R + gamma * (T @ V).reshape(S, nA)
        out[i + 1] = Q
    return out


def greedy_actions(grid, Q):
    """Argmin action at every grid state for a tabular ``Q`` of shape ``(S, A)``."""
    return grid.action_points()[np.argmin(Q, axis=1)]
