"""Invariant suites shared by ``paac check`` and the acceptance tests.

Each suite returns a ``SuiteResult``; ``property_name`` names the first
violated property when the suite fails.
"""

import time
from dataclasses import dataclass

import numpy as np

from .envs import grid_model, lqr_grid, lqr_spec, make_env, riccati_residual, riccati_solve, value_iteration_oracle
from .networks import TargetMode, init_agent_networks
from .paac import Branch, PhaseSchedule, branch_gradient, phase_value, select_branch
from .replay import Batch
from .rng import make_rng
from .tensor_core import (
    ACTOR_ACTIVATION,
    CRITIC_ACTIVATION,
    finite_diff_grad,
    init_params,
    mlp_backward,
    mlp_forward,
)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str
    property_name: str = ""
    seconds: float = 0.0


def _timed(name, fn):
    t0 = time.perf_counter()
    passed, detail, prop = fn()
    return SuiteResult(name, passed, detail, "" if passed else prop, time.perf_counter() - t0)


# -- gradient check --------------------------------------------------------------


def _kink_margin(params, x):
    _, cache = mlp_forward(params, x)
    return min(np.abs(cache.z1).min(), np.abs(cache.z2).min())


def gradient_errors(params, x, upstream, eps=1e-4, floor=1e-8):
    """Relative errors of backprop against central differences where ``|fd| > floor``."""
    def f(p):
        out, _ = mlp_forward(p, x)
        return float(np.sum(out * upstream))

    _, cache = mlp_forward(params, x)
    bp, _ = mlp_backward(params, cache, upstream)
    fd = finite_diff_grad(f, params, eps)
    a, b = bp.flatten(), fd.flatten()
    mask = np.abs(b) > floor
    return np.abs(a[mask] - b[mask]) / np.abs(b[mask])


def gradient_pairs(seed, n_pairs, role, width=8, margin=1e-2):
    """Random ``(params, x, upstream)`` draws away from ReLU kinks.

    Finite differences are meaningless where a perturbation flips a ReLU,
    so draws with any pre-activation within ``margin`` of zero are redrawn.
    """
    rng = make_rng(seed, 11, 0 if role == "actor" else 1)
    in_dim, out_dim, act = (3, 2, ACTOR_ACTIVATION) if role == "actor" else (4, 1, CRITIC_ACTIVATION)
    out = []
    while len(out) < n_pairs:
        params = init_params(rng, in_dim, out_dim, width, act)
        x = rng.uniform(-2.0, 2.0, in_dim)
        if _kink_margin(params, x) < margin:
            continue
        out.append((params, x, rng.standard_normal(out_dim)))
    return out


def suite_gradient(seed=0, n_pairs=50, tol=1e-5):
    def run():
        worst = 0.0
        for role in ("actor", "critic"):
            for params, x, up in gradient_pairs(seed, n_pairs, role):
                err = gradient_errors(params, x, up)
                if err.size:
                    worst = max(worst, float(err.max()))
                if err.size and err.max() >= tol:
                    return False, f"{role}: relative error {err.max():.3g} >= {tol}", f"gradient_check[{role}]"
        return True, f"{2 * n_pairs} pairs, worst relative error {worst:.2e}", "gradient_check"

    return _timed("gradient", run)


# -- exact gradient equivalence ------------------------------------------------------


def random_batch(rng, state_dim, action_dim, n, scale=1.0):
    return Batch(
        rng.uniform(-scale, scale, (n, state_dim)),
        rng.uniform(-scale, scale, (n, action_dim)),
        rng.uniform(0.0, scale, n),
        rng.uniform(-scale, scale, (n, state_dim)),
        np.zeros(n, dtype=bool),
        np.arange(n),
    )


def suite_branch_equality(seed=0, n_draws=100, batch=256, tol=1e-12, width=32):
    def run():
        worst = 0.0
        for i in range(n_draws):
            rng = make_rng(seed, 12, i)
            sd, ad = int(rng.integers(1, 4)), int(rng.integers(1, 3))
            actor, critic, targets = init_agent_networks(seed * 1000 + i, sd, ad, rng.uniform(0.5, 2.0, ad),
                                                         TargetMode.soft(0.05), hidden_width=width)
            b = random_batch(rng, sd, ad, batch)
            gq = branch_gradient("q", b, critic, actor, targets, 0.99).flatten()
            gl = branch_gradient("td_linear", b, critic, actor, targets, 0.99).flatten()
            diff = float(np.max(np.abs(gq - gl)))
            worst = max(worst, diff)
            if diff > tol:
                return False, f"draw {i}: max |g_td - g_q| = {diff:.3g}", "linear_td_equals_q"
        return True, f"{n_draws} draws, max abs difference {worst:.1e}", "linear_td_equals_q"

    return _timed("branch_equality", run)


# -- schedules ---------------------------------------------------------------------


def suite_schedule(seed=0, k_total=10_000, n_draws=100_000, sigmas=4.0):
    def run():
        for kind in ("linear", "quadratic", "hard_switch"):
            s = PhaseSchedule(kind, k_total)
            m = np.array([phase_value(s, k) for k in range(k_total + 1)])
            if m[0] != 1.0:
                return False, f"{kind}: M(0) = {m[0]}", f"schedule_start[{kind}]"
            if m[-1] != 0.0:
                return False, f"{kind}: M(K) = {m[-1]}", f"schedule_end[{kind}]"
            if np.any(np.diff(m) > 0):
                return False, f"{kind}: M increases somewhere", f"schedule_monotone[{kind}]"
        rng = make_rng(seed, 13)
        for p in (0.1, 0.5, 0.9):
            omegas = rng.random(n_draws)
            freq = np.mean([select_branch(p, w) is Branch.Q_VALUE for w in omegas])
            bound = sigmas * np.sqrt(p * (1 - p) / n_draws)
            if abs(freq - p) > bound:
                return False, f"M={p}: Q frequency {freq:.4f}", "branch_frequency"
        return True, "3 schedules monotone with correct endpoints; branch frequencies within 4 sigma", ""

    return _timed("schedule", run)


# -- value iteration -----------------------------------------------------------------


def suite_value_iteration(iters=200, gamma=0.99):
    def run():
        spec = make_env("lqr1d")
        grid = lqr_grid(spec)
        Q = value_iteration_oracle(grid, gamma, iters)
        R, _ = grid_model(grid)
        if not np.array_equal(Q[1], R):
            return False, "Q_1 differs from the stage cost", "vi_first_iterate"
        violations = int(np.sum(Q[:-1] > Q[1:]))
        if violations:
            return False, f"{violations} cells with Q_i > Q_(i+1)", "vi_monotone"
        r_max = float(Q[1].max())
        bound = r_max / (1.0 - gamma) + 1e-9
        if Q.max() > bound:
            return False, f"sup Q = {Q.max():.6g} > {bound:.6g}", "vi_bounded"
        return True, f"{iters} iterations, 0 violations, sup Q {Q.max():.4g} <= {bound:.4g}", ""

    return _timed("value_iteration", run)


# -- Riccati ---------------------------------------------------------------------------


def scalar_riccati_root(a, b, q, r, gamma):
    """Positive root of ``gamma b^2 P^2 + (r (1 - gamma a^2) - gamma q b^2) P - q r = 0``."""
    A = gamma * b * b
    B = r * (1.0 - gamma * a * a) - gamma * q * b * b
    C = -q * r
    return (-B + np.sqrt(B * B - 4 * A * C)) / (2 * A)


def suite_riccati(tol=1e-12):
    def run():
        for name in ("lqr1d", "lqr2d"):
            spec = make_env(name)
            sol = riccati_solve(spec, 0.99, tol=tol)
            res = riccati_residual(sol.P, spec.A, spec.B, spec.Qc, spec.Rc, 0.99)
            if res >= 1e-9:
                return False, f"{name}: residual {res:.3g}", f"riccati_residual[{name}]"
        spec = lqr_spec(1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 2.0)
        P = float(riccati_solve(spec, 0.9, tol=tol).P[0, 0])
        root = scalar_riccati_root(1.0, 1.0, 1.0, 1.0, 0.9)
        if abs(P - root) > 1e-10:
            return False, f"scalar P {P!r} vs root {root!r}", "riccati_scalar_root"
        return True, f"residuals < 1e-9; scalar root {root:.12f} matched", ""

    return _timed("riccati", run)


SUITES = {
    "gradient": suite_gradient,
    "branch_equality": suite_branch_equality,
    "schedule": suite_schedule,
    "value_iteration": suite_value_iteration,
    "riccati": suite_riccati,
}


def run_suites(names=None):
    names = list(SUITES) if names is None else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    return [SUITES[n]() for n in names]
