"""Multi-trial experiments, the five performance metrics and the gradient-variance probe.

Metric conventions (standard deviations default to the population form,
``ddof=0``; pass ``ddof=1`` for the sample form):

total_cost
    mean of the seed-averaged total cost over successful trials and their
    last 10 evaluations.
learning_variance
    std of those (trial, evaluation) seed averages.
robustness
    per successful trial, std over its (evaluation, env-seed) total costs;
    then the mean over trials.
auc
    trapezoidal area under the mean learning curve divided by
    ``step span * normalizer``.
success_rate
    fraction of (trial, last-10-evaluation) cells whose seed average meets
    the task threshold; every trial counts here, successful or not.

A trial is *unsuccessful* when it aborted or none of its last 10 seed
averages met the threshold. Unsuccessful trials are left out of the first
four metrics.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agents import DEFAULT_TARGETS, VARIANTS, AgentConfig, run_trial
from .envs import lqr_optimal_costs, make_env, zero_policy_cost
from .errors import ConfigError, EmptyBufferError, ShapeError, UndefinedMetricError
from .networks import TargetMode, actor_forward
from .paac import ActorGradMode, PhaseSchedule, per_sample_actor_grads
from .rng import make_rng

log = logging.getLogger(__name__)

LAST_EVALS = 10
FORMS = ("q", "td_linear", "td_squared")


@dataclass(frozen=True)
class Threshold:
    """Success test for one seed-averaged total cost."""

    value: float
    strict: bool = False

    def passes(self, cost):
        cost = np.asarray(cost, dtype=np.float64)
        ok = cost < self.value if self.strict else cost <= self.value
        return ok & np.isfinite(cost)


@dataclass(frozen=True)
class EvalMatrix:
    """Total costs indexed ``(trial, eval_index, env_seed)``.

    ``success`` holds one flag per trial; ``None`` means every trial counts.
    """

    values: np.ndarray
    success: np.ndarray = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"EvalMatrix needs a (trial, eval, seed) array, got shape {v.shape}")
        object.__setattr__(self, "values", v)
        s = np.ones(v.shape[0], dtype=bool) if self.success is None else np.asarray(self.success, dtype=bool)
        if s.shape != (v.shape[0],):
            raise ShapeError(f"need one success flag per trial ({v.shape[0]}), got {s.shape}")
        object.__setattr__(self, "success", s)

    @property
    def n_trials(self):
        return self.values.shape[0]

    @property
    def n_evals(self):
        return self.values.shape[1]

    @property
    def n_env_seeds(self):
        return self.values.shape[2]

    def tail(self, last=LAST_EVALS):
        """The final ``last`` evaluations (all of them if fewer exist)."""
        return self.values[:, max(0, self.n_evals - last):, :]

    def seed_means(self, last=LAST_EVALS):
        return self.tail(last).mean(axis=2)

    def with_success(self, threshold, last=LAST_EVALS):
        """Flag trials with at least one of the last evaluations meeting ``threshold``."""
        ok = threshold.passes(self.seed_means(last)).any(axis=1) & self.success
        return EvalMatrix(self.values, ok)


@dataclass(frozen=True)
class MetricsRecord:
    """Undefined metrics (no successful trial) are NaN."""

    total_cost: float
    learning_variance: float
    robustness: float
    auc: float
    success_rate: float

    def __post_init__(self):
        for name in ("learning_variance", "robustness", "auc"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if not (np.isnan(self.success_rate) or 0.0 <= self.success_rate <= 1.0):
            raise ValueError(f"success_rate must lie in [0, 1], got {self.success_rate}")

    def as_row(self):
        return [self.total_cost, self.learning_variance, self.robustness, self.auc, self.success_rate]


METRIC_COLUMNS = ("total_cost", "learning_variance", "robustness", "auc", "success_rate")


def _successful(m):
    if not m.success.any():
        raise UndefinedMetricError("no successful trials; the metric is undefined")
    return m.values[m.success]


def metric_total_cost(m, last=LAST_EVALS):
    v = _successful(m)
    return float(v[:, max(0, v.shape[1] - last):, :].mean(axis=2).mean())


def _std(x, ddof, axis=None):
    """``np.std`` that returns NaN quietly when ``ddof`` leaves no degrees of freedom."""
    n = x.size if axis is None else x.shape[axis]
    if n - ddof <= 0:
        return np.full(() if axis is None else x.shape[:axis] + x.shape[axis + 1:], np.nan)
    return x.std(axis=axis, ddof=ddof)


def metric_learning_variance(m, last=LAST_EVALS, ddof=0):
    v = _successful(m)
    return float(_std(v[:, max(0, v.shape[1] - last):, :].mean(axis=2), ddof))


def metric_robustness(m, last=LAST_EVALS, ddof=0):
    v = _successful(m)
    tail = v[:, max(0, v.shape[1] - last):, :]
    return float(_std(tail.reshape(tail.shape[0], -1), ddof, axis=1).mean())


def metric_auc(curve, normalizer):
    """Normalized trapezoidal area under ``[(step, cost), ...]``."""
    pts = np.asarray(curve, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise UndefinedMetricError("AUC needs at least two curve points")
    steps, costs = pts[:, 0], pts[:, 1]
    if np.any(np.diff(steps) <= 0):
        raise ValueError("curve steps must be strictly increasing")
    if normalizer <= 0:
        raise ValueError("AUC normalizer must be positive")
    area = np.sum(0.5 * (costs[1:] + costs[:-1]) * np.diff(steps))
    return float(area / ((steps[-1] - steps[0]) * normalizer))


def metric_success(m, threshold, last=LAST_EVALS):
    if threshold is None:
        raise ConfigError("success_threshold: no threshold defined for this task")
    if not isinstance(threshold, Threshold):
        threshold = Threshold(float(threshold))
    return float(threshold.passes(m.seed_means(last)).mean())


def mean_curve(steps, m):
    """Seed- then trial-averaged learning curve over successful trials."""
    v = _successful(m)
    return list(zip(np.asarray(steps, dtype=np.float64), v.mean(axis=2).mean(axis=0)))


def compute_metrics(m, steps, threshold, normalizer, ddof=0):
    """All five metrics; the ones undefined for ``m`` come back as NaN."""
    m = m.with_success(threshold)
    success_rate = metric_success(m, threshold)
    if not m.success.any():
        return m, MetricsRecord(np.nan, np.nan, np.nan, np.nan, success_rate)
    curve = mean_curve(steps, m)
    auc = metric_auc(curve, normalizer) if len(curve) >= 2 else np.nan
    return m, MetricsRecord(metric_total_cost(m), metric_learning_variance(m, ddof=ddof),
                            metric_robustness(m, ddof=ddof), auc,
                            success_rate)


# -- task defaults -----------------------------------------------------------


def task_threshold(env, gamma, eval_seeds):
    """Default success threshold for a preset environment."""
    if env.kind == "lqr":
        return Threshold(1.1 * float(np.mean(lqr_optimal_costs(env, gamma, eval_seeds))))
    if env.kind == "cartpole_balance":
        return Threshold(0.2 * env.episode_len, strict=True)
    if env.kind == "pendulum_swingup":
        return Threshold(0.3 * env.episode_len, strict=True)
    raise ConfigError(f"success_threshold: no default for environment kind {env.kind!r}")


def auc_normalizer(env):
    """Largest plausible total cost: ``T`` for [0, 1] costs, the zero policy's worst case for LQR."""
    if env.cost_normalized:
        return float(env.episode_len)
    return zero_policy_cost(env)


# -- learned gain ------------------------------------------------------------


def fit_linear_gain(actor, low, high, n_points=41, rng=None):
    """Least-squares ``K`` with ``pi(x) ~ -K x + c`` over the box ``[low, high]``.

    Scalar states use an even grid; higher dimensions use ``n_points ** 2``
    uniform draws from ``rng`` (seeded 0 if omitted).
    """
    low, high = np.atleast_1d(low).astype(float), np.atleast_1d(high).astype(float)
    if low.size == 1:
        xs = np.linspace(low[0], high[0], n_points)[:, None]
    else:
        rng = rng or make_rng(0)
        xs = rng.uniform(low, high, size=(n_points**2, low.size))
    u = actor_forward(actor, xs)
    design = np.hstack([xs, np.ones((xs.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(design, u, rcond=None)
    return -coef[:-1].T


# -- gradient variance ---------------------------------------------------------


def _merge(stats, chunk):
    """Chan et al. pairwise merge of (count, mean, M2) with a new chunk."""
    n_b = chunk.shape[0]
    mean_b = chunk.mean(axis=0)
    m2_b = ((chunk - mean_b) ** 2).sum(axis=0)
    if stats is None:
        return n_b, mean_b, m2_b
    n_a, mean_a, m2_a = stats
    n = n_a + n_b
    delta = mean_b - mean_a
    return n, mean_a + delta * (n_b / n), m2_a + m2_b + delta * delta * (n_a * n_b / n)


def variance_probe(checkpoint, batch_size, n_batches, rng, gamma=0.99, chunk=1000):
    """Trace of the covariance of minibatch actor gradients for each form.

    Every form sees the same ``n_batches`` minibatches. Returns
    ``(var_q, var_td_linear, var_td_squared)`` using the population form.
    """
    buf = checkpoint.buffer
    if buf is None or checkpoint.targets is None:
        raise ConfigError("checkpoint: variance probe needs targets and a replay buffer")
    if batch_size < 1 or n_batches < 1:
        raise ValueError("batch_size and n_batches must be >= 1")
    if len(buf) < batch_size:
        raise EmptyBufferError(f"buffer holds {len(buf)} transitions, probe needs at least {batch_size}")
    stats = {f: None for f in FORMS}
    per_chunk = max(1, chunk // batch_size)
    done = 0
    while done < n_batches:
        nb = min(per_chunk, n_batches - done)
        batch = buf.sample(nb * batch_size, rng)
        for form in FORMS:
            g = per_sample_actor_grads(form, batch, checkpoint.critic, checkpoint.actor, checkpoint.targets, gamma)
            g = g.reshape(nb, batch_size, -1).mean(axis=1)
            stats[form] = _merge(stats[form], g)
        done += nb
    return tuple(float(stats[f][2].sum() / stats[f][0]) for f in FORMS)


# -- experiments ---------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    variants: tuple = ("ddpg",)
    env: str = "lqr1d"
    n_trials: int = 10
    total_steps: int = 20_000
    eval_period: int = 1000
    n_eval_seeds: int = 10
    eval_seed_base: int = 100
    trial_seed_base: int = 0
    agent_overrides: dict = field(default_factory=dict)
    env_overrides: dict = field(default_factory=dict)
    success_threshold: float = None
    jobs: int = 1
    # 0: population standard deviation, 1: sample form
    std_ddof: int = 0

    def __post_init__(self):
        if not self.variants:
            raise ConfigError("variants: at least one variant is required")
        for key in ("n_trials", "n_eval_seeds", "eval_period", "jobs"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1")
        if self.std_ddof not in (0, 1):
            raise ConfigError("std_ddof: must be 0 (population) or 1 (sample)")
        for key in ("total_steps", "eval_seed_base", "trial_seed_base"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key}: must be >= 0")

    @property
    def trial_seeds(self):
        return list(range(self.trial_seed_base, self.trial_seed_base + self.n_trials))

    @property
    def eval_seeds(self):
        return list(range(self.eval_seed_base, self.eval_seed_base + self.n_eval_seeds))

    def make_env(self):
        env = make_env(self.env)
        if not self.env_overrides:
            return env
        over = dict(self.env_overrides)
        for key, dim in (("action_bound", env.action_dim), ("x0_low", env.x0_low.size), ("x0_high", env.x0_high.size)):
            if key in over:
                over[key] = np.broadcast_to(np.asarray(over[key], dtype=np.float64), (dim,)).copy()
        for key in ("A", "B", "Qc", "Rc"):
            if key not in over:
                continue
            if env.kind != "lqr":
                raise ConfigError(f"env.{key}: only LQR presets take system matrices")
            flat = np.asarray(over[key], dtype=np.float64).ravel()
            shape = getattr(env, key).shape
            if flat.size != int(np.prod(shape)):
                raise ConfigError(f"env.{key}: need {int(np.prod(shape))} numbers (row-major {shape}), got {flat.size}")
            over[key] = flat.reshape(shape)
        try:
            return env.with_overrides(**over)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"env: {exc}") from exc

    def agent_config(self, variant, seed):
        """Variant config plus overrides.

        Besides ``AgentConfig`` fields, ``agent_overrides`` may carry the flat
        keys ``target_mode`` (family name), ``target_period``, ``tau``,
        ``td_form`` and ``schedule`` (kind name).
        """
        if variant not in VARIANTS:
            raise ConfigError(f"variant: unknown {variant!r}")
        kw = dict(self.agent_overrides)
        _, family, actor = VARIANTS[variant]
        base = DEFAULT_TARGETS[family]
        kind = kw.pop("target_mode", family)
        period = kw.pop("target_period", base.period)
        tau = kw.pop("tau", base.tau)
        td_form = kw.pop("td_form", "squared_delta")
        schedule = kw.pop("schedule", "linear")
        for key, build in (("target_mode", lambda: TargetMode(kind, period=period, tau=tau)),
                           ("actor_mode", lambda: ActorGradMode(actor, td_form)),
                           ("schedule", lambda: PhaseSchedule(schedule, 0))):
            try:
                kw[key] = build()
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        return AgentConfig.for_variant(variant, self.env, seed=seed, **kw)


@dataclass
class VariantResult:
    variant: str
    matrix: EvalMatrix
    metrics: MetricsRecord
    eval_steps: list
    logs: list


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    threshold: Threshold
    normalizer: float
    variants: dict


def _run_one(args):
    exp, variant, seed = args
    env = exp.make_env()
    trial = run_trial(exp.agent_config(variant, seed), env, exp.total_steps, exp.eval_period, exp.eval_seeds)
    log.info("%s trial %d: final mean eval cost %.4g%s", variant, seed, float(np.mean(trial.eval_matrix[-1])),
             f" (aborted: {trial.abort_reason})" if trial.aborted else "")
    return trial


def _pad_evals(log, n_evals, n_seeds):
    """Aborted trials are padded with NaN evaluations (which never succeed)."""
    out = np.full((n_evals, n_seeds), np.nan)
    got = log.eval_matrix.reshape(-1, n_seeds)
    out[: got.shape[0]] = got
    return out


def run_experiment(exp, keep_agents=True):
    """Train every variant on trial seeds ``trial_seed_base ...`` and score it.

    Results do not depend on ``jobs``: each trial is a pure function of its
    config and seed.
    """
    for v in exp.variants:
        exp.agent_config(v, 0)  # validate early
    env = exp.make_env()
    gamma = exp.agent_config(exp.variants[0], 0).gamma
    threshold = (Threshold(float(exp.success_threshold)) if exp.success_threshold is not None
                 else task_threshold(env, gamma, exp.eval_seeds))
    normalizer = auc_normalizer(env)
    tasks = [(exp, v, s) for v in exp.variants for s in exp.trial_seeds]
    if exp.jobs > 1:
        with ProcessPoolExecutor(max_workers=exp.jobs) as pool:
            logs = list(pool.map(_run_one, tasks))
    else:
        logs = [_run_one(t) for t in tasks]
    steps = [0] + list(range(exp.eval_period, exp.total_steps + 1, exp.eval_period))
    results = {}
    for i, v in enumerate(exp.variants):
        vlogs = logs[i * exp.n_trials:(i + 1) * exp.n_trials]
        values = np.stack([_pad_evals(lg, len(steps), exp.n_eval_seeds) for lg in vlogs])
        alive = np.array([not lg.aborted for lg in vlogs])
        matrix, metrics = compute_metrics(EvalMatrix(values, alive), steps, threshold, normalizer,
                                          ddof=exp.std_ddof)
        if not keep_agents:
            for lg in vlogs:
                lg.agent = None
        results[v] = VariantResult(v, matrix, metrics, steps, vlogs)
        log.info("%s: %s", v, metrics)
    return ExperimentResult(exp, threshold, normalizer, results)
