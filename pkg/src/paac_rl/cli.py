"""Command-line front end.

Configuration is an INI file with the sections below; every key is
optional and ``--set section.key=value`` overrides file values. Blank
agent keys fall back to the variant and environment-preset defaults.

Exit codes: 0 success, 1 property failure, 2 config error, 3 IO error,
4 oracle non-convergence.
"""

import argparse
import configparser
import csv
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bench, checks
from .agents import VARIANTS, evaluate_policy
from .envs import make_env, riccati_residual, riccati_solve
from .errors import ConfigError, EmptyBufferError, OracleError
from .networks import load_checkpoint, save_checkpoint
from .paac import SCHEDULE_KINDS
from .rng import make_rng

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_IO, EXIT_ORACLE = 0, 1, 2, 3, 4
OUTPUT_ENV_VAR = "PAAC_OUTPUT_DIR"

log = logging.getLogger("paac_rl")


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _list(text):
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _floats(text):
    return tuple(float(s) for s in _list(text))


# (parser, default, help); default None means "not set"
SCHEMA = {
    "experiment": {
        "variants": (_list, ("ddpg",), f"comma-separated subset of {', '.join(VARIANTS)}"),
        "env": (str, "lqr1d", "preset: lqr1d, lqr2d, cartpole, pendulum"),
        "n_trials": (int, 10, "trials per variant (trial seeds start at trial_seed_base)"),
        "total_steps": (int, 20000, "environment steps per trial (also K_total of the schedule)"),
        "eval_period": (int, 1000, "steps between greedy evaluations"),
        "n_eval_seeds": (int, 10, "evaluation episodes per evaluation"),
        "eval_seed_base": (int, 100, "first evaluation environment seed"),
        "trial_seed_base": (int, 0, "first trial seed"),
        "jobs": (int, 1, "parallel trial processes"),
        "output_dir": (str, "runs", f"output directory ({OUTPUT_ENV_VAR} overrides)"),
        "success_threshold": (float, None, "seed-averaged total cost counted as success; blank = task default"),
        "save_checkpoints": (_bool, True, "write one checkpoint per trial"),
        "std_ddof": (int, 0, "0 = population, 1 = sample standard deviation in the metrics"),
    },
    "agent": {
        "gamma": (float, None, "discount factor in (0, 1); default 0.99"),
        "minibatch_n": (int, None, "minibatch size"),
        "buffer_capacity": (int, None, "replay capacity (variants without replay force 1)"),
        "target_mode": (str, None, "hard, soft or none; must agree with the variant"),
        "target_period": (int, None, "hard target copy period; default 15"),
        "tau": (float, None, "soft target blend; default 0.05"),
        "td_form": (str, None, "linear_delta or squared_delta; default squared_delta"),
        "schedule": (str, None, f"phase schedule: {', '.join(SCHEDULE_KINDS)}; default linear"),
        "noise_scale": (float, None, "exploration std as a fraction of the action bound"),
        "warmup_steps": (int, None, "random-action steps before learning starts"),
        "lr": (float, None, "Adam learning rate (critic, and actor unless actor_lr is set)"),
        "actor_lr": (float, None, "separate actor learning rate"),
        "hidden_width": (int, None, "hidden layer width"),
        "updates_per_step": (int, None, "learning iterations per environment step"),
        "zero_critic_output": (_bool, None, "start the critic output layer at zero"),
        "actor_output_init": (float, None, "half-width of the actor output layer init"),
    },
    "env": {
        "episode_len": (int, None, "steps per episode"),
        "action_bound": (float, None, "symmetric action bound"),
        "x0_low": (float, None, "lower end of the initial state range (all dimensions)"),
        "x0_high": (float, None, "upper end of the initial state range (all dimensions)"),
        "A": (_floats, None, "LQR only: row-major entries of A"),
        "B": (_floats, None, "LQR only: row-major entries of B"),
        "Qc": (_floats, None, "LQR only: row-major entries of the state cost matrix"),
        "Rc": (_floats, None, "LQR only: row-major entries of the action cost matrix"),
    },
    "probe": {
        "checkpoint": (str, None, "checkpoint file for probe-variance and eval"),
        "batch_size": (int, 1, "minibatch size per gradient sample"),
        "n_batches": (int, 10000, "gradient samples per form"),
        "seed": (int, 0, "sampling seed"),
    },
    "riccati": {
        "tol": (float, 1e-12, "fixed-point tolerance"),
        "max_iters": (int, 100000, "iteration cap"),
    },
    "check": {
        "suites": (_list, tuple(checks.SUITES), f"comma-separated subset of {', '.join(checks.SUITES)}"),
    },
    "sweep": {
        "variant": (str, "dhdp_paac", "phased variant to sweep"),
        "schedules": (_list, SCHEDULE_KINDS, "schedules to compare"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated flat configuration; ``values[section][key]``."""

    values: dict

    def __getitem__(self, section):
        return self.values[section]

    def experiment(self, variants=None, agent_extra=None):
        e, a, v = self["experiment"], self["agent"], self["env"]
        agent = {k: val for k, val in a.items() if val is not None}
        agent.update(agent_extra or {})
        env_over = {k: val for k, val in v.items() if val is not None}
        try:
            return bench.ExperimentConfig(
                variants=tuple(variants or e["variants"]),
                env=e["env"],
                n_trials=e["n_trials"],
                total_steps=e["total_steps"],
                eval_period=e["eval_period"],
                n_eval_seeds=e["n_eval_seeds"],
                eval_seed_base=e["eval_seed_base"],
                trial_seed_base=e["trial_seed_base"],
                agent_overrides=agent,
                env_overrides=env_over,
                success_threshold=e["success_threshold"],
                jobs=e["jobs"],
                std_ddof=e["std_ddof"],
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def parse_config(path=None, overrides=()):
    """Read ``path`` (if any), apply ``section.key=value`` overrides, validate."""
    raw = configparser.ConfigParser(interpolation=None)
    raw.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                raw.read_file(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config: file not found: {path}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"config: {exc}") from exc
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if not raw.has_section(section):
            raw.add_section(section)
        raw.set(section, key, value)
    values = {s: {k: d for k, (_, d, _) in keys.items()} for s, keys in SCHEMA.items()}
    for section in raw.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{section}: unknown section")
        for key, text in raw.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            parser = SCHEMA[section][key][0]
            if text.strip() == "":
                continue
            try:
                values[section][key] = parser(text.strip())
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from exc
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg):
    e = cfg["experiment"]
    bad = [v for v in e["variants"] if v not in VARIANTS]
    if bad:
        raise ConfigError(f"experiment.variants: unknown {bad}")
    if e["env"] not in ("lqr1d", "lqr2d", "cartpole", "pendulum"):
        raise ConfigError(f"experiment.env: unknown preset {e['env']!r}")
    bad = [s for s in cfg["check"]["suites"] if s not in checks.SUITES]
    if bad:
        raise ConfigError(f"check.suites: unknown {bad}")
    bad = [s for s in cfg["sweep"]["schedules"] if s not in SCHEDULE_KINDS]
    if bad:
        raise ConfigError(f"sweep.schedules: unknown {bad}")
    if cfg["sweep"]["variant"] not in VARIANTS:
        raise ConfigError(f"sweep.variant: unknown {cfg['sweep']['variant']!r}")
    exp = cfg.experiment()
    exp.make_env()
    for v in exp.variants:
        try:
            exp.agent_config(v, 0)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise ConfigError(f"agent.{exc}") from exc
            raise ConfigError(f"agent: {exc}") from exc


def output_dir(cfg, flag=None):
    return Path(flag or os.environ.get(OUTPUT_ENV_VAR) or cfg["experiment"]["output_dir"])


# -- CSV ------------------------------------------------------------------------


def fmt(x):
    """Shortest round-trip decimal for floats; ints and strings as-is."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows, comments=()):
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def std_note(ddof):
    form = "population" if ddof == 0 else "sample"
    return f"learning_variance and robustness use the {form} standard deviation (ddof={ddof})"


def write_experiment(out, result, prefix=""):
    exp = result.config
    seeds = exp.eval_seeds
    curves, longform, metrics = [], [], []
    for name, vr in result.variants.items():
        for t, seed in enumerate(exp.trial_seeds):
            for e, step in enumerate(vr.eval_steps):
                costs = vr.matrix.values[t, e]
                curves.append([step, name, seed, float(np.mean(costs))] + [float(c) for c in costs])
                for s, c in zip(seeds, costs):
                    longform.append([name, seed, e, s, float(c)])
        metrics.append([name] + [float(x) for x in vr.metrics.as_row()])
    write_csv(out / f"{prefix}curves.csv",
              ["step", "variant", "trial_seed", "mean_eval_cost"] + [f"cost_seed_{s}" for s in seeds], curves)
    write_csv(out / f"{prefix}evalmatrix.csv", ["variant", "trial_seed", "eval_index", "env_seed", "total_cost"],
              longform)
    write_csv(out / f"{prefix}metrics.csv", ["variant", *bench.METRIC_COLUMNS], metrics,
              comments=[std_note(exp.std_ddof), f"success threshold {fmt(result.threshold.value)}; "
                                  f"auc normalizer {fmt(result.normalizer)}"])


def print_metrics(result, stream=sys.stdout):
    print(f"{'variant':<14}" + "".join(f"{c:>19}" for c in bench.METRIC_COLUMNS), file=stream)
    for name, vr in result.variants.items():
        print(f"{name:<14}" + "".join(f"{x:>19.6g}" for x in vr.metrics.as_row()), file=stream)


# -- commands -------------------------------------------------------------------


def cmd_train(cfg, out):
    result = bench.run_experiment(cfg.experiment())
    out.mkdir(parents=True, exist_ok=True)
    write_experiment(out, result)
    if cfg["experiment"]["save_checkpoints"]:
        ck = out / "checkpoints"
        ck.mkdir(exist_ok=True)
        for name, vr in result.variants.items():
            for seed, lg in zip(result.config.trial_seeds, vr.logs):
                ag = lg.agent
                meta = {"variant": name, "trial_seed": seed, "env": result.config.env, "gamma": ag.cfg.gamma,
                        "steps_done": lg.steps_done, "aborted": lg.aborted}
                save_checkpoint(ck / f"{name}_trial{seed}.npz", ag.actor, ag.critic, ag.targets, ag.buffer, meta)
    print_metrics(result)
    return EXIT_OK


def _load(cfg):
    path = cfg["probe"]["checkpoint"]
    if not path:
        raise ConfigError("probe.checkpoint: no checkpoint given")
    if not Path(path).is_file():
        raise ConfigError(f"probe.checkpoint: file not found: {path}")
    return load_checkpoint(path)


def cmd_eval(cfg, out):
    ck = _load(cfg)
    exp = cfg.experiment()
    costs = evaluate_policy(ck.actor, exp.make_env(), exp.eval_seeds)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "eval.csv", ["env_seed", "total_cost"], zip(exp.eval_seeds, costs.tolist()))
    for s, c in zip(exp.eval_seeds, costs):
        print(f"seed {s}: {c:.6g}")
    print(f"mean: {float(np.mean(costs)):.6g}")
    return EXIT_OK


def cmd_probe_variance(cfg, out):
    ck = _load(cfg)
    p = cfg["probe"]
    gamma = (ck.meta or {}).get("gamma", 0.99)
    try:
        var = bench.variance_probe(ck, p["batch_size"], p["n_batches"], make_rng(p["seed"], 21), gamma=gamma)
    except EmptyBufferError as exc:
        raise ConfigError(f"probe.checkpoint: {exc}") from exc
    out.mkdir(parents=True, exist_ok=True)
    rows = [[form, v, p["n_batches"], p["batch_size"]] for form, v in zip(bench.FORMS, var)]
    write_csv(out / "variance.csv", ["form", "variance", "n_batches", "batch_size"], rows,
              comments=["variance = trace of the covariance of minibatch actor gradients (population form)"])
    for form, v in zip(bench.FORMS, var):
        print(f"{form:<11} {v:.6e}")
    return EXIT_OK


def cmd_riccati(cfg, out):
    exp = cfg.experiment()
    env = exp.make_env()
    if env.kind != "lqr":
        raise ConfigError(f"experiment.env: riccati needs an LQR preset, got {env.name!r}")
    gamma = exp.agent_config(exp.variants[0], 0).gamma
    r = cfg["riccati"]
    sol = riccati_solve(env, gamma, tol=r["tol"], max_iters=r["max_iters"])
    res = riccati_residual(sol.P, env.A, env.B, env.Qc, env.Rc, gamma)
    np.set_printoptions(precision=12)
    print(f"P =\n{sol.P}")
    print(f"K =\n{sol.K}")
    print(f"residual = {res:.3e} (tol {r['tol']:.1e}, {sol.iterations} iterations)")
    return EXIT_OK


def cmd_check(cfg, out):
    names = cfg["check"]["suites"]
    results = checks.run_suites(names)
    print(f"{len(results)} suites")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<16} {status}  {r.seconds:6.2f}s  {r.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"first failing property: {failed[0].property_name}")
        return EXIT_PROPERTY
    return EXIT_OK


def cmd_sweep(cfg, out):
    s = cfg["sweep"]
    if VARIANTS[s["variant"]][2] != "phased":
        raise ConfigError(f"sweep.variant: {s['variant']} does not use a phased actor")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in s["schedules"]:
        result = bench.run_experiment(cfg.experiment([s["variant"]], {"schedule": kind}))
        write_experiment(out, result, prefix=f"sweep_{kind}_")
        m = result.variants[s["variant"]].metrics
        rows.append([kind] + [float(x) for x in m.as_row()])
        print(f"{kind:<12}" + "".join(f"{x:>19.6g}" for x in m.as_row()))
    write_csv(out / "sweep.csv", ["schedule", *bench.METRIC_COLUMNS], rows,
              comments=[std_note(cfg["experiment"]["std_ddof"])])
    return EXIT_OK


COMMANDS = {
    "train": (cmd_train, "run trials and write curves.csv, evalmatrix.csv, metrics.csv and checkpoints"),
    "eval": (cmd_eval, "evaluate a checkpoint's greedy policy on the evaluation seeds"),
    "probe-variance": (cmd_probe_variance, "actor-gradient variance per branch form; writes variance.csv"),
    "riccati": (cmd_riccati, "solve the discounted Riccati equation for an LQR preset"),
    "check": (cmd_check, "run the invariant suites and print a pass/fail table"),
    "sweep": (cmd_sweep, "compare phase schedules for one phased variant"),
}


def _config_epilog():
    lines = ["config keys (INI sections; override with --set section.key=value):"]
    for section, keys in SCHEMA.items():
        lines.append(f"  [{section}]")
        for key, (_, default, help_) in keys.items():
            d = ",".join(default) if isinstance(default, tuple) else ("" if default is None else default)
            lines.append(f"    {key} = {d}    ; {help_}")
    return "\n".join(lines)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="paac",
        description="Phased actor-critic experiments, oracles and invariant checks.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("-c", "--config", help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("-o", "--output-dir", help=f"output directory (beats {OUTPUT_ENV_VAR} and the config)")
        if name in ("eval", "probe-variance"):
            p.add_argument("--checkpoint", help="checkpoint file (same as --set probe.checkpoint=...)")
        if name == "check":
            p.add_argument("--suites", help="comma-separated suites; an empty string selects none")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if getattr(args, "checkpoint", None):
        overrides.append(f"probe.checkpoint={args.checkpoint}")
    try:
        cfg = parse_config(args.config, overrides)
        if getattr(args, "suites", None) is not None:
            names = _list(args.suites)
            bad = [s for s in names if s not in checks.SUITES]
            if bad:
                raise ConfigError(f"check.suites: unknown {bad}")
            cfg.values["check"]["suites"] = names
        return COMMANDS[args.command][0](cfg, output_dir(cfg, args.output_dir))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
