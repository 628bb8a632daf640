import csv

import numpy as np
import pytest

from paac_rl import checks
from paac_rl.checks import scalar_riccati_root
from paac_rl.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_ORACLE, EXIT_PROPERTY, fmt, main, parse_config
from paac_rl.errors import ConfigError

SMOKE = ["--set", "experiment.n_trials=2", "--set", "experiment.total_steps=30", "--set", "experiment.eval_period=10",
         "--set", "experiment.n_eval_seeds=2", "--set", "agent.hidden_width=8", "--set", "agent.minibatch_n=4",
         "--set", "agent.warmup_steps=10"]


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(l for l in fh if not l.startswith("#")))


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.ini"
        path.write_text("")
        cfg = parse_config(path)
        assert cfg["experiment"]["n_trials"] == 10 and cfg["experiment"]["total_steps"] == 20000
        assert cfg["agent"]["lr"] is None

    def test_flag_beats_file(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[experiment]\nn_trials = 3\n")
        assert parse_config(path)["experiment"]["n_trials"] == 3
        assert parse_config(path, ["experiment.n_trials=5"])["experiment"]["n_trials"] == 5

    def test_off_lattice_rejected(self):
        with pytest.raises(ConfigError, match="target_mode"):
            parse_config(None, ["experiment.variants=ddpg", "agent.target_mode=hard"])

    @pytest.mark.parametrize("item, key", [
        ("agent.learning_rate=1", "agent.learning_rate"),
        ("optim.lr=1", "optim"),
        ("experiment.n_trials=many", "experiment.n_trials"),
        ("experiment.variants=td3", "experiment.variants"),
        ("agent.gamma=1.5", "gamma"),
        ("env.Qc=1,2", "env.Qc"),
    ])
    def test_errors_name_key(self, item, key):
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            parse_config(None, [item])

    def test_blank_value_means_default(self):
        assert parse_config(None, ["agent.lr="])["agent"]["lr"] is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "nope.ini")


class TestExitCodes:
    def test_config_error_is_2(self, capsys):
        assert main(["riccati", "--set", "agent.bogus=1"]) == EXIT_CONFIG
        assert "agent.bogus" in capsys.readouterr().err

    def test_io_error_is_3(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["train", *SMOKE, "-o", str(blocker / "sub")]) == EXIT_IO

    def test_oracle_error_is_4(self):
        args = ["riccati", "--set", "env.A=2", "--set", "env.B=0", "--set", "riccati.max_iters=50"]
        assert main(args) == EXIT_ORACLE

    def test_missing_checkpoint_is_2(self, tmp_path):
        assert main(["probe-variance", "--checkpoint", str(tmp_path / "none.npz"), "-o", str(tmp_path)]) == EXIT_CONFIG
        assert main(["eval", "-o", str(tmp_path)]) == EXIT_CONFIG

    def test_riccati_needs_lqr(self):
        assert main(["riccati", "--set", "experiment.env=pendulum"]) == EXIT_CONFIG


class TestTrain:
    def test_zero_step_smoke_writes_csvs(self, tmp_path):
        assert main(["train", *SMOKE, "--set", "experiment.total_steps=0", "-o", str(tmp_path)]) == EXIT_OK
        assert read_rows(tmp_path / "curves.csv")[0] == ["step", "variant", "trial_seed", "mean_eval_cost",
                                                         "cost_seed_100", "cost_seed_101"]
        assert read_rows(tmp_path / "evalmatrix.csv")[0] == ["variant", "trial_seed", "eval_index", "env_seed",
                                                             "total_cost"]
        assert read_rows(tmp_path / "metrics.csv")[0] == ["variant", "total_cost", "learning_variance",
                                                          "robustness", "auc", "success_rate"]
        assert (tmp_path / "checkpoints" / "ddpg_trial1.npz").is_file()

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", *SMOKE, "-o", str(a)]) == EXIT_OK
        assert main(["train", *SMOKE, "-o", str(b)]) == EXIT_OK
        for name in ("curves.csv", "evalmatrix.csv", "metrics.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PAAC_OUTPUT_DIR", str(tmp_path / "env"))
        assert main(["train", *SMOKE, "--set", "experiment.total_steps=0"]) == EXIT_OK
        assert (tmp_path / "env" / "metrics.csv").is_file()

    def test_curves_match_evalmatrix(self, tmp_path):
        main(["train", *SMOKE, "-o", str(tmp_path)])
        curves = read_rows(tmp_path / "curves.csv")[1:]
        longform = read_rows(tmp_path / "evalmatrix.csv")[1:]
        assert len(curves) == 2 * 4 and len(longform) == 2 * 4 * 2
        row = curves[0]
        assert float(row[3]) == np.mean([float(row[4]), float(row[5])])

    def test_eval_and_probe_on_checkpoint(self, tmp_path, capsys):
        main(["train", *SMOKE, "-o", str(tmp_path)])
        ck = str(tmp_path / "checkpoints" / "ddpg_trial0.npz")
        assert main(["eval", "--checkpoint", ck, *SMOKE, "-o", str(tmp_path)]) == EXIT_OK
        assert len(read_rows(tmp_path / "eval.csv")) == 3
        args = ["probe-variance", "--checkpoint", ck, "--set", "probe.n_batches=50", "-o", str(tmp_path)]
        assert main(args) == EXIT_OK
        rows = {r[0]: float(r[1]) for r in read_rows(tmp_path / "variance.csv")[1:]}
        assert set(rows) == {"q", "td_linear", "td_squared"}
        assert abs(rows["td_linear"] - rows["q"]) <= 1e-10 * rows["q"]

    def test_probe_buffer_too_small(self, tmp_path):
        main(["train", *SMOKE, "--set", "experiment.total_steps=0", "-o", str(tmp_path)])
        ck = str(tmp_path / "checkpoints" / "ddpg_trial0.npz")
        assert main(["probe-variance", "--checkpoint", ck, "-o", str(tmp_path)]) == EXIT_CONFIG

    def test_sweep(self, tmp_path):
        args = ["sweep", *SMOKE, "--set", "sweep.variant=ddpg_paac", "-o", str(tmp_path)]
        assert main(args) == EXIT_OK
        rows = read_rows(tmp_path / "sweep.csv")
        assert [r[0] for r in rows[1:]] == ["linear", "quadratic", "hard_switch"]
        assert (tmp_path / "sweep_quadratic_metrics.csv").is_file()
        assert main(["sweep", *SMOKE, "--set", "sweep.variant=ddpg", "-o", str(tmp_path)]) == EXIT_CONFIG


class TestRiccati:
    def test_scalar_root_printed(self, capsys):
        assert main(["riccati", "--set", "agent.gamma=0.9"]) == EXIT_OK
        out = capsys.readouterr().out
        printed = float(out.split("[[")[1].split("]]")[0])
        assert printed == pytest.approx(scalar_riccati_root(1, 1, 1, 1, 0.9), abs=1e-10)

    def test_zero_state_cost(self, capsys):
        assert main(["riccati", "--set", "env.Qc=0"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "P =\n[[0.]]" in out and "residual = 0.000e+00" in out


class TestCheck:
    def test_empty_selection(self, capsys):
        assert main(["check", "--suites", ""]) == EXIT_OK
        assert "0 suites" in capsys.readouterr().out

    def test_selected_suites_pass(self, capsys):
        assert main(["check", "--suites", "schedule,riccati"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "2 suites" in out and "FAIL" not in out

    def test_corrupted_backprop_is_caught(self, monkeypatch, capsys):
        real = checks.mlp_backward

        def broken(params, cache, upstream):
            grads, dx = real(params, cache, upstream)
            return grads.map(lambda g: g * 1.01), dx

        monkeypatch.setattr(checks, "mlp_backward", broken)
        assert main(["check", "--suites", "gradient"]) == EXIT_PROPERTY
        assert "first failing property: gradient_check[actor]" in capsys.readouterr().out

    def test_unknown_suite(self):
        assert main(["check", "--suites", "vibes"]) == EXIT_CONFIG


def test_fmt_round_trips():
    for x in (0.1, 1 / 3, 1e-300, 2.0**60, np.float64(7.25)):
        assert float(fmt(x)) == x
    assert fmt(np.int64(3)) == "3" and fmt("a") == "a"


def test_sample_std_note(tmp_path):
    args = ["train", *SMOKE, "--set", "experiment.std_ddof=1", "--set", "experiment.save_checkpoints=no"]
    assert main([*args, "-o", str(tmp_path)]) == EXIT_OK
    assert "sample standard deviation (ddof=1)" in (tmp_path / "metrics.csv").read_text()
    assert not (tmp_path / "checkpoints").exists()
    assert main(["train", *SMOKE, "--set", "experiment.std_ddof=2", "-o", str(tmp_path)]) == EXIT_CONFIG
