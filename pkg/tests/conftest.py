import csv
from pathlib import Path

import numpy as np

from paac_rl.bench import EvalMatrix

FIXTURES = Path(__file__).parent / "fixtures"

# (criterion number, title, passed, detail) appended by test_acceptance.py
ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    ACCEPTANCE_LINES.append((number, title, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {status}  {title}: {detail}")


def load_metric_fixtures():
    """``{name: (EvalMatrix, steps)}`` from the committed long-format CSV."""
    with (FIXTURES / "metrics_2x2x2.csv").open() as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    out = {}
    for name in sorted({r["matrix"] for r in rows}):
        v = np.zeros((2, 2, 2))
        steps = [0, 0]
        for r in rows:
            if r["matrix"] == name:
                v[int(r["trial"]), int(r["eval"]), int(r["seed"])] = float(r["cost"])
                steps[int(r["eval"])] = int(r["step"])
        out[name] = (EvalMatrix(v), steps)
    return out


def load_metric_expectations():
    with (FIXTURES / "metrics_2x2x2_expected.csv").open() as fh:
        return {r["matrix"]: {k: float(v) for k, v in r.items() if k != "matrix"} for r in csv.DictReader(fh)}
