import json
import logging

import pytest

from cli import main


@pytest.fixture(autouse=True)
def _restore_logging(output_root):
    root = logging.getLogger()
    saved = list(root.handlers)
    level = root.level
    yield
    for h in list(root.handlers):
        if h not in saved:
            root.removeHandler(h)
            h.close()
    for h in saved:
        if h not in root.handlers:
            root.addHandler(h)
    root.setLevel(level)


def test_oracle_prints_values(capsys):
    assert main(["oracle", "split_weak_norm"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out == {"b": 1.0, "oracle": "split_weak_norm", "weak_norm": 0.5}


def test_unknown_oracle_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["oracle", "nope"])
    assert exc.value.code == 2


def test_validate_builtin(capsys):
    assert main(["validate", "builtin:interval_convex"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "valid"
    assert out["config"]["time"]["n_steps"] == 200


def test_validate_reports_field_and_line(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text('name = "bad"\nworkflow = "cauchy"\ntime.b = -1\ntime.n_steps = 10\nop.kind = "scalar_linear"\n')
    assert main(["validate", str(path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error_type"] == "config_error"
    assert err["field"] == "time.b"
    assert err["line"] == 3


def test_solve_writes_artifacts(tmp_path, capsys):
    out_dir = tmp_path / "decay"
    assert main(["solve", "builtin:scalar_decay", "--out", str(out_dir)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["status"] == "ok"
    assert "trajectory.csv" in summary["files"]
    assert (out_dir / "report.json").exists()
    assert (tmp_path / "logs" / "app.log").exists()


def test_solve_batch_uses_output_root(output_root, capsys):
    code = main(["solve", "builtin:scalar_decay", "builtin:interval_convex", "--jobs", "2"])
    assert code == 0
    summaries = json.loads(capsys.readouterr().out)
    assert [s["scenario"] for s in summaries] == ["scalar_decay", "interval_convex"]
    assert (output_root / "scalar_decay" / "trajectory.csv").exists()
    assert (output_root / "interval_convex" / "trajectory.csv").exists()


def test_solve_batch_rejects_duplicate_names(capsys):
    assert main(["solve", "builtin:scalar_decay", "builtin:scalar_decay"]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "name"


def test_solve_failure_exit_code(tmp_path, capsys):
    path = tmp_path / "short.cfg"
    path.write_text(
        'name = "short"\nworkflow = "periodic_fixed_h"\nseed = 1\ntime.b = 1\ntime.n_steps = 20\n'
        'op.kind = "scalar_linear"\nop.strong_monotonicity_c0 = 1\nforcing.kind = "constant"\nforcing.amplitude = 1\nsolver.poincare_max = 1\n'
    )
    assert main(["solve", str(path), "--out", str(tmp_path / "out")]) == 1
    assert json.loads(capsys.readouterr().out)["status"] == "failed"
    assert (tmp_path / "out" / "failure.json").exists()


def test_jobs_must_be_positive(capsys):
    assert main(["solve", "builtin:scalar_decay", "--jobs", "0"]) == 2
