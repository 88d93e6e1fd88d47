import glob
import os

import pandas as pd
import pytest

from cli import (
    EXIT_ASSUMPTION,
    EXIT_CONFIGURATION,
    EXIT_OK,
    EXIT_REPORT,
    analyze_rows,
    exit_code_for,
    load_config,
    main,
    parse_config_text,
    parse_overrides,
)
from config import Settings
from envs import resolve_config
from errors import (
    AggregationError,
    AssumptionViolation,
    ConfigurationError,
    DivergenceError,
    ReportError,
    UnsupportedAnalysisError,
)
from harness import read_records
from schemas import ExperimentConfig


def test_parse_config_text_skips_comments_and_blanks():
    values = parse_config_text("# header\n\nenv = w2w  # trailing\nn=4\n")
    assert values == {"env": "w2w", "n": "4"}


def test_parse_config_text_rejects_duplicates_and_bare_lines():
    with pytest.raises(ConfigurationError, match="duplicate"):
        parse_config_text("n=1\nn=2\n")
    with pytest.raises(ConfigurationError, match=":2:"):
        parse_config_text("env=w2w\nno separator here\n")


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("env=w2w\nn=2\n", encoding="utf-8")
    config = load_config(str(path), ["n=5", "seeds=1"], n_list="1,3")
    assert (config.n, config.seeds, config.n_list) == (5, 1, [1, 3])
    with pytest.raises(ConfigurationError):
        parse_overrides(["n"])


def test_missing_config_file_is_a_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / "absent.cfg"))


def test_exit_codes_by_error_family():
    assert exit_code_for(ConfigurationError("x")) == 2
    assert exit_code_for(UnsupportedAnalysisError("x")) == 2
    assert exit_code_for(AssumptionViolation("x")) == 3
    assert exit_code_for(ReportError("x")) == 4
    assert exit_code_for(AggregationError("x")) == 4
    assert exit_code_for(DivergenceError(3)) == 1


def test_every_shipped_config_validates(repo_root):
    paths = sorted(glob.glob(os.path.join("configs", "*.cfg")))
    assert len(paths) == 7
    for path in paths:
        config = resolve_config(load_config(path))
        assert config.gamma is not None
        assert config.total_steps is not None


@pytest.mark.parametrize(
    "fixture, expected",
    [
        ("unknown_key.cfg", EXIT_CONFIGURATION),
        ("iid_on_cartpole.cfg", EXIT_CONFIGURATION),
        ("malformed_line.cfg", EXIT_CONFIGURATION),
        ("singular_features.cfg", EXIT_ASSUMPTION),
    ],
)
def test_invalid_configs_exit_with_distinct_codes(repo_root, fixture, expected):
    assert main(["analyze", "--config", os.path.join("tests", "fixtures", fixture)]) == expected


def test_diagnostics_name_the_problem(repo_root, caplog):
    main(["analyze", "--config", os.path.join("tests", "fixtures", "unknown_key.cfg")])
    assert "learning_rate" in caplog.text
    caplog.clear()
    main(["analyze", "--config", os.path.join("tests", "fixtures", "iid_on_cartpole.cfg")])
    assert "iid_mu" in caplog.text


def test_invalid_settings_exit_with_configuration_code(monkeypatch):
    monkeypatch.setenv("MBQ_LOG_LEVEL", "chatty")
    assert main(["report", "missing.csv"]) == EXIT_CONFIGURATION


def test_analyze_w2w_fixed_points_are_zero(repo_root, tmp_path, capsys):
    out = tmp_path / "analysis.csv"
    code = main(["analyze", "--config", "configs/w2w.cfg", "--n-list", "1,2,4", "--out", str(out)])
    assert code == EXIT_OK
    assert "lambda_n" in capsys.readouterr().out
    frame = pd.read_csv(out, dtype={"n": str})
    assert list(frame.columns) == ["n", "quantity", "value"]
    weights = frame[frame["quantity"] == "fixed_point_w0"]
    assert weights["n"].tolist() == ["1", "2", "4"]
    assert (weights["value"].abs() < 1e-12).all()
    assert (frame[frame["quantity"] == "fixed_point_converged"]["value"] == 1.0).all()


def test_analyze_reports_w2w_threshold():
    rows = analyze_rows(ExperimentConfig(env="w2w", n_list=[12], num_pairs=20, num_probes=10), Settings())
    values = {quantity: value for n, quantity, value in rows.itertuples(index=False) if n == "12"}
    assert values["lambda_n"] == pytest.approx(3.2 * 0.9**12)
    assert values["lambda_n"] == pytest.approx(0.904, abs=1e-3)
    assert values["threshold_n"] == 12.0
    assert values["error_lhs"] <= values["error_rhs"] + 1e-9


def test_analyze_rejects_control_envs(repo_root):
    assert main(["analyze", "--config", "configs/cartpole.cfg"]) == EXIT_CONFIGURATION


def test_learn_then_report(repo_root, tmp_path, capsys):
    out = tmp_path / "w2w.csv"
    code = main(
        [
            "learn",
            "--config", "configs/w2w.cfg",
            "--set", "n=1",
            "--set", "lr=0.05",
            "--set", "total_steps=3000",
            "--set", "seeds=2",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    assert out.read_text().splitlines()[0] == "seed,step,metric,value"
    records = read_records([out])[None]
    assert [record.seed for record in records] == [0, 1]
    assert all(record.status == "divergent" for record in records)

    summary_path = tmp_path / "summary.csv"
    assert main(["report", str(out), "--out", str(summary_path)]) == EXIT_OK
    assert "weight_norm" in capsys.readouterr().out
    assert (tmp_path / "summary.curves.csv").exists()


def test_learn_needs_an_output_path(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("env=w2w\ntotal_steps=10\n", encoding="utf-8")
    assert main(["learn", "--config", str(path)]) == EXIT_CONFIGURATION


def test_sweep_tags_rows_with_depth(repo_root, tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(
        [
            "sweep",
            "--config", "configs/w2w.cfg",
            "--n-list", "1,2",
            "--set", "total_steps=200",
            "--set", "seeds=1",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    assert out.read_text().splitlines()[0] == "n,seed,step,metric,value"
    assert sorted(read_records([out])) == [1, 2]


def test_sweep_needs_depths(repo_root, tmp_path):
    args = ["sweep", "--config", "configs/w2w.cfg", "--n-list", "", "--out", str(tmp_path / "s.csv")]
    assert main(args) == EXIT_CONFIGURATION
    path = tmp_path / "no_list.cfg"
    path.write_text("env=w2w\n", encoding="utf-8")
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "t.csv")]) == EXIT_CONFIGURATION


def test_report_rejects_mixed_schemas(tmp_path):
    plain = tmp_path / "plain.csv"
    plain.write_text("seed,step,metric,value\n0,10,weight_norm,1\n", encoding="utf-8")
    tagged = tmp_path / "tagged.csv"
    tagged.write_text("n,seed,step,metric,value\n2,0,10,weight_norm,1\n", encoding="utf-8")
    assert main(["report", str(plain), str(tagged)]) == EXIT_REPORT
