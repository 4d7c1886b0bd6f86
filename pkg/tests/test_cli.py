import json

import pytest

from otpto.cli import EXIT_INVALID, EXIT_LIMIT, EXIT_OK, main

CONFIG = {
    "gen": {"n_skus": 20, "n_days": 20, "orders_per_day_mean": 20.0, "seed": 2},
    "warehouse": {"K": 5, "N": 50, "B": 2, "T": 7},
    "pm1": {"n_estimators": 30, "early_stopping_rounds": 10},
    "pm2": {"n_estimators": 30, "early_stopping_rounds": 10},
    "label_solver": {"node_limit": 2000},
    "opt_solver": {"node_limit": 2000},
    "train_days": None,
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIG))
    return str(path)


def test_stagewise_commands(tmp_path, config, capsys):
    out = str(tmp_path / "out")
    base = ["--config", config, "--out", out]
    assert main(["gen", *base]) == EXIT_OK
    assert main(["index", *base]) == EXIT_OK
    assert main(["label", *base]) == EXIT_OK
    assert main(["features", *base]) == EXIT_OK
    assert main(["train", *base]) == EXIT_OK
    assert main(["plan", "--algo", "otpto", *base]) == EXIT_OK
    assert main(["plan", "--algo", "pto", *base]) == EXIT_OK
    assert main(["eval", *base]) == EXIT_OK
    header = (tmp_path / "out" / "eval.csv").read_text().splitlines()[0]
    assert header == "Date,Ord qtty,OTPTO,PTO,OPT,Diff"
    assert "OTPTO" in capsys.readouterr().out


def test_pipeline_command_writes_report(tmp_path, config):
    out = tmp_path / "p"
    assert main(["pipeline", "--config", config, "--out", str(out)]) == EXIT_OK
    assert (out / "report.md").exists() and (out / "report.csv").exists()


def test_solver_limit_exit_code(tmp_path):
    cfg = dict(CONFIG, label_solver={"node_limit": 0}, opt_solver={"node_limit": 0})
    cfg["warehouse"] = {"K": 3, "N": 20, "B": 2, "T": 7}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code = main(["pipeline", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code in (EXIT_OK, EXIT_LIMIT)
    summary = json.loads((tmp_path / "o" / "report_summary.json").read_text())
    limited = summary["label_days_flagged"] + summary["opt_days_bound"]
    assert code == (EXIT_LIMIT if limited else EXIT_OK)


def test_validation_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "orders.csv"
    bad.write_text("date,order_id,sku_id,quantity,unit_price\n2024-01-01,o,A,0,1.0\n")
    assert main(["index", "--orders", str(bad), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "error" in capsys.readouterr().err
    assert main(["features", "--out", str(tmp_path / "empty")]) == EXIT_INVALID
    assert main(["ablation", "--groups", "A9", "--out", str(tmp_path)]) == EXIT_INVALID


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 2
