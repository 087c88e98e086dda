import numpy as np
import pandas as pd
import pytest

from robust_v2g.cli import apply_sweep_point, main
from robust_v2g.config import Config


def read(path):
    return pd.read_csv(path, comment="#")


def run(tmp_path, *argv, out="out"):
    return main([*argv, "--out", str(tmp_path / out)])


def test_solve_day_outputs(tmp_path):
    assert run(tmp_path, "solve-day", "--no-plots") == 0
    out = tmp_path / "out"
    dec = read(out / "decision.csv")
    assert list(dec.columns) == ["interval", "x_b_kw", "x_r_kw", "m_kw", "z_kwh"]
    assert len(dec) == 48
    assert (dec[["x_b_kw", "x_r_kw"]] >= -1e-9).all().all()
    env = read(out / "envelope.csv")
    assert len(env) == 49 and (env["soc_lo_kwh"] >= 10 - 1e-6).all() and (env["soc_hi_kwh"] <= 40 + 1e-6).all()
    diag = read(out / "diagnostics.csv").set_index("key")["value"]
    assert diag["status"] == "optimal"
    first = (out / "decision.csv").read_text().splitlines()[0]
    assert first.startswith("# robust-v2g 0.1.0 config=") and "seed=2019" in first
    assert not (out / "decision.png").exists()


def test_solve_day_plot_and_determinism(tmp_path):
    assert run(tmp_path, "solve-day", out="a") == 0
    assert run(tmp_path, "solve-day", out="b") == 0
    for name in ("decision.csv", "envelope.csv", "diagnostics.csv", "decision.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_unidirectional_and_no_regulation(tmp_path):
    assert run(tmp_path, "solve-day", "--unidirectional", "--no-plots", out="u") == 0
    dec = read(tmp_path / "u" / "decision.csv")
    assert (dec["x_r_kw"] <= dec["x_b_kw"] + 1e-9).all()
    assert run(tmp_path, "solve-day", "--no-regulation", "--no-plots", out="n") == 0
    assert np.all(read(tmp_path / "n" / "decision.csv")["x_r_kw"] == 0)


def test_solve_day_infeasible_exit_1(tmp_path, capsys):
    # an empty battery behind a 0.1 kW charger cannot cover the morning drive
    (tmp_path / "c.yaml").write_text("nominal: {ybar_plus: 0.1, ybar_minus: 0.1}\n")
    assert run(tmp_path, "solve-day", "--config", str(tmp_path / "c.yaml"), "--y0", "10", "--no-plots") == 1
    assert "infeasible" in capsys.readouterr().err


def test_bad_inputs_exit_2(tmp_path, capsys):
    assert run(tmp_path, "solve-day", "--date", "1999-01-01") == 2
    assert run(tmp_path, "solve-day", "--date", "tomorrow") == 2
    assert run(tmp_path, "solve-day", "--config", str(tmp_path / "none.yaml")) == 2
    assert run(tmp_path, "solve-day", "--seed", "-3") == 2
    assert run(tmp_path, "backtest", "--days", "0") == 2
    (tmp_path / "bad.yaml").write_text("nominal: {foo: 1}\n")
    assert run(tmp_path, "solve-day", "--config", str(tmp_path / "bad.yaml")) == 2
    assert "unknown keys" in capsys.readouterr().err


def test_unknown_flag_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["solve-day", "--frobnicate"])
    assert exc.value.code == 2


def test_backtest(tmp_path):
    assert run(tmp_path, "backtest", "--days", "2", "--variant", "nominal") == 0
    out = tmp_path / "out"
    ledger = read(out / "ledger_nominal.csv")
    assert list(ledger.columns) == ["date", "cost", "revenue", "penalty", "shortfall_kwh", "violations", "soc_end", "excluded", "cum_value"]
    assert len(ledger) == 2
    summ = read(out / "summary.csv")
    assert summ.loc[0, "value_eur"] == pytest.approx(ledger["cum_value"].iloc[-1])
    assert (out / "value.png").exists() and (out / "value_long.csv").exists()


def test_backtest_target_override(tmp_path):
    assert run(tmp_path, "backtest", "--days", "1", "--p-star", "0.2", "--y-star", "30", "--policy", "exclusion", "--no-plots") == 0
    assert run(tmp_path, "backtest", "--days", "1", "--y-star", "99", "--no-plots") == 2


def test_calibrate_small_grid(tmp_path):
    (tmp_path / "c.yaml").write_text("calibration: {p_star_values: [0.15], y_star_fracs: [0.5, 0.6]}\n")
    assert run(tmp_path, "calibrate", "--config", str(tmp_path / "c.yaml"), "--days", "1", "--no-plots") == 0
    table = read(tmp_path / "out" / "calibration.csv")
    assert len(table) == 2
    best = read(tmp_path / "out" / "best.csv")
    assert best.loc[0, "p_star"] == 0.15


def test_verify_quick_and_refusal(tmp_path, capsys):
    assert run(tmp_path, "verify", "--checks", "A5,A6", "--max-k", "12") == 0
    frame = read(tmp_path / "out" / "verify.csv")
    assert list(frame["check_id"]) == ["A5", "A6"] and frame["passed"].all()
    assert "[PASS]" in capsys.readouterr().out
    assert run(tmp_path, "verify", "--max-k", "25") == 2
    assert "refusing" in capsys.readouterr().err
    assert run(tmp_path, "verify", "--checks", "A99") == 2


def test_sweep_single_point(tmp_path):
    assert run(tmp_path, "sweep", "--axis", "charger_kw=3", "--days", "1") == 0
    table = read(tmp_path / "out" / "sweep.csv")
    assert len(table) == 1
    assert {"charger_kw", "value_eur", "planning_value_eur", "violations"} <= set(table.columns)
    assert (tmp_path / "out" / "sweep.png").exists()


def test_sweep_errors(tmp_path):
    assert run(tmp_path, "sweep", "--axis", "charger_kw=") == 2
    assert run(tmp_path, "sweep", "--axis", "colour=1") == 2
    assert run(tmp_path, "sweep") == 2
    assert run(tmp_path, "sweep", "--axis", "k_pen=1", "--axis", "k_pen=2") == 2


def test_apply_sweep_point():
    cfg = apply_sweep_point(Config(), {"charger_kw": 3.0, "battery_kwh": 20.0, "k_pen": 2.0})
    assert cfg.nominal.ybar_plus == 3.0 and cfg.nominal.ybar_minus == 3.0
    assert cfg.nominal.y_max == 20.0 and cfg.nominal.y_star == 20.0
    assert cfg.penalty.k_pen == 2.0


def test_export_lp(tmp_path):
    assert run(tmp_path, "export-lp") == 0
    size = read(tmp_path / "out" / "lp_size.csv")
    assert size.loc[0, "variables"] == 9553 and size.loc[0, "constraints"] == 12244
    text = (tmp_path / "out" / "day.mps").read_text()
    assert text.startswith("NAME") and text.rstrip().endswith("ENDATA")
