import datetime as dt

import pytest

from robust_v2g.config import Config, ConfigError, build_config, config_hash, load_config


def test_defaults():
    cfg = load_config()
    assert cfg == Config()
    assert cfg.nominal.y_star == 27.0
    assert cfg.penalty.mode == "financial"
    assert len(cfg.digest) == 12


def test_full_file(tmp_path):
    (tmp_path / "hol.txt").write_text("2019-01-01\n")
    (tmp_path / "types.csv").write_text("date,type\n2019-01-08,high\n")
    (tmp_path / "c.yaml").write_text(
        """
seed: 5
variant: unidirectional
nominal: {y_max: 50.0, ybar_plus: 3.0}
driving:
  mileage_km: 12000
  windows:
    - {weekdays: [0, 1], start: "07:00", end: "08:30"}
tariff:
  peak_start: "07:00"
  day_types: types.csv
holidays: hol.txt
penalty: {mode: exclusion, k_pen: 3}
synthetic: {days: 4, start: 2019-02-04}
solver: {method: primal}
calibration: {workers: 2, p_star_values: [0.1, 0.2], y_star_fracs: [0.5]}
verify: {k_cap: 16}
sweep: {days: 3}
"""
    )
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.seed == 5 and cfg.synthetic.seed == 5 and cfg.synthetic.days == 4
    assert cfg.synthetic.start == dt.date(2019, 2, 4)
    assert cfg.nominal.y_max == 50.0 and cfg.nominal.ybar_plus == 3.0
    assert cfg.driving.windows[0].end == 8.5 and cfg.driving.mileage_km == 12000
    assert dt.date(2019, 1, 1) in cfg.driving.holidays and dt.date(2019, 1, 1) in cfg.tariff.holidays
    assert cfg.tariff.day_type(dt.date(2019, 1, 8)) == "high" and cfg.tariff.peak_start == 7.0
    assert cfg.penalty.mode == "exclusion" and cfg.penalty.k_pen == 3
    assert cfg.solver.method == "primal"
    assert cfg.workers == 2 and cfg.calibration.p_star_values == (0.1, 0.2)
    assert cfg.verify.k_cap == 16 and cfg.sweep_days == 3
    assert cfg.digest != Config().digest


@pytest.mark.parametrize(
    "raw, match",
    [
        ({"colour": 1}, "unknown top-level"),
        ({"nominal": {"battery": 3}}, "unknown keys"),
        ({"seed": -1}, "seed"),
        ({"seed": "x"}, "seed"),
        ({"backend": "gurobi"}, "backend"),
        ({"variant": "greedy"}, "variant"),
        ({"nominal": {"y_min": 50.0}}, "nominal"),
        ({"penalty": {"mode": "jail"}}, "penalty"),
        ({"calibration": {"workers": 0}}, "workers"),
        ({"sweep": {"days": 0}}, "sweep.days"),
        ({"sweep": {"axes": []}}, "sweep"),
        ({"driving": {"windows": [{"weekdays": [0], "start": "9:00"}]}}, "driving window"),
        ({"tariff": {"day_types": {"2019-01-13": "medium"}}}, "Sundays"),
        ({"holidays": 3}, "holidays"),
        ({"synthetic": {"start": "yesterday"}}, "ISO date"),
        ({"nominal": []}, "mapping"),
    ],
)
def test_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        build_config(raw)


def test_bad_yaml_and_missing_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: [1,\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")


def test_hash_stable_and_seed_override():
    a, b = build_config({"seed": 3}), build_config({"seed": 3})
    assert config_hash(a) == config_hash(b)
    assert a.with_seed(4).synthetic.seed == 4
    assert config_hash(a.with_seed(4)) != config_hash(a)


def test_empty_file_is_nominal(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    assert load_config(p) == Config()
