import json
from importlib import resources

import pytest
import yaml

from quinticbose.cli import main


def test_invalid_config(tmp_path, capsys):
    code = main(["--experiment", "gap", "--grid-n", "7", "--out", str(tmp_path)])
    assert code == 2
    rep = json.loads(capsys.readouterr().out)
    assert rep["status"] == "invalid_config" and rep["errors"]


def test_missing_experiment(capsys):
    assert main([]) == 2


def test_pairing_user_instance(tmp_path, capsys):
    code = main(["--experiment", "pairing", "--pairing-H", "2", "--pairing-K", "1",
                 "--P", "60", "--out", str(tmp_path)])
    assert code == 0
    s = json.loads((tmp_path / "pairing_summary.json").read_text())
    assert s["passed"] and s["status"] == "ok"
    assert s["info"]["min_eigenvalue"] >= -1e-8
    assert abs(s["info"]["ground_energy"] - (-0.1339746)) < 1e-4
    assert "PASS" in capsys.readouterr().out


def test_gap_zero_amplitude(tmp_path):
    code = main(["--experiment", "gap", "--grid-n", "8", "--amplitude", "0", "--N-list", "4", "16",
                 "--t-final", "0.05", "--dt", "0.01", "--out", str(tmp_path)])
    assert code == 0
    s = json.loads((tmp_path / "gap_summary.json").read_text())
    assert s["info"]["slope_trivially_passing"]


def test_deterministic_output_and_yaml(tmp_path):
    cfg = {"experiment": "bogoliubov", "grid": {"grid_n": 8}, "fock": {"M_modes": 4},
           "time": {"t_final": 0.1, "dt": 0.01}, "seed": 3}
    f = tmp_path / "c.yaml"
    f.write_text(yaml.safe_dump(cfg))
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["--config", str(f), "--out", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
    assert outs[0] and outs[0] == outs[1]


def test_unknown_yaml_field(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("experiment: gap\nbogus: 1\n")
    assert main(["--config", str(f)]) == 2


def test_schema_shipped():
    text = resources.files("quinticbose").joinpath("data/csv_schema.yaml").read_text()
    assert yaml.safe_load(text)["schema_version"] == 1
