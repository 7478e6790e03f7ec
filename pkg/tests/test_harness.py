import csv
import json
import os

import jsonschema
import pytest

from obslab.harness import cli
from obslab.harness.config import ConfigError, load_config
from obslab.harness import runner
from obslab.harness.report import DELTA_COLUMNS, SPECTRA_COLUMNS
from obslab.sparsela import SolverError

SMALL = {
    "schema": 1,
    "name": "tiny_neu",
    "scenario": "neu_fade",
    "m": 2,
    "eps": [0.125, 0.09375, 0.0625],
    "eta": {"values": [0.25, 0.25, 0.25]},
    "grid": {"n": 128},
    "spectra": {"count": 6},
    "heat_times": [0.1],
    "checks": {"delta_decreasing": True},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    path = write_config(tmp, SMALL)
    out = tmp / "out"
    code = cli.main(["run", "--config", path, "--out", str(out)])
    return code, out, path


def test_run_exits_zero_and_writes_files(small_run):
    code, out, _ = small_run
    assert code == 0
    assert sorted(os.listdir(out)) == ["deltas.csv", "plots.gp", "report.json", "spectra.csv"]


def test_csv_shapes(small_run):
    _, out, _ = small_run
    with open(out / "deltas.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == DELTA_COLUMNS
    assert len(rows) == 1 + len(SMALL["eps"])
    with open(out / "spectra.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == SPECTRA_COLUMNS
    assert len(rows) == 1 + 6 * len(SMALL["eps"])


def test_report_matches_schema(small_run):
    from importlib import resources

    _, out, _ = small_run
    schema = json.loads(resources.files("obslab").joinpath("schemas/report.schema.json").read_text())
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, schema)
    names = {c["name"] for c in report["checks"]}
    assert {"adjoint_identity", "composition_identity", "resolvent_certified",
            "delta_decreasing"} <= names


def test_rerun_is_byte_identical(small_run, tmp_path):
    _, out, path = small_run
    again = tmp_path / "again"
    assert cli.main(["run", "--config", path, "--out", str(again)]) == 0
    for name in ("deltas.csv", "spectra.csv"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


@pytest.mark.parametrize("patch, field", [
    ({"m": 4}, "m"),
    ({"eps": [0.1, 0.2, 0.05]}, "eps/1"),
    ({"eta": {"values": [0.25]}}, "eta/values"),
    ({"grid": {"n": 2}}, "grid/n"),
    ({"scenario": "dir_solid", "solid": {"shape": "box", "lo": [0.2, 0.2], "hi": [0.8, 0.8]},
      "eta": {"alpha": 0.5}, "gamma": 0.3}, "gamma"),
])
def test_config_errors_name_the_field(tmp_path, capsys, patch, field):
    cfg = dict(SMALL, **patch)
    code = cli.main(["run", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert field in capsys.readouterr().err


def test_gamma_window_accepts_inside():
    cfg = dict(SMALL, scenario="dir_solid", eta={"alpha": 1.0, "scale": 2.0}, gamma=0.5,
               solid={"shape": "box", "lo": [0.25, 0.25], "hi": [0.75, 0.75]})
    assert load_config(cfg)["gamma"] == 0.5
    with pytest.raises(ConfigError, match="gamma"):
        load_config(dict(cfg, gamma=0.4))


def test_invalid_json_is_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_rates_command_flips_at_one_third(capsys):
    assert cli.main(["rates", "--m", "3", "--alpha", "0.30:0.36:0.01"]) == 0
    lines = capsys.readouterr().out.splitlines()[1:]
    regime = {float(l.split()[0]): l.split()[1] for l in lines}
    assert regime[0.33] == "fading" and regime[0.34] == "solidifying"
    assert cli.main(["rates", "--m", "3", "--alpha", str(1 / 3)]) == 0
    assert "critical" in capsys.readouterr().out


def test_sweep_and_thread_override(tmp_path, monkeypatch):
    cfg_a = dict(SMALL, name="a", eps=[0.125], eta={"values": [0.25]}, checks={})
    cfg_b = dict(cfg_a, name="b")
    d = tmp_path / "cfgs"
    d.mkdir()
    write_config(d, cfg_a, "a.json")
    write_config(d, cfg_b, "b.json")
    monkeypatch.setenv("OBSLAB_THREADS", "1")
    assert cli.thread_count(4) == 1
    assert cli.main(["sweep", "--config", str(d), "--out", str(tmp_path / "o")]) == 0
    assert sorted(os.listdir(tmp_path / "o")) == ["a", "b"]
    monkeypatch.setenv("OBSLAB_THREADS", "many")
    with pytest.raises(ConfigError, match="OBSLAB_THREADS"):
        cli.thread_count(1)


def test_sweep_rejects_duplicate_names(tmp_path):
    a = write_config(tmp_path, dict(SMALL, eps=[0.125], eta={"values": [0.25]}), "a.json")
    b = write_config(tmp_path, dict(SMALL, eps=[0.125], eta={"values": [0.25]}), "b.json")
    assert cli.main(["sweep", "--config", a, b, "--out", str(tmp_path / "o")]) == 2


def test_solver_failure_exits_three(tmp_path, monkeypatch):
    real = runner.run_one

    def failing(cfg, i, n):
        if i == 1:
            raise SolverError("cg: residual 1e-3 after 10 iterations")
        return real(cfg, i, n)

    monkeypatch.setattr(runner, "run_one", failing)
    out = tmp_path / "o"
    code = cli.main(["run", "--config", write_config(tmp_path, SMALL), "--out", str(out)])
    assert code == 3
    report = json.loads((out / "report.json").read_text())
    assert report["results"][1]["error"]["kind"] == "solver"
    rate = [c for c in report["checks"] if c["name"] == "delta_decreasing"]
    assert rate and not rate[0]["passed"]
