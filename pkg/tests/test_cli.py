import csv
import io
import json
import subprocess
import sys

import pytest

from conftest import small_scenario
from seeuav.cli import main


@pytest.fixture(scope="module")
def scenario_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scn") / "scenario.json"
    path.write_text(small_scenario(period=20.0, delta=1.0).to_json())
    return path


@pytest.fixture(scope="module")
def run_dir(scenario_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["optimize", "--scenario", str(scenario_file), "--scheme", "circular", "--max-iter", "2",
                 "--see-units", "bits-per-joule", "--out", str(out)])
    assert code == 0
    return out


def test_optimize_writes_every_output(run_dir):
    for name in ("run.json", "trajectory.csv", "power.csv", "schedule.csv", "rates.csv"):
        assert (run_dir / name).stat().st_size > 0
    doc = json.loads((run_dir / "run.json").read_text())
    assert doc["status"] == "ok"
    assert set(doc["versions"]) >= {"seeuav", "python", "numpy", "scipy"}
    assert doc["config"]["options"]["scheme"] == "circular"
    assert doc["metrics"]["see_units"] == "bits-per-joule"
    assert doc["trace"]["iterations"]
    assert doc["feasibility"] == []


def test_csv_headers(run_dir):
    head = lambda n: (run_dir / n).read_text().splitlines()[0]
    assert head("trajectory.csv") == "uav_id,slot,qx,qy,vx,vy,ax,ay"
    assert head("power.csv") == "uav_id,slot,watts"
    rows = list(csv.DictReader(io.StringIO((run_dir / "power.csv").read_text())))
    assert len(rows) == 2 * 20


def test_eval_reproduces_run_metrics(run_dir, scenario_file, capsys):
    capsys.readouterr()
    code = main(["eval", "--scenario", str(scenario_file), "--trajectory", str(run_dir / "trajectory.csv"),
                 "--power", str(run_dir / "power.csv"), "--schedule", str(run_dir / "schedule.csv"),
                 "--see-units", "bits-per-joule"])
    assert code == 0
    got = json.loads(capsys.readouterr().out)
    want = json.loads((run_dir / "run.json").read_text())["metrics"]
    assert got["feasible"]
    assert got["see"] == pytest.approx(want["see"], rel=1e-9)
    assert got["energy_J"] == pytest.approx(want["energy_J"], rel=1e-9)


def test_validate_accepts_output(run_dir, scenario_file, capsys):
    assert main(["validate", "--scenario", str(scenario_file), "--trajectory", str(run_dir / "trajectory.csv")]) == 0
    assert capsys.readouterr().out.strip().endswith("feasible")


def test_validate_names_violations(run_dir, scenario_file, tmp_path, capsys):
    lines = (run_dir / "trajectory.csv").read_text().splitlines()
    fields = lines[5].split(",")
    fields[4] = "500"                               # vx far above the speed limit
    lines[5] = ",".join(fields)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--scenario", str(scenario_file), "--trajectory", str(bad)]) == 1
    out = capsys.readouterr().out
    assert "speed" in out and "violation" in out


def test_sweep_table(scenario_file, tmp_path, capsys):
    capsys.readouterr()
    code = main(["sweep", "--scenario", str(scenario_file), "--periods", "20,24", "--schemes", "circular",
                 "--slots", "20", "--max-iter", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [float(r["period_s"]) for r in rows] == [20.0, 24.0]
    assert (tmp_path / "sweep.csv").exists() and (tmp_path / "run.json").exists()


def test_dump_programs_flag(scenario_file, tmp_path):
    dump = tmp_path / "programs"
    main(["optimize", "--scenario", str(scenario_file), "--scheme", "circular", "--max-iter", "1",
          "--out", str(tmp_path / "o"), "--dump-programs", str(dump)])
    assert any(dump.iterdir())


def test_bad_scenario_exits_with_message(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"legit_users": [[0, 0]], "eavesdroppers": [], "suav_count": 0}))
    assert main(["optimize", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_file_exits_with_message(tmp_path, capsys):
    assert main(["validate", "--scenario", str(tmp_path / "none.json"), "--trajectory", "x.csv"]) == 2
    assert "error" in capsys.readouterr().err


def test_parser_rejects_unknown_scheme(scenario_file):
    with pytest.raises(SystemExit):
        main(["optimize", "--scenario", str(scenario_file), "--scheme", "fastest"])


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "seeuav.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("optimize", "sweep", "eval", "validate"):
        assert cmd in out.stdout
