import csv
import io
import json
import re
import subprocess
import sys

import pytest

from mdpcores.cli import main
from mdpcores.model import load_model, serialize_model
from mdpcores.generators import build_fig3


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


SUMMARY = re.compile(r"^states=\d+ explored=\d+ exit_upper=\S+ time=\d+\.\d{3}$")


def test_gen_round_trip(tmp_path, capsys):
    path = tmp_path / "fig3.json"
    code, _, _ = run(capsys, "gen", "fig3", "--epsilon", "0.3", "--out", str(path))
    assert code == 0
    mdp = load_model(path)
    assert mdp.num_states == 4
    assert serialize_model(mdp) == serialize_model(build_fig3(0.3))
    code, out, _ = run(capsys, "gen", "fig3", "--epsilon", "0.3")
    assert out.strip() == path.read_text().strip()


def test_gen_knapsack_prints_k(tmp_path, capsys):
    path = tmp_path / "k.json"
    code, out, _ = run(capsys, "gen", "knapsack", "--values", "2,3", "--weights", "1,2",
                       "--v", "2", "--w", "2", "--epsilon", "0.3", "--out", str(path))
    assert code == 0 and out.strip() == "k=3"
    code, out, _ = run(capsys, "learn", "--model",
                       "knapsack:values=2/3,weights=1/2,v=2,w=2,epsilon=0.3", "--epsilon", "0.3")
    assert code == 0 and SUMMARY.match(out.strip().splitlines()[-1])


def test_learn_verify_stability_extrapolate(tmp_path, capsys):
    core = tmp_path / "core.json"
    model = "airplane:size=20,return=1"
    code, out, _ = run(capsys, "learn", "--model", model, "--epsilon", "1e-6", "--out", str(core))
    assert code == 0 and SUMMARY.match(out.strip())
    data = json.loads(core.read_text())
    assert data["verified"] is True and data["model_hash"]
    code, out, _ = run(capsys, "verify", str(core), "--model", model)
    assert code == 0 and out.strip().endswith("verdict=verified")
    # different model: refused
    code, _, err = run(capsys, "verify", str(core), "--model", "airplane:size=21,return=1")
    assert code == 2 and "different model" in err
    csv_path = tmp_path / "stab.csv"
    code, _, _ = run(capsys, "stability", str(core), "--model", model, "--n-max", "50",
                     "--csv", str(csv_path))
    assert code == 0
    rows = list(csv.reader(csv_path.open()))
    assert rows[0] == ["step", "exit"] and len(rows) == 51
    code, out, _ = run(capsys, "extrapolate", str(core), "--model", model, "--targets", "1",
                       "--n-max", "10")
    assert code == 0 and out.splitlines()[0] == "step,lower,upper"
    code, _, err = run(capsys, "stability", str(core), "--model", model)
    assert code == 1 and "--n-max" in err


def test_verify_epsilon_override(tmp_path, capsys):
    core = tmp_path / "core.json"
    model = "fig3:epsilon=0.3"
    code, _, _ = run(capsys, "learn", "--model", model, "--epsilon", "0.4", "--out", str(core))
    assert code == 0
    if json.loads(core.read_text())["verified_exit_upper"] > 0.0:
        code, out, _ = run(capsys, "verify", str(core), "--model", model, "--epsilon", "1e-6")
        assert code == 2 and out.strip().endswith("verdict=rejected")
    code, _, _ = run(capsys, "verify", str(tmp_path / "missing.json"), "--model", model)
    assert code == 1


def test_learn_bounded_and_reach(tmp_path, capsys):
    code, out, _ = run(capsys, "learn-bounded", "--model", "airplane:size=10,return=1",
                       "--epsilon", "1e-6", "--steps", "20", "--store", "dense")
    assert code == 0
    lines = out.strip().splitlines()
    assert json.loads(lines[0])["horizon"] == 20 and SUMMARY.match(lines[1])
    code, out, _ = run(capsys, "reach", "--model", "fig3:epsilon=0.3", "--targets", "2")
    assert code == 0 and out.startswith("lower=0.7")
    code, out, _ = run(capsys, "reach", "--model", "fig3:epsilon=0.3", "--targets", "2",
                       "--steps", "3")
    assert code == 0 and out.strip() == "lower=0.7 upper=0.7"


def test_exit_codes(tmp_path, capsys):
    assert run(capsys, "learn", "--model", "nope.json")[0] == 1
    assert run(capsys, "learn")[0] == 1
    assert run(capsys, "learn-bounded", "--model", "fig3:epsilon=0.3")[0] == 1
    assert run(capsys, "reach", "--model", "fig3:epsilon=0.3")[0] == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"type": "mdp", "states": 1, "initial": 0, "actions": [[{"dist": [[0, 0.5]]}]]}')
    code, _, err = run(capsys, "learn", "--model", str(bad))
    assert code == 1 and "sums to 0.5" in err
    code, _, _ = run(capsys, "learn", "--model", "random:states=3000,seed=1,sinks=0",
                     "--epsilon", "1e-9", "--max-episodes", "2")
    assert code == 3


def test_bench_fig3(tmp_path, capsys):
    path = tmp_path / "bench.csv"
    code, out, _ = run(capsys, "bench", "--model", "fig3:epsilon=0.3", "--epsilon", "0.3",
                       "--heuristics", "weighted,graph-difference", "--repetitions", "2",
                       "--csv", str(path))
    assert code == 0
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 4
    assert all(r["verified"] == "true" for r in rows)
    assert list(rows[0]) == ["model", "heuristic", "horizon", "seed", "core_size",
                             "fraction", "wall_time", "verified"]
    assert out.splitlines()[0].startswith("heuristic,horizon,runs")


def test_console_script_and_logging(tmp_path):
    env_code = subprocess.run(
        [sys.executable, "-m", "mdpcores.cli", "reach", "--model", "fig3:epsilon=0.3",
         "--targets", "2", "--steps", "1"],
        capture_output=True, text=True, env={"CORE_LOG": "debug", "PATH": ""},
    )
    assert env_code.returncode == 0
    assert env_code.stdout.strip() == "lower=0.7 upper=0.7"
