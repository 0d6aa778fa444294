import json
import math
from pathlib import Path

import pytest

from branchlab.cli import run
from branchlab.config import ConfigError, from_dict, load, terminal_function

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

STILL = """
seed = 4
replications = 20
[scenario]
kind = "custom-tabular"
sigma = [[0.0]]
[initial]
atoms = [[1.0], [1.0], [-2.0]]
[simulation]
horizon = 1.0
dt_max = 0.1
output_grid = [0.5]
"""

BRANCHING = """
seed = 5
replications = {reps}
[scenario]
kind = "custom-tabular"
sigma = [[1.0]]
gamma = 1.0
probs = [0.3, 0.2, 0.5]
{extra}
[simulation]
horizon = 1.0
dt_max = 0.01
max_population = {cap}
[martingale]
checkpoints = [0.5]
"""


def write(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def artifact(tmp_path, name="out.json"):
    return json.loads((tmp_path / name).read_text())


def test_simulate_still_population(tmp_path):
    cfg = write(tmp_path, STILL)
    assert run(["simulate", cfg, "--workspace", str(tmp_path), "--out", "out.json", "--csv", "out.csv"]) == 0
    art = artifact(tmp_path)
    assert art["command"] == "simulate" and art["seed"] == 4 and art["verdict"] == "pass"
    path = art["result"]["path"]
    assert sorted(p["position"] for p in path["terminal"]["particles"]) == [[-2.0], [1.0], [1.0]]
    assert path["events"] == []
    assert (tmp_path / "out.csv").read_text().splitlines()[0] == "time,label,x0"


def test_lq_solve_tanh(tmp_path):
    assert run(["lq-solve", str(CONFIGS / "riccati_tanh.toml"), "--workspace", str(tmp_path)]) == 0
    rows = (tmp_path / "out" / "riccati_tanh.csv").read_text().splitlines()
    assert rows[0].split(",")[:2] == ["t", "Q00"]
    assert abs(float(rows[1].split(",")[1]) - math.tanh(1)) < 1e-6
    res = json.loads((tmp_path / "out" / "riccati_tanh.json").read_text())["result"]
    assert res["Q_psd"] is True


@pytest.mark.slow
def test_compare_lq_optimal_with_zero(tmp_path):
    text = (CONFIGS / "lq_scalar.toml").read_text().replace("replications = 10000", "replications = 2000")
    text = text.replace("dt_max = 0.001", "dt_max = 0.01")
    assert run(["compare", write(tmp_path, text), "--workspace", str(tmp_path), "--out", "c.json"]) == 0
    diff = artifact(tmp_path, "c.json")["result"]["comparison"]["difference"]
    assert diff["mean"] < 0 and abs(diff["mean"]) > 3 * diff["standard_error"]


@pytest.mark.parametrize(
    "text",
    [
        STILL.replace("seed = 4", ""),
        STILL + "\n[nonsense]\nx = 1\n",
        STILL.replace('sigma = [[0.0]]', 'sigma = [[0.0]]\nprobs = [0.5, 0.6]'),
        STILL.replace('kind = "custom-tabular"', 'kind = "quantum"'),
        "seed = 1\n[scenario\n",
    ],
)
def test_config_errors_exit_2(tmp_path, text, capsys):
    assert run(["simulate", write(tmp_path, text), "--workspace", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_absolute_output_path_rejected(tmp_path):
    assert run(["simulate", write(tmp_path, STILL), "--out", str(tmp_path / "x.json")]) == 2


def test_missing_config_file(tmp_path):
    assert run(["simulate", str(tmp_path / "nope.toml")]) == 2


def test_explosion_exits_3(tmp_path, capsys):
    text = BRANCHING.format(reps=10, extra="", cap=3).replace("probs = [0.3, 0.2, 0.5]", "probs = [0.0, 0.0, 1.0]").replace("gamma = 1.0", "gamma = 5.0")
    assert run(["simulate", write(tmp_path, text), "--workspace", str(tmp_path)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_failed_bound_exits_4(tmp_path):
    extra = "[scenario.bounds]\nC1_Phi = 0.0\nC2_Phi = 0.0"
    text = BRANCHING.format(reps=500, extra=extra, cap=10_000)
    assert run(["moments", write(tmp_path, text), "--workspace", str(tmp_path), "--out", "m.json"]) == 4
    assert artifact(tmp_path, "m.json")["verdict"] == "fail"


def test_output_is_byte_identical_across_runs_and_threads(tmp_path):
    cfg = write(tmp_path, BRANCHING.format(reps=4500, extra="", cap=10_000))
    outs = []
    for i, threads in enumerate(("1", "8", "1")):
        assert run(["martingale-test", cfg, "--workspace", str(tmp_path), "--threads", threads, "--out", f"{i}.json", "--csv", f"{i}.csv"]) in (0, 4)
        outs.append(((tmp_path / f"{i}.json").read_bytes(), (tmp_path / f"{i}.csv").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_workspace_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BRANCHLAB_WORKSPACE", str(tmp_path))
    assert run(["estimate-cost", write(tmp_path, STILL), "--out", "e.json"]) == 0
    assert artifact(tmp_path, "e.json")["result"]["estimate"]["mean"] == 0.0


def test_stdout_when_no_output_configured(tmp_path, capsys):
    assert run(["estimate-cost", write(tmp_path, STILL), "--workspace", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["tool"] == "branchlab"


def test_threads_must_be_positive(tmp_path):
    assert run(["simulate", write(tmp_path, STILL), "--threads", "0"]) == 2


def test_resolved_config_holds_defaults(tmp_path):
    cfg = load(write(tmp_path, STILL), tmp_path)
    assert cfg.resolved["martingale"]["threshold"] == 4.0
    assert cfg.initial.mass == 3 and cfg.t0 == 0.0


def test_config_error_names_field():
    with pytest.raises(ConfigError, match=r"^simulation"):
        from_dict({"seed": 1, "scenario": {"kind": "custom-tabular"}, "simulation": {"dt_max": -1.0}})
    with pytest.raises(ConfigError, match=r"^policy.name"):
        from_dict({"seed": 1, "scenario": {"kind": "custom-tabular"}}).policy("lq-magic")


def test_terminal_functions():
    import numpy as np

    x = np.array([[0.0], [2.0]])
    assert terminal_function("quadratic:0.5")(x).tolist() == [0.0, 2.0]
    assert terminal_function("constant:3")(x).tolist() == [3.0, 3.0]
    with pytest.raises(ValueError):
        terminal_function("spiral")


def test_sample_configs_load():
    for p in sorted(CONFIGS.glob("*.toml")):
        cfg = load(p)
        assert cfg.replications >= 2, p
