import csv
import json
import shutil

import numpy as np
import pytest

from conftest import CONFIGS
from lwropt.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main

FAST_SOLVER = {"arrival_points": 2000, "departure_cells": 2000, "multistart": 2, "seed": 0,
               "refine": False}


def _write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _example4(**solver):
    data = json.loads((CONFIGS / "example4.json").read_text())
    data["solver"].update(solver)
    return data


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("e4")
    assert main(["solve", "--config", str(CONFIGS / "example4.json"), "--out", str(out),
                 "--threads", "1"]) == EXIT_OK
    return out


def _csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_solve_writes_expected_files(solved):
    for name in ("constants.json", "departures.csv", "arrivals.csv", "trajectories.csv"):
        assert (solved / name).exists()
    head, _ = _csv(solved / "departures.csv")
    assert head == ["t", "u_bar", "u_bar_g1", "u_bar_g2"]
    head, _ = _csv(solved / "arrivals.csv")
    assert head == ["t", "u", "theta_g1", "theta_g2", "active_group"]
    head, _ = _csv(solved / "trajectories.csv")
    assert head == ["arrival_time", "departure_time", "group"]


def test_csv_numbers_use_twelve_significant_digits(solved):
    _, rows = _csv(solved / "departures.csv")
    for row in rows[::97]:
        for tok in row:
            assert tok == f"{float(tok):.12g}"


def test_check_passes_on_solved_plan(solved, capsys):
    assert main(["check", "--out", str(solved)]) == EXIT_OK
    rep = json.loads((solved / "report.json").read_text())
    assert rep["passed"]
    assert set(rep["conditions"]) >= {"mass", "marginal_cost_support", "marginal_cost_off_support",
                                      "shock_scan", "support_condition"}


def test_check_rejects_moved_mass(solved, tmp_path, capsys):
    bad = tmp_path / "bad"
    shutil.copytree(solved, bad)
    head, rows = _csv(bad / "departures.csv")
    data = np.array(rows, dtype=float)
    live = np.flatnonzero(data[:, 2] > 0)[: max(1, int(np.sum(data[:, 2] > 0)) // 4)]
    data[live, 3] += data[live, 2]
    data[live, 2] = 0.0
    with open(bad / "departures.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        w.writerows([[f"{v:.12g}" for v in r] for r in data])
    assert main(["check", "--out", str(bad)]) == EXIT_FAIL
    err = capsys.readouterr().err
    assert "mass" in err


def test_check_empty_plan_is_vacuous(solved, tmp_path, capsys):
    empty = tmp_path / "empty"
    shutil.copytree(solved, empty)
    head, rows = _csv(empty / "departures.csv")
    with open(empty / "departures.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        w.writerows([[r[0], "0", "0", "0"] for r in rows])
    assert main(["check", "--out", str(empty)]) == EXIT_OK
    assert "vacuous" in capsys.readouterr().err


def test_solve_is_deterministic_across_threads(tmp_path):
    cfg = _write(tmp_path, "fast.json", _example4(**FAST_SOLVER))
    outs = []
    for k, threads in enumerate(("1", "4", "4")):
        out = tmp_path / f"run{k}"
        assert main(["solve", "--config", cfg, "--out", str(out), "--threads", threads,
                     "--seed", "3"]) == EXIT_OK
        outs.append(out)
    for name in ("departures.csv", "arrivals.csv", "trajectories.csv"):
        ref = (outs[0] / name).read_bytes()
        assert all((o / name).read_bytes() == ref for o in outs[1:])


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(groups=[]),
    lambda d: d["groups"][1].update(departure_cost="-2*t"),
    lambda d: d["road"].update(velocity="(2 - rho)^2"),
    lambda d: d["road"].update(length=-1),
    lambda d: d.update(window=[3, -3]),
    lambda d: d["groups"][0].update(arrival_cost="exp(t - "),
    lambda d: d.update(surprise=1),
], ids=["no-groups", "own-phi", "nonconcave", "length", "window", "parse", "unknown-key"])
def test_config_errors_exit_3(tmp_path, mutate, capsys):
    data = _example4()
    mutate(data)
    assert main(["solve", "--config", _write(tmp_path, "bad.json", data),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_stop_sign_with_three_roads_is_config_error(tmp_path):
    data = json.loads((CONFIGS / "junction_stopsign.json").read_text())
    data["incoming"].append(dict(data["incoming"][0]))
    data["priorities"] = [0.4, 0.3, 0.3]
    data["turning"].append([0.5, 0.5])
    assert main(["junction", "--config", _write(tmp_path, "j.json", data),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG


@pytest.mark.parametrize("name", ["junction_lp", "junction_priority", "junction_stopsign",
                                  "junction_buffer"])
def test_junction_outputs_are_admissible(tmp_path, name, capsys):
    out = tmp_path / name
    assert main(["junction", "--config", str(CONFIGS / f"{name}.json"), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "junction.json").read_text())
    assert rep["in_admissible_region"]
    if name == "junction_buffer":
        assert rep["gap_to_priority_curve"] <= 1e-2
        head, _ = _csv(out / "queues.csv")
        assert head == ["t", "q_1", "q_2", "f_in_1", "f_in_2", "f_out_1", "f_out_2"]


@pytest.mark.slow
def test_oracle_skips_brute_force_for_three_groups(tmp_path):
    data = json.loads((CONFIGS / "three_groups.json").read_text())
    data["solver"].update(FAST_SOLVER)
    data["oracle"] = {"dt": 4e-3}
    out = tmp_path / "o3"
    assert main(["oracle", "--config", _write(tmp_path, "t.json", data), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "oracle.json").read_text())
    assert isinstance(rep["brute_force"], str) and "skipped" in rep["brute_force"]
    assert rep["fv"][0]["l1"] < 0.05
