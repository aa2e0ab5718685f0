import csv
import json

import numpy as np
import pytest

from userlearn.cli import build_parser, main
from userlearn.environments import MDP_ALLOWED, build_traces
from userlearn.evaluation import train_size
from userlearn.ingest import parse_log
from userlearn.sim import SimScenario, simulate


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _sim(tmp_path, name, *flags):
    out = tmp_path / name
    assert main(["simulate", "--out", str(out), *flags]) == 0
    return out


def _rec(index, **kw):
    rec = {"session_id": "s", "user_id": "u", "study": "forecache", "index": index, "raw_action": "pan",
           "params": {"zoom_level": 1, "snow_level": 0.5}}
    rec.update(kw)
    return json.dumps(rec)


def test_ingest_success_and_summary(tmp_path, capsys):
    log = tmp_path / "log.jsonl"
    log.write_text("\n".join(_rec(i) for i in range(3)) + "\n")
    assert main(["ingest", "--input", str(log), "--out", str(tmp_path / "o")]) == 0
    assert "1 sessions, 0 errors" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["command"] == "ingest"
    assert str(log) in manifest["config"]["inputs"] and len(manifest["config_hash"]) == 64


def test_ingest_reports_bad_line(tmp_path, capsys):
    log = tmp_path / "log.jsonl"
    log.write_text(_rec(0) + "\n{broken\n")
    assert main(["ingest", "--input", str(log), "--out", str(tmp_path / "o")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_ingest_validation_errors_exit_1(tmp_path, capsys):
    log = tmp_path / "log.jsonl"
    log.write_text(_rec(0, params={"zoom_level": 1, "snow_level": 1.5}) + "\n")
    assert main(["ingest", "--input", str(log), "--out", str(tmp_path / "o")]) == 1
    assert "1 sessions, 1 errors" in capsys.readouterr().out
    assert _rows(tmp_path / "o" / "validation.csv")[0]["index"] == "0"


def test_ingest_csv_and_jsonl_give_identical_outputs(tmp_path):
    sim = _sim(tmp_path, "sim", "--kind", "mdp_policy", "--users", "3", "--horizon", "20")
    csv_sim = _sim(tmp_path, "simcsv", "--kind", "mdp_policy", "--users", "3", "--horizon", "20",
                   "--format", "csv")
    assert main(["ingest", "--input", str(sim / "sessions.jsonl"), "--out", str(tmp_path / "a")]) == 0
    assert main(["ingest", "--input", str(csv_sim / "sessions.csv"), "--format", "csv",
                 "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "sessions.jsonl").read_bytes() == (tmp_path / "b" / "sessions.jsonl").read_bytes()


def test_ingest_does_not_touch_inputs(tmp_path):
    sim = _sim(tmp_path, "sim", "--kind", "stationary_bandit", "--users", "2", "--horizon", "20")
    before = (sim / "sessions.jsonl").read_bytes()
    main(["ingest", "--input", str(sim / "sessions.jsonl"), "--out", str(sim)])
    assert (sim / "sessions.jsonl").read_bytes() == before


def test_simulate_population_shape(tmp_path):
    out = _sim(tmp_path, "sim", "--kind", "stationary_bandit", "--users", "20", "--horizon", "200")
    sessions = parse_log(out / "sessions.jsonl")
    assert len(sessions) == 20 and all(len(s) == 200 for s in sessions)
    assert json.loads((out / "manifest.json").read_text())["seed"] == 0


def test_simulate_usage_errors(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--kind", "bogus", "--out", str(tmp_path)]) == 2
    (tmp_path / "s.yaml").write_text("kind: stationary_bandit\nhorizon: 3\n")
    assert main(["simulate", "--scenario", str(tmp_path / "s.yaml"), "--out", str(tmp_path)]) == 2


def _switching_scenario(tmp_path):
    path = tmp_path / "switch.yaml"
    path.write_text("kind: switching_bandit\nusers: 20\nhorizon: 200\n"
                    "preference: [0.55, 0.15, 0.15, 0.15]\npreference_after: [0.15, 0.55, 0.15, 0.15]\n")
    return path


def test_nonstat_detects_switching_cohort(tmp_path):
    sim = _sim(tmp_path, "sim", "--scenario", str(_switching_scenario(tmp_path)))
    out = tmp_path / "ns"
    assert main(["nonstat", "--input", str(sim / "sessions.jsonl"), "--out", str(out),
                 "--targets", "arm0,arm1"]) == 0
    rows = _rows(out / "nonstat.csv")
    assert [r["target"] for r in rows] == ["arm0", "arm1"]
    assert all(float(r["p_value"]) < 0.05 for r in rows)
    assert rows[0]["window"] == "5" and rows[0]["split"] == "0.5"


@pytest.mark.parametrize("kind", ["stationary_bandit", "mdp_policy"])
def test_nonstat_stationary_cohort_mostly_insignificant(tmp_path, kind):
    out = _sim(tmp_path, "sim", "--kind", kind, "--users", "20")
    assert main(["nonstat", "--input", str(out / "sessions.jsonl"), "--out", str(tmp_path / "ns")]) == 0
    rows = _rows(tmp_path / "ns" / "nonstat.csv")
    assert rows and all(r["unit"] == "cohort" for r in rows)
    assert sum(float(r["p_value"]) >= 0.05 for r in rows) > len(rows) / 2


def test_nonstat_user_battery_writes_one_row_per_user_and_target(tmp_path):
    out = _sim(tmp_path, "sim", "--kind", "mdp_policy", "--users", "20")
    assert main(["nonstat", "--input", str(out / "sessions.jsonl"), "--out", str(tmp_path / "ns"),
                 "--test", "mannwhitney", "--window", "3"]) == 0
    rows = _rows(tmp_path / "ns" / "nonstat.csv")
    assert len(rows) == 60 and {r["window"] for r in rows} == {"3"}
    assert {r["method"] for r in rows} == {"normal_approx"}


def test_nonstat_rejects_unmapped_study(tmp_path):
    log = tmp_path / "log.jsonl"
    log.write_text(_rec(0, study="synthetic") + "\n" + _rec(1, study="synthetic") + "\n")
    assert main(["nonstat", "--input", str(log), "--out", str(tmp_path / "ns")]) == 2


def test_eval_threshold_curve_cardinality_and_determinism(tmp_path):
    sim = _sim(tmp_path, "sim", "--kind", "stationary_bandit", "--users", "3", "--horizon", "40")
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"algorithms": ["greedy", "wsls"], "thresholds": [0.2, 0.5, 0.8], "seed": 5}))
    outs = []
    for name, workers in (("e1", "1"), ("e2", "2")):
        out = tmp_path / name
        assert main(["eval", "--input", str(sim / "sessions.jsonl"), "--plan", str(plan),
                     "--out", str(out), "--workers", workers]) == 0
        outs.append(out)
    agg = _rows(outs[0] / "aggregate.csv")
    assert len(agg) == 6 and len(_rows(outs[0] / "report.csv")) == 18
    for name in ("report.csv", "aggregate.csv", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert json.loads((outs[0] / "manifest.json").read_text())["seed"] == 5


def test_eval_plan_errors_name_key(tmp_path, capsys):
    sim = _sim(tmp_path, "sim", "--kind", "stationary_bandit", "--users", "1", "--horizon", "20")
    plan = tmp_path / "plan.yaml"
    plan.write_text("algorithms: [greedy]\nthresholds: [0.5, 2]\n")
    assert main(["eval", "--input", str(sim / "sessions.jsonl"), "--plan", str(plan),
                 "--out", str(tmp_path / "e")]) == 2
    assert "thresholds[1]" in capsys.readouterr().err


def test_eval_random_on_four_arms(tmp_path):
    scenario = tmp_path / "uniform.yaml"
    scenario.write_text("kind: stationary_bandit\nusers: 5\nhorizon: 1200\npreference: [0.25, 0.25, 0.25, 0.25]\n")
    sim = _sim(tmp_path, "sim", "--scenario", str(scenario))
    out = tmp_path / "e"
    assert main(["eval", "--input", str(sim / "sessions.jsonl"), "--algs", "random", "--out", str(out)]) == 0
    mean = np.mean([float(r["mean"]) for r in _rows(out / "aggregate.csv")])
    assert abs(mean - 0.25) <= 0.02


def test_eval_random_on_the_stage_mdp_matches_allowed_action_counts(tmp_path):
    sim = _sim(tmp_path, "sim", "--kind", "mdp_policy", "--users", "5", "--horizon", "1200")
    out = tmp_path / "e"
    assert main(["eval", "--input", str(sim / "sessions.jsonl"), "--algs", "random", "--out", str(out)]) == 0
    traces = build_traces(simulate(SimScenario("mdp_policy", users=5, horizon=1200)), "forecache")
    expected = []
    for tau in (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9):
        for tr in traces:
            test = tr.steps[train_size(tau, len(tr)):]
            expected.append(np.mean([1 / len(MDP_ALLOWED[s.state]) for s in test]))
    mean = np.mean([float(r["value"]) for r in _rows(out / "report.csv")])
    assert abs(mean - np.mean(expected)) <= 0.02


def test_report_merges_and_plots(tmp_path):
    sim = _sim(tmp_path, "sim", "--kind", "stationary_bandit", "--users", "2", "--horizon", "30")
    for alg in ("greedy", "wsls"):
        assert main(["eval", "--input", str(sim / "sessions.jsonl"), "--algs", alg,
                     "--out", str(tmp_path / alg)]) == 0
    assert main(["nonstat", "--input", str(sim / "sessions.jsonl"), "--out", str(tmp_path / "ns")]) == 0
    out = tmp_path / "r"
    assert main(["report", "--input", str(tmp_path / "greedy" / "report.csv"),
                 str(tmp_path / "wsls" / "report.csv"), str(tmp_path / "ns" / "nonstat.csv"),
                 "--out", str(out)]) == 0
    merged = _rows(out / "report.csv")
    parts = _rows(tmp_path / "greedy" / "report.csv") + _rows(tmp_path / "wsls" / "report.csv")
    assert sorted(map(tuple, (r.values() for r in merged))) == sorted(map(tuple, (r.values() for r in parts)))
    assert list(_rows(out / "plot_data.csv")[0]) == ["series", "metric", "x", "y", "n"]
    for png in ("threshold_curves.png", "pvalues.png"):
        assert (out / png).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_report_is_byte_stable(tmp_path):
    sim = _sim(tmp_path, "sim", "--kind", "stationary_bandit", "--users", "2", "--horizon", "30")
    main(["eval", "--input", str(sim / "sessions.jsonl"), "--algs", "greedy", "--out", str(tmp_path / "e")])
    for name in ("r1", "r2"):
        assert main(["report", "--input", str(tmp_path / "e" / "report.csv"), "--out", str(tmp_path / name)]) == 0
    for f in ("report.csv", "plot_data.csv", "threshold_curves.png"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()


def test_report_conflicts_and_empty_input(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["report", "--input", str(empty), "--out", str(tmp_path / "r")]) == 1
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    header = "algorithm,user,threshold,metric,value,hyperparameters\n"
    a.write_text(header + "greedy,u,0.5,accuracy,0.5,\n")
    b.write_text(header + "greedy,u,0.5,accuracy,0.7,\n")
    assert main(["report", "--input", str(a), str(b), "--out", str(tmp_path / "r")]) == 1
    assert "conflicting" in capsys.readouterr().err
    assert main(["report", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "r")]) == 1


def test_help_prints_defaults(capsys):
    for cmd, needle in (("nonstat", "default: 0.5"), ("eval", "default: csv"), ("ingest", "default: 6")):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        assert needle in capsys.readouterr().out


def test_bad_flags_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--out", "x"])
    assert exc.value.code == 2
    assert build_parser().parse_args(["report", "--input", "a", "--out", "b"]).command == "report"
