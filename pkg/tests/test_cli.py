import io
import json
import subprocess
import sys

import pytest

from corun_affinity.cli import main, parse_thresholds, resolve_config, build_parser, UsageError
from corun_affinity.store import load_matrix


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return path


def _workload(wid, command=("true",), samples=3):
    return {"id": wid, "command": list(command), "samples": samples, "warmup_runs": 0}


@pytest.fixture
def project(tmp_path):
    config = _write(tmp_path / "workloads.json", {"version": 1, "workloads": [_workload("a"), _workload("b")]})
    script = _write(
        tmp_path / "script.json",
        {
            "solo": {"a": [10.0, 10.5, 9.5], "b": 4.0},
            "corun": {"a": {"b": 20.0, "a": 15.0}, "b": {"a": 5.0, "b": [6.0, 6.5]}},
        },
    )
    return tmp_path, config, script


def run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out)
    return code, out.getvalue()


def fake(cmd, config, script, campaign, *extra):
    return run(cmd, "--config", config, "--runner", "fake", "--fake-script", script,
               "--campaign-dir", campaign, "--rounds", 3, *extra)


def pipeline(root, config, script, campaign="camp"):
    campaign = root / campaign
    results = [fake(cmd, config, script, campaign) for cmd in ("baseline", "profile", "matrix")]
    return campaign, results


def test_full_pipeline(project):
    root, config, script = project
    campaign, results = pipeline(root, config, script)
    assert [code for code, _ in results] == [0, 0, 0]
    assert "baselines run: 2" in results[0][1]
    assert "[4/4] b x b: ok" in results[1][1]
    matrix = load_matrix(campaign / "matrix.json")
    assert len(matrix) == 4
    csv_lines = (campaign / "matrix.csv").read_text().splitlines()
    assert len(csv_lines) == 1 + 4
    assert "100/25" in results[2][1]  # a x b: a 10 -> 20, b 4 -> 5


def test_pipeline_is_byte_identical(project):
    root, config, script = project
    first, _ = pipeline(root, config, script, "one")
    second, _ = pipeline(root, config, script, "two")
    for name in ("manifest.json", "samples.jsonl", "baselines.jsonl", "observations.jsonl", "matrix.json", "matrix.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_duplicate_ids_exit_2(tmp_path, capsys):
    config = _write(tmp_path / "w.json", {"version": 1, "workloads": [_workload("dup"), _workload("dup")]})
    code, _ = run("baseline", "--config", config, "--campaign-dir", tmp_path / "c")
    assert code == 2
    assert "'dup'" in capsys.readouterr().err


def test_missing_command_exit_1(tmp_path, capsys):
    config = _write(
        tmp_path / "w.json",
        {"version": 1, "workloads": [_workload("ok"), _workload("gone", ("no-such-binary-zz9",))]},
    )
    code, out = run("baseline", "--config", config, "--campaign-dir", tmp_path / "c")
    assert code == 1
    assert "failed: 1" in out
    assert "LaunchFailure" in capsys.readouterr().err
    ledger = [json.loads(l) for l in (tmp_path / "c" / "errors.jsonl").read_text().splitlines()]
    assert ledger[0]["subject"] == ["gone"] and ledger[0]["error"] == "LaunchFailure"


def test_profile_resume_runs_nothing(project):
    root, config, script = project
    campaign, _ = pipeline(root, config, script)
    code, out = fake("profile", config, script, campaign, "--resume")
    assert code == 0
    assert "pairs run: 0, reused: 4" in out
    code, out = fake("baseline", config, script, campaign, "--resume")
    assert code == 0 and "baselines run: 0, reused: 2" in out


def test_profile_manifest_mismatch(project, capsys):
    root, config, script = project
    campaign, _ = pipeline(root, config, script)
    code, _ = run("profile", "--config", config, "--runner", "fake", "--fake-script", script,
                  "--campaign-dir", campaign, "--rounds", 5, "--resume")
    assert code == 2
    assert "ManifestMismatch" in capsys.readouterr().err


def test_profile_without_baselines(project, capsys):
    root, config, script = project
    code, _ = fake("profile", config, script, root / "empty")
    assert code == 2
    assert "baseline" in capsys.readouterr().err


def test_failed_pair_gives_gap_warning(project, capsys):
    root, config, script = project
    doc = json.loads(script.read_text())
    doc["fail_pairs"] = [["a", "b"]]
    _write(script, doc)
    campaign = root / "camp"
    assert fake("baseline", config, script, campaign)[0] == 0
    code, out = fake("profile", config, script, campaign)
    assert code == 1
    assert "a x b: failed" in out
    capsys.readouterr()
    code, _ = fake("matrix", config, script, campaign)
    assert code == 0
    assert len(load_matrix(campaign / "matrix.json")) == 3
    assert "1 pair(s) have no observation: a x b" in capsys.readouterr().err


def test_corrupt_sample_line_exit_2(project, capsys):
    root, config, script = project
    campaign, _ = pipeline(root, config, script)
    path = campaign / "samples.jsonl"
    lines = path.read_text().splitlines(keepends=True)
    lines[6] = "{truncated\n"
    path.write_text("".join(lines))
    code, _ = fake("matrix", config, script, campaign)
    assert code == 2
    assert "samples.jsonl:7" in capsys.readouterr().err


def test_matrix_without_observations(project):
    root, config, script = project
    campaign = root / "camp"
    fake("baseline", config, script, campaign)
    assert fake("matrix", config, script, campaign)[0] == 2


def _plan_files(root, workloads, capacities):
    requests = _write(root / "requests.json",
                      {"requests": [{"request_id": f"r{i}", "workload_id": w} for i, w in enumerate(workloads)]})
    hosts = _write(root / "hosts.json", {"hosts": [{"id": f"h{i}", "capacity": c} for i, c in enumerate(capacities)]})
    return requests, hosts


@pytest.fixture
def avoid_project(tmp_path):
    # a and b slow each other down 3x: average loss 200, classified avoid
    config = _write(tmp_path / "w.json", {"version": 1, "workloads": [_workload("a"), _workload("b")]})
    script = _write(tmp_path / "s.json", {"solo": {"a": 1.0, "b": 2.0},
                                          "corun": {"a": {"b": 3.0, "a": 1.1}, "b": {"a": 6.0, "b": 2.2}}})
    campaign, results = pipeline(tmp_path, config, script)
    assert all(code == 0 for code, _ in results)
    return tmp_path, campaign


def test_plan_separates_avoid_pair(avoid_project):
    root, campaign = avoid_project
    requests, hosts = _plan_files(root, ["a", "b"], [2, 2])
    code, out = run("plan", "--campaign-dir", campaign, "--requests", requests, "--hosts", hosts)
    assert code == 0
    plan = json.loads((campaign / "matrix.plan.json").read_text())
    assert plan["assignment"]["r0"] != plan["assignment"]["r1"]
    assert (campaign / "matrix.plan.csv").exists()
    assert "avoid co-residencies: 0" in out


def test_plan_verify(avoid_project):
    root, campaign = avoid_project
    requests, hosts = _plan_files(root, ["a", "b", "a", "b"], [2, 2])
    out_path = root / "out" / "plan.json"
    code, out = run("plan", "--campaign-dir", campaign, "--requests", requests, "--hosts", hosts,
                    "--verify", "--plan-out", out_path)
    assert code == 0
    assert "exhaustive cost:" in out and "greedy/exhaustive ratio: 1.000000" in out
    assert out_path.exists() and out_path.with_suffix(".csv").exists()


def test_plan_insufficient_capacity(avoid_project, capsys):
    root, campaign = avoid_project
    requests, hosts = _plan_files(root, ["a", "b", "a"], [1, 1])
    code, _ = run("plan", "--campaign-dir", campaign, "--requests", requests, "--hosts", hosts)
    assert code == 1
    assert "InsufficientCapacity" in capsys.readouterr().err


def test_plan_unknown_workload(avoid_project):
    root, campaign = avoid_project
    requests, hosts = _plan_files(root, ["a", "zz"], [2])
    code, _ = run("plan", "--campaign-dir", campaign, "--requests", requests, "--hosts", hosts)
    assert code == 2


def test_report_and_reclassify(avoid_project):
    _, campaign = avoid_project
    code, out = run("report", "--campaign-dir", campaign)
    assert code == 0
    assert "classes: coexist=2, conditional=0, avoid=2" in out
    assert "suffered %" in out
    code, out = run("report", "--campaign-dir", campaign, "--thresholds", "coexist=5,dist=5,avoid=500")
    assert "classes: coexist=0, conditional=4, avoid=0" in out


def test_report_missing_matrix(tmp_path):
    assert run("report", "--campaign-dir", tmp_path)[0] == 2


def test_env_var_and_settings_precedence(tmp_path, monkeypatch):
    config = _write(tmp_path / "w.json", {
        "version": 1, "workloads": [_workload("a")],
        "settings": {"campaign_dir": "from-file", "rounds": 7, "objective": "lex",
                     "thresholds": {"avoid_min_avg": 90}},
    })
    parser = build_parser()
    cfg = resolve_config(parser.parse_args(["baseline", "--config", str(config)]), environ={})
    assert cfg.campaign_dir == tmp_path / "from-file"
    assert cfg.rounds == 7 and str(cfg.objective) == "lex" and cfg.thresholds.avoid_min_avg == 90
    cfg = resolve_config(parser.parse_args(["baseline", "--config", str(config)]),
                         environ={"CORUN_AFFINITY_DIR": "/env/dir"})
    assert str(cfg.campaign_dir) == "/env/dir"
    cfg = resolve_config(parser.parse_args(["baseline", "--config", str(config), "--campaign-dir", "flag",
                                            "--rounds", "2", "--no-include-self"]),
                         environ={"CORUN_AFFINITY_DIR": "/env/dir"})
    assert str(cfg.campaign_dir) == "flag" and cfg.rounds == 2 and cfg.include_self is False


def test_parse_thresholds():
    t = parse_thresholds("coexist=10, avoid=100")
    assert (t.coexist_max_avg, t.coexist_max_distance, t.avoid_min_avg) == (10, 25, 100)
    for bad in ("coexist", "speed=3", "avoid=x", "coexist=200"):
        with pytest.raises(UsageError):
            parse_thresholds(bad)


@pytest.mark.parametrize("argv", [
    ["baseline", "--rounds", "0", "--config", "x"],
    ["baseline", "--runner", "fake"],
    ["plan", "--requests", "r.json"],
    ["nonsense"],
])
def test_usage_errors_exit_2(tmp_path, argv):
    _write(tmp_path / "x", {"version": 1, "workloads": [_workload("a")]})
    argv = [str(tmp_path / a) if a == "x" else a for a in argv]
    try:
        code = main(argv, io.StringIO())
    except SystemExit as exc:
        code = exc.code
    assert code == 2


def test_fake_runner_requires_script(tmp_path, capsys):
    config = _write(tmp_path / "w.json", {"version": 1, "workloads": [_workload("a")]})
    code, _ = run("baseline", "--config", config, "--runner", "fake", "--campaign-dir", tmp_path / "c")
    assert code == 2
    assert "--fake-script" in capsys.readouterr().err


def test_console_entry_point(project):
    root, config, script = project
    proc = subprocess.run(
        [sys.executable, "-m", "corun_affinity", "baseline", "--config", str(config), "--runner", "fake",
         "--fake-script", str(script), "--campaign-dir", str(root / "c")],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines()[0].split()[0] == "workload"
