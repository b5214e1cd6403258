import json
import statistics

import pytest

from builders import spec
from corun_affinity.errors import (
    CampaignError,
    CorruptRecord,
    InsufficientSamples,
    LaunchFailure,
    ManifestMismatch,
    NonZeroExit,
    SkewExceeded,
)
from corun_affinity.harness import (
    CampaignStore,
    FakeRunner,
    PairObservation,
    campaign_config_hash,
    run_baseline,
    run_campaign,
    run_pair,
)
from corun_affinity.model import PairKey, validate_workload_set


def test_fake_runner_replays_script():
    runner = FakeRunner({"a": [1.0, 2.0]})
    a = spec("a")
    durations = [runner.execute([a])[0].duration for _ in range(3)]
    assert durations == [1.0, 2.0, 1.0]
    assert runner.clock == 4.0


def test_fake_runner_rejects_bad_script():
    with pytest.raises(ValueError):
        FakeRunner({"a": []})
    with pytest.raises(ValueError):
        FakeRunner({"a": [1.0, 0.0]})


def test_fake_runner_unscripted_workload():
    with pytest.raises(LaunchFailure):
        FakeRunner({}).execute([spec("ghost")])


def test_baseline_discards_warmups():
    runner = FakeRunner({"a": [100.0, 1.0, 2.0, 3.0]})
    profile = run_baseline(spec("a", samples=3, warmup=1), runner)
    assert [s.duration for s in profile.samples] == [1.0, 2.0, 3.0]
    assert profile.mean == 2.0
    assert profile.stddev == 1.0
    assert profile.ci95[0] < 2.0 < profile.ci95[1]


def test_baseline_poisoned_warmup_is_ignored():
    # A pathological warmup has no influence on the statistics.
    plain = run_baseline(spec("a", samples=4, warmup=0), FakeRunner({"a": [5.0, 6.0, 5.0, 6.0]}))
    poisoned = run_baseline(
        spec("a", samples=4, warmup=2),
        FakeRunner({"a": [1e6, 1e-3, 5.0, 6.0, 5.0, 6.0]}),
    )
    assert (poisoned.mean, poisoned.stddev, poisoned.ci95) == (plain.mean, plain.stddev, plain.ci95)


def test_baseline_needs_two_samples():
    with pytest.raises(InsufficientSamples):
        run_baseline(spec("a", samples=1), FakeRunner({"a": 1.0}))


def test_baseline_non_zero_exit_carries_index():
    runner = FakeRunner({"a": 1.0}, fail_solo={"a"})
    with pytest.raises(NonZeroExit) as err:
        run_baseline(spec("a", samples=3), runner)
    assert (err.value.workload_id, err.value.run_index, err.value.exit_code) == ("a", 0, 1)
    with pytest.raises(NonZeroExit) as err:
        run_baseline(spec("a", samples=3, warmup=2), FakeRunner({"a": 1.0}, fail_solo={"a"}))
    assert err.value.run_index == -2


def test_fake_missing_command():
    with pytest.raises(LaunchFailure, match="command not found"):
        run_baseline(spec("a", command=("nope",)), FakeRunner({"a": 1.0}, missing={"a"}))


def test_pair_rounds_overlap_and_barrier():
    runner = FakeRunner({"a": 1.0, "b": 1.0}, {("a", "b"): [2.0, 3.0], ("b", "a"): 5.0})
    obs = run_pair(spec("a"), spec("b"), 4, runner)
    assert len(obs.samples_first) == len(obs.samples_second) == 4
    for s1, s2 in zip(obs.samples_first, obs.samples_second):
        assert s1.started_at == s2.started_at
    # Every round starts only after both sides of the previous round ended.
    for prev, cur in zip(obs.samples_first, obs.samples_first[1:]):
        assert cur.started_at == prev.started_at + 5.0
    assert [s.duration for s in obs.samples_first] == [2.0, 3.0, 2.0, 3.0]
    assert obs.start_skew_max == 0.0


def test_pair_overlap_in_timeline():
    runner = FakeRunner({"a": 1.0, "b": 1.5})
    run_pair(spec("a"), spec("b"), 3, runner)
    pairs = list(zip(runner.timeline[::2], runner.timeline[1::2]))
    for x, y in pairs:
        assert max(x.released_at, y.released_at) < min(x.ended_at, y.ended_at)


def test_pair_warmup_rounds_discarded():
    runner = FakeRunner({"a": 1.0, "b": 1.0}, {("a", "b"): [9.0, 9.0, 2.0]})
    obs = run_pair(spec("a", warmup=2), spec("b", warmup=1), 1, runner)
    assert [s.duration for s in obs.samples_first] == [2.0]
    assert len(runner.timeline) == 6


def test_pair_self_pair():
    runner = FakeRunner({"a": 1.0}, {("a", "a"): 1.5})
    obs = run_pair(spec("a"), spec("a"), 2, runner)
    assert obs.key == PairKey("a", "a")
    assert [s.duration for s in obs.samples_second] == [1.5, 1.5]


def test_pair_skew_bound():
    runner = FakeRunner({"a": 1.0, "b": 1.0}, skew=0.2)
    with pytest.raises(SkewExceeded) as err:
        run_pair(spec("a"), spec("b"), 2, runner, skew_bound=0.05)
    assert err.value.round_index == 0
    obs = run_pair(spec("a"), spec("b"), 2, FakeRunner({"a": 1.0, "b": 1.0}, skew=0.01))
    assert obs.start_skew_max == pytest.approx(0.01)


def test_pair_failure_names_side():
    runner = FakeRunner({"a": 1.0, "b": 1.0}, fail_pairs={("a", "b")})
    with pytest.raises(NonZeroExit) as err:
        run_pair(spec("a"), spec("b"), 2, runner)
    assert err.value.workload_id == "b"
    # The reverse orientation is unaffected.
    run_pair(spec("b"), spec("a"), 2, runner)


def test_pair_observation_round_trip():
    obs = run_pair(spec("a"), spec("b"), 3, FakeRunner({"a": [1.0, 2.0], "b": 3.0}))
    assert PairObservation.from_dict(json.loads(json.dumps(obs.to_dict()))) == obs


def _workloads(n=3, samples=3):
    return validate_workload_set([spec(f"w{i}", samples=samples) for i in range(n)])


def _runner():
    solo = {"w0": [1.0, 1.5], "w1": 2.0, "w2": [3.0, 3.5, 4.0]}
    corun = {("w0", "w1"): 2.0, ("w1", "w0"): 3.0, ("w2", "w2"): 6.0}
    return FakeRunner(solo, corun)


@pytest.mark.parametrize("include_self, expected", [(True, 9), (False, 6)])
def test_campaign_counts(tmp_path, include_self, expected):
    store = CampaignStore(tmp_path / "c")
    result = run_campaign(_workloads(), 4, _runner(), include_self=include_self, store=store)
    assert len(result.baselines) == 3
    assert len(result.observations) == expected
    assert result.failures == []
    lines = (tmp_path / "c" / "samples.jsonl").read_text().splitlines()
    assert len(lines) == 3 * 3 + expected * 4 * 2
    assert len(store.load_observations()) == expected
    assert store.next_sequence() == len(lines)


def test_campaign_is_deterministic(tmp_path):
    for name in ("x", "y"):
        run_campaign(_workloads(), 3, _runner(), store=CampaignStore(tmp_path / name))
    for name in ("samples.jsonl", "baselines.jsonl", "observations.jsonl", "manifest.json"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_campaign_resume_runs_only_missing_pair(tmp_path):
    store = CampaignStore(tmp_path / "c")
    ws = _workloads()
    run_campaign(ws, 2, _runner(), store=store)
    # Drop the last observation as if the process had been killed mid-run.
    obs_path = store.path(store.OBSERVATIONS)
    lines = obs_path.read_text().splitlines(keepends=True)
    obs_path.write_text("".join(lines[:-1]))

    runner = _runner()
    result = run_campaign(ws, 2, runner, store=store, resume=True)
    assert result.executed_baselines == []
    assert result.executed_pairs == [PairKey("w2", "w2")]
    assert len(runner.timeline) == 2 * 2
    assert len(store.load_observations()) == 9

    again = _runner()
    result = run_campaign(ws, 2, again, store=store, resume=True)
    assert result.executed_pairs == [] and again.timeline == []


def test_campaign_resume_sequence_continues(tmp_path):
    store = CampaignStore(tmp_path / "c")
    ws = _workloads()
    run_campaign(ws, 2, _runner(), store=store)
    before = store.next_sequence()
    obs_path = store.path(store.OBSERVATIONS)
    obs_path.write_text("".join(obs_path.read_text().splitlines(keepends=True)[:-1]))
    run_campaign(ws, 2, _runner(), store=store, resume=True)
    sequences = [json.loads(l)["sequence"] for l in store.path(store.SAMPLES).read_text().splitlines()]
    assert len(sequences) == len(set(sequences))
    assert max(sequences) == before + 3


def test_campaign_resume_manifest_mismatch(tmp_path):
    store = CampaignStore(tmp_path / "c")
    run_campaign(_workloads(), 2, _runner(), store=store)
    with pytest.raises(ManifestMismatch):
        run_campaign(_workloads(), 3, _runner(), store=store, resume=True)


def test_campaign_failure_ledger(tmp_path):
    store = CampaignStore(tmp_path / "c")
    runner = _runner()
    runner.fail_pairs = {("w0", "w1")}
    result = run_campaign(_workloads(), 2, runner, store=store)
    assert len(result.observations) == 8
    assert PairKey("w0", "w1") not in result.observations
    (failure,) = store.load_failures()
    assert failure.stage == "pair" and failure.subject == ("w0", "w1")
    assert failure.error == "NonZeroExit"


def test_campaign_failed_baseline_skips_pairs(tmp_path):
    store = CampaignStore(tmp_path / "c")
    runner = _runner()
    runner.fail_solo = {"w2"}
    result = run_campaign(_workloads(), 2, runner, store=store)
    assert set(result.baselines) == {"w0", "w1"}
    assert len(result.observations) == 4
    stages = [(f.stage, f.error) for f in store.load_failures()]
    assert stages[0] == ("baseline", "NonZeroExit")
    assert stages.count(("pair", "MissingBaseline")) == 5


def test_corrupt_line_is_detected(tmp_path):
    store = CampaignStore(tmp_path / "c")
    run_campaign(_workloads(), 2, _runner(), store=store)
    path = store.path(store.OBSERVATIONS)
    lines = path.read_text().splitlines(keepends=True)
    lines[3] = lines[3][: len(lines[3]) // 2] + "\n"
    path.write_text("".join(lines))
    with pytest.raises(CorruptRecord) as err:
        store.load_observations()
    assert err.value.line == 4
    assert "observations.jsonl:4" in str(err.value)


def test_corrupt_record_structure(tmp_path):
    store = CampaignStore(tmp_path / "c")
    store.directory.mkdir()
    store.path(store.BASELINES).write_text('{"workload_id": "a"}\n[1]\n')
    with pytest.raises(CorruptRecord) as err:
        store.load_baselines()
    assert err.value.line == 1


def test_manifest_checks(tmp_path):
    store = CampaignStore(tmp_path / "c")
    with pytest.raises(CampaignError):
        store.check_manifest("abc")
    store.directory.mkdir()
    store.path(store.MANIFEST).write_text("{")
    with pytest.raises(CampaignError):
        store.read_manifest()


def test_config_hash_sensitivity():
    ws = _workloads()
    base = campaign_config_hash(ws, 20, True, 0.05)
    assert base == campaign_config_hash(_workloads(), 20, True, 0.05)
    assert base != campaign_config_hash(ws, 21, True, 0.05)
    assert base != campaign_config_hash(ws, 20, False, 0.05)
    assert base != campaign_config_hash(_workloads(samples=4), 20, True, 0.05)


def test_baseline_statistics_match_stdlib():
    durations = [1.0, 1.25, 0.75, 1.5, 1.125]
    profile = run_baseline(spec("a", samples=5), FakeRunner({"a": durations}))
    assert profile.mean == statistics.fmean(durations)
    assert profile.stddev == statistics.stdev(durations)


def test_baseline_worked_examples():
    profile = run_baseline(spec("a", samples=3, warmup=1), FakeRunner({"a": [9.0, 2.0, 2.0, 2.0]}))
    assert (profile.mean, profile.stddev) == (2.0, 0.0)
    profile = run_baseline(spec("a", samples=20, warmup=0), FakeRunner({"a": 5.0}))
    assert profile.mean == 5.0 and profile.ci95 == (5.0, 5.0)


def test_pair_worked_examples():
    runner = FakeRunner({"a": [4.0, 4.0], "b": [6.0, 6.0]})
    obs = run_pair(spec("a"), spec("b"), 2, runner)
    assert statistics.fmean(s.duration for s in obs.samples_first) == 4.0
    assert statistics.fmean(s.duration for s in obs.samples_second) == 6.0
    with pytest.raises(NonZeroExit) as err:
        run_pair(spec("a"), spec("b"), 1, FakeRunner({"a": 1.0, "b": 1.0}, fail_corun={"b"}))
    assert (err.value.workload_id, err.value.run_index) == ("b", 0)


def test_campaign_four_workloads():
    ws = validate_workload_set([spec(f"w{i}") for i in range(4)])
    result = run_campaign(ws, 2, FakeRunner({f"w{i}": 1.0 + i for i in range(4)}))
    assert len(result.baselines) == 4 and len(result.observations) == 16


def test_sequence_strictly_increasing(tmp_path):
    store = CampaignStore(tmp_path / "c")
    run_campaign(_workloads(), 3, _runner(), store=store)
    sequences = [json.loads(l)["sequence"] for l in store.path(store.SAMPLES).read_text().splitlines()]
    assert sequences == sorted(sequences) and len(set(sequences)) == len(sequences)
    walls = [json.loads(l)["wall_time"] for l in store.path(store.SAMPLES).read_text().splitlines()]
    assert all(w.startswith("2000-01-01T") for w in walls)
