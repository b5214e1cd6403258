"""Solo baselines and synchronized co-runs of workload pairs.

A runner executes one or more workloads with a common start and reports one
:class:`Execution` per workload. :class:`ProcessRunner` launches real child
processes, parks each one at a pipe barrier and releases them with a single
write; :class:`FakeRunner` replays scripted durations on a virtual clock so
campaigns are reproducible in tests.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import select
import shutil
import statistics
import subprocess
import sys
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Collection, Iterable, Iterator, Mapping, Protocol, Sequence

from .errors import (
    CampaignError,
    CorruptRecord,
    HarnessError,
    InsufficientSamples,
    LaunchFailure,
    ManifestMismatch,
    NonZeroExit,
    SkewExceeded,
)
from .metrics import confidence_interval
from .model import PairKey, WorkloadSet, WorkloadSpec, enumerate_pairs

DEFAULT_ROUNDS = 20
DEFAULT_SKEW_BOUND = 0.050
CAMPAIGN_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Execution:
    """Outcome of one workload process inside one runner call."""

    workload_id: str
    duration: float
    exit_code: int
    released_at: float
    ended_at: float
    wall_time: str


class Runner(Protocol):
    def execute(self, specs: Sequence[WorkloadSpec]) -> list[Execution]:
        """Run ``specs`` with a synchronized start and wait for all of them."""


# -- real processes -----------------------------------------------------------

# Handshake: write b"R" when parked, block on the go pipe, write the wake-up
# timestamp, then exec the workload. All times are CLOCK_MONOTONIC.
_TRAMPOLINE = """\
import os, sys, time
go, status = int(sys.argv[1]), int(sys.argv[2])
os.write(status, b"R")
if not os.read(go, 1):
    os._exit(125)
os.write(status, repr(time.monotonic()).encode())
os.close(status)
os.close(go)
argv = sys.argv[3:]
try:
    os.execvp(argv[0], argv)
except OSError as exc:
    sys.stderr.write("exec failed: %s\\n" % exc)
    os._exit(127)
"""


def _resolve_program(spec: WorkloadSpec, env: Mapping[str, str]) -> str:
    program = spec.command[0]
    if os.sep in program:
        base = Path(spec.working_dir) if spec.working_dir else Path.cwd()
        candidate = Path(program) if os.path.isabs(program) else base / program
        if candidate.is_file() and os.access(candidate, os.X_OK):
            return str(candidate)
        raise LaunchFailure(spec.id, f"not an executable file: {program}")
    found = shutil.which(program, path=env.get("PATH", os.defpath))
    if found is None:
        raise LaunchFailure(spec.id, f"command not found: {program}")
    return found


class ProcessRunner:
    """Launch workloads as child processes behind a start barrier.

    ``timeout`` (seconds, optional) kills any side still running that long
    after release; the kill surfaces as a non-zero exit.
    """

    def __init__(self, timeout: float | None = None, ready_timeout: float = 30.0):
        self.timeout = timeout
        self.ready_timeout = ready_timeout

    def execute(self, specs: Sequence[WorkloadSpec]) -> list[Execution]:
        if not specs:
            return []
        go_r, go_w = os.pipe()
        status_fds: list[int] = []
        procs: list[subprocess.Popen] = []
        try:
            for spec in specs:
                env = {**os.environ, **spec.env_vars}
                _resolve_program(spec, env)
                st_r, st_w = os.pipe()
                status_fds.append(st_r)
                try:
                    proc = subprocess.Popen(
                        [sys.executable, "-c", _TRAMPOLINE, str(go_r), str(st_w), *spec.command],
                        pass_fds=(go_r, st_w),
                        cwd=spec.working_dir,
                        env=env,
                        stdin=subprocess.DEVNULL,
                        stdout=subprocess.DEVNULL,
                        stderr=subprocess.DEVNULL,
                    )
                except OSError as exc:
                    raise LaunchFailure(spec.id, str(exc)) from None
                finally:
                    os.close(st_w)
                procs.append(proc)
            os.close(go_r)
            go_r = -1

            for spec, fd in zip(specs, status_fds):
                if _read_with_timeout(fd, 1, self.ready_timeout) != b"R":
                    raise LaunchFailure(spec.id, "child did not reach the start barrier")

            ended: list[float | None] = [None] * len(procs)

            def watch(i: int) -> None:
                procs[i].wait()
                ended[i] = time.monotonic()

            watchers = [threading.Thread(target=watch, args=(i,), daemon=True) for i in range(len(procs))]
            for thread in watchers:
                thread.start()
            wall = datetime.now(timezone.utc)
            os.write(go_w, b"G" * len(procs))
            released = [_read_wake_time(fd) for fd in status_fds]

            deadline = None if self.timeout is None else time.monotonic() + self.timeout
            for proc, thread in zip(procs, watchers):
                if deadline is None:
                    thread.join()
                    continue
                thread.join(max(0.0, deadline - time.monotonic()))
                if thread.is_alive():
                    proc.kill()
                    thread.join()

            results = []
            for spec, proc, rel, end in zip(specs, procs, released, ended):
                assert end is not None
                start = rel if rel is not None else end
                results.append(
                    Execution(
                        workload_id=spec.id,
                        duration=end - start,
                        exit_code=proc.returncode,
                        released_at=start,
                        ended_at=end,
                        wall_time=wall.isoformat(),
                    )
                )
            return results
        finally:
            if go_r >= 0:
                os.close(go_r)
            os.close(go_w)
            for fd in status_fds:
                os.close(fd)
            for proc in procs:
                if proc.poll() is None:
                    proc.kill()
                    proc.wait()


def _read_with_timeout(fd: int, n: int, timeout: float) -> bytes:
    ready, _, _ = select.select([fd], [], [], timeout)
    if not ready:
        return b""
    return os.read(fd, n)


def _read_wake_time(fd: int) -> float | None:
    chunks = []
    while True:
        chunk = os.read(fd, 64)
        if not chunk:
            break
        chunks.append(chunk)
    try:
        return float(b"".join(chunks))
    except ValueError:
        return None


# -- scripted runner ------------------------------------------------------------

FAKE_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


class FakeRunner:
    """Deterministic runner replaying scripted durations on a virtual clock.

    ``solo`` maps workload id to a duration or a list of durations consumed in
    order (cycling when exhausted). ``corun`` maps ``(workload_id, partner_id)``
    to the durations that workload takes when co-running with ``partner_id``;
    unscripted co-runs fall back to the solo script. Every execution is kept in
    ``timeline`` for inspection.
    """

    def __init__(
        self,
        solo: Mapping[str, float | Sequence[float]],
        corun: Mapping[tuple[str, str], float | Sequence[float]] | None = None,
        *,
        fail_solo: Collection[str] = (),
        fail_corun: Collection[str] = (),
        fail_pairs: Collection[tuple[str, str]] = (),
        missing: Collection[str] = (),
        skew: float = 0.0,
    ):
        self.solo = {k: _as_script(v) for k, v in solo.items()}
        self.corun = {tuple(k): _as_script(v) for k, v in (corun or {}).items()}
        self.fail_solo = set(fail_solo)
        self.fail_corun = set(fail_corun)
        self.fail_pairs = {tuple(k) for k in fail_pairs}
        self.missing = set(missing)
        self.skew = skew
        self.clock = 0.0
        self.timeline: list[Execution] = []
        self._cursor: Counter = Counter()

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "FakeRunner":
        corun = {}
        for wid, partners in (raw.get("corun") or {}).items():
            for partner, script in partners.items():
                corun[(wid, partner)] = script
        return cls(
            solo=raw.get("solo") or {},
            corun=corun,
            fail_solo=raw.get("fail_solo", ()),
            fail_corun=raw.get("fail_corun", ()),
            fail_pairs=[tuple(p) for p in raw.get("fail_pairs", ())],
            missing=raw.get("missing", ()),
            skew=float(raw.get("skew", 0.0)),
        )

    def _next(self, script_key: tuple, script: tuple[float, ...]) -> float:
        i = self._cursor[script_key]
        self._cursor[script_key] += 1
        return script[i % len(script)]

    def _duration(self, spec: WorkloadSpec, partner: str | None) -> float:
        if partner is not None and (spec.id, partner) in self.corun:
            key = (spec.id, partner)
            return self._next(("corun",) + key, self.corun[key])
        if spec.id not in self.solo:
            raise LaunchFailure(spec.id, "no scripted duration")
        return self._next(("solo", spec.id), self.solo[spec.id])

    def execute(self, specs: Sequence[WorkloadSpec]) -> list[Execution]:
        for spec in specs:
            if spec.id in self.missing:
                raise LaunchFailure(spec.id, f"command not found: {spec.command[0]}")
        pair = tuple(s.id for s in specs) if len(specs) == 2 else None
        results = []
        for i, spec in enumerate(specs):
            partner = specs[1 - i].id if len(specs) == 2 else None
            duration = self._duration(spec, partner)
            if len(specs) == 1:
                failed = spec.id in self.fail_solo
            else:
                failed = spec.id in self.fail_corun or (i == 1 and pair in self.fail_pairs)
            released = self.clock + i * self.skew
            results.append(
                Execution(
                    workload_id=spec.id,
                    duration=duration,
                    exit_code=1 if failed else 0,
                    released_at=released,
                    ended_at=released + duration,
                    wall_time=(FAKE_EPOCH + timedelta(seconds=released)).isoformat(),
                )
            )
        self.clock = max(r.ended_at for r in results)
        self.timeline.extend(results)
        return results


def _as_script(value: float | Sequence[float]) -> tuple[float, ...]:
    script = (float(value),) if isinstance(value, (int, float)) else tuple(float(v) for v in value)
    if not script or any(d <= 0 for d in script):
        raise ValueError("scripted durations must be a non-empty list of positive numbers")
    return script


# -- samples and profiles ---------------------------------------------------------


@dataclass(frozen=True)
class RunSample:
    workload_id: str
    duration: float
    exit_ok: bool
    started_at: float
    sequence: int
    wall_time: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "workload_id": self.workload_id,
            "duration": self.duration,
            "exit_ok": self.exit_ok,
            "started_at": self.started_at,
            "sequence": self.sequence,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunSample":
        return cls(
            workload_id=str(raw["workload_id"]),
            duration=float(raw["duration"]),
            exit_ok=bool(raw["exit_ok"]),
            started_at=float(raw["started_at"]),
            sequence=int(raw["sequence"]),
            wall_time=str(raw.get("wall_time", "")),
        )


@dataclass(frozen=True)
class BaselineProfile:
    workload_id: str
    samples: tuple[RunSample, ...]
    mean: float
    stddev: float
    ci95: tuple[float, float]

    @classmethod
    def from_samples(cls, workload_id: str, samples: Sequence[RunSample]) -> "BaselineProfile":
        durations = [s.duration for s in samples]
        if len(durations) < 2:
            raise InsufficientSamples(workload_id, len(durations))
        return cls(
            workload_id=workload_id,
            samples=tuple(samples),
            mean=statistics.fmean(durations),
            stddev=statistics.stdev(durations),
            ci95=confidence_interval(durations, 0.95),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "workload_id": self.workload_id,
            "mean": self.mean,
            "stddev": self.stddev,
            "ci95": list(self.ci95),
            "samples": [s.to_dict() for s in self.samples],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "BaselineProfile":
        lo, hi = raw["ci95"]
        return cls(
            workload_id=str(raw["workload_id"]),
            samples=tuple(RunSample.from_dict(s) for s in raw["samples"]),
            mean=float(raw["mean"]),
            stddev=float(raw["stddev"]),
            ci95=(float(lo), float(hi)),
        )


@dataclass(frozen=True)
class PairObservation:
    key: PairKey
    samples_first: tuple[RunSample, ...]
    samples_second: tuple[RunSample, ...]
    start_skew_max: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "first": self.key.first,
            "second": self.key.second,
            "start_skew_max": self.start_skew_max,
            "samples_first": [s.to_dict() for s in self.samples_first],
            "samples_second": [s.to_dict() for s in self.samples_second],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "PairObservation":
        first = tuple(RunSample.from_dict(s) for s in raw["samples_first"])
        second = tuple(RunSample.from_dict(s) for s in raw["samples_second"])
        if len(first) != len(second) or not first:
            raise ValueError("pair sides must have equal, non-zero sample counts")
        return cls(
            key=PairKey(str(raw["first"]), str(raw["second"])),
            samples_first=first,
            samples_second=second,
            start_skew_max=float(raw["start_skew_max"]),
        )


def _sample(execution: Execution, sequence: Iterator[int]) -> RunSample:
    return RunSample(
        workload_id=execution.workload_id,
        duration=execution.duration,
        exit_ok=execution.exit_code == 0,
        started_at=execution.released_at,
        sequence=next(sequence),
        wall_time=execution.wall_time,
    )


def run_baseline(
    spec: WorkloadSpec, runner: Runner, *, sequence: Iterator[int] | None = None
) -> BaselineProfile:
    """Run ``spec`` alone: discard warmups, then time ``spec.samples`` runs."""
    if spec.samples < 2:
        raise InsufficientSamples(spec.id, spec.samples)
    sequence = sequence if sequence is not None else itertools.count()
    for i in range(spec.warmup_runs):
        (execution,) = runner.execute([spec])
        if execution.exit_code != 0:
            raise NonZeroExit(spec.id, i - spec.warmup_runs, execution.exit_code)
    samples = []
    for i in range(spec.samples):
        (execution,) = runner.execute([spec])
        if execution.exit_code != 0:
            raise NonZeroExit(spec.id, i, execution.exit_code)
        samples.append(_sample(execution, sequence))
    return BaselineProfile.from_samples(spec.id, samples)


def run_pair(
    a: WorkloadSpec,
    b: WorkloadSpec,
    rounds: int,
    runner: Runner,
    *,
    skew_bound: float = DEFAULT_SKEW_BOUND,
    sequence: Iterator[int] | None = None,
) -> PairObservation:
    """Co-run ``a`` and ``b`` for ``rounds`` measured rounds.

    Each round starts both sides together and ends when both have exited.
    ``max(a.warmup_runs, b.warmup_runs)`` unmeasured rounds run first; warmup
    rounds are exempt from the skew bound. Failed warmup rounds are reported
    with a negative round index.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    sequence = sequence if sequence is not None else itertools.count()
    warmup = max(a.warmup_runs, b.warmup_runs)
    for i in range(warmup):
        for execution in runner.execute([a, b]):
            if execution.exit_code != 0:
                raise NonZeroExit(execution.workload_id, i - warmup, execution.exit_code)

    first: list[RunSample] = []
    second: list[RunSample] = []
    skew_max = 0.0
    for r in range(rounds):
        ex_a, ex_b = runner.execute([a, b])
        for execution in (ex_a, ex_b):
            if execution.exit_code != 0:
                raise NonZeroExit(execution.workload_id, r, execution.exit_code)
        skew = abs(ex_a.released_at - ex_b.released_at)
        if skew > skew_bound:
            raise SkewExceeded(a.id, b.id, r, skew, skew_bound)
        skew_max = max(skew_max, skew)
        first.append(_sample(ex_a, sequence))
        second.append(_sample(ex_b, sequence))
    return PairObservation(PairKey(a.id, b.id), tuple(first), tuple(second), skew_max)


# -- campaigns --------------------------------------------------------------------


def campaign_config_hash(
    workloads: WorkloadSet, rounds: int, include_self: bool, skew_bound: float
) -> str:
    payload = {
        "workloads": sorted(workloads.to_list(), key=lambda w: w["id"]),
        "rounds": rounds,
        "include_self": include_self,
        "skew_bound": skew_bound,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class FailureRecord:
    stage: str
    subject: tuple[str, ...]
    error: str
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"stage": self.stage, "subject": list(self.subject), "error": self.error, "message": self.message}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "FailureRecord":
        return cls(str(raw["stage"]), tuple(raw["subject"]), str(raw["error"]), str(raw["message"]))

    @classmethod
    def from_exception(cls, stage: str, subject: tuple[str, ...], exc: Exception) -> "FailureRecord":
        return cls(stage, subject, type(exc).__name__, str(exc))


def _dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, allow_nan=False, separators=(",", ":"))


class CampaignStore:
    """Append-only campaign directory.

    Layout: ``manifest.json`` (config hash), ``samples.jsonl`` (one line per
    measured RunSample), ``baselines.jsonl`` and ``observations.jsonl`` (one
    line per completed unit) and ``errors.jsonl`` (failure ledger).
    """

    MANIFEST = "manifest.json"
    SAMPLES = "samples.jsonl"
    BASELINES = "baselines.jsonl"
    OBSERVATIONS = "observations.jsonl"
    ERRORS = "errors.jsonl"

    def __init__(self, directory: str | os.PathLike[str]):
        self.directory = Path(directory)

    def path(self, name: str) -> Path:
        return self.directory / name

    # manifest --------------------------------------------------------------

    def read_manifest(self) -> dict[str, Any] | None:
        path = self.path(self.MANIFEST)
        if not path.exists():
            return None
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CampaignError(f"{path}: invalid JSON: {exc.msg}") from None
        if not isinstance(manifest, dict) or manifest.get("version") != CAMPAIGN_FORMAT_VERSION:
            raise CampaignError(f"{path}: unsupported manifest")
        return manifest

    def write_manifest(self, manifest: Mapping[str, Any]) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        text = json.dumps(dict(manifest), indent=2, sort_keys=True) + "\n"
        self.path(self.MANIFEST).write_text(text, encoding="utf-8")

    def check_manifest(self, config_hash: str) -> dict[str, Any]:
        manifest = self.read_manifest()
        if manifest is None:
            raise CampaignError(f"no campaign manifest in {self.directory}")
        if manifest.get("config_hash") != config_hash:
            raise ManifestMismatch(
                f"campaign in {self.directory} was started with a different configuration "
                f"(manifest {str(manifest.get('config_hash'))[:12]}, current {config_hash[:12]})"
            )
        return manifest

    def reset(self, *names: str) -> None:
        for name in names:
            self.path(name).unlink(missing_ok=True)

    # records --------------------------------------------------------------

    def _append(self, name: str, records: Iterable[Mapping[str, Any]]) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        lines = "".join(_dumps(r) + "\n" for r in records)
        with open(self.path(name), "a", encoding="utf-8") as fh:
            fh.write(lines)
            fh.flush()
            os.fsync(fh.fileno())

    def _read(self, name: str) -> Iterator[tuple[int, dict[str, Any]]]:
        path = self.path(name)
        if not path.exists():
            return
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorruptRecord(str(path), lineno, exc.msg) from None
                if not isinstance(record, dict):
                    raise CorruptRecord(str(path), lineno, "expected a JSON object")
                yield lineno, record

    def append_baseline(self, profile: BaselineProfile) -> None:
        self._append(
            self.SAMPLES,
            ({"kind": "baseline", "workload_id": profile.workload_id, **s.to_dict()} for s in profile.samples),
        )
        self._append(self.BASELINES, [profile.to_dict()])

    def append_observation(self, obs: PairObservation) -> None:
        def records():
            for s1, s2 in zip(obs.samples_first, obs.samples_second):
                for side, s in (("first", s1), ("second", s2)):
                    yield {"kind": "pair", "first": obs.key.first, "second": obs.key.second, "side": side, **s.to_dict()}

        self._append(self.SAMPLES, records())
        self._append(self.OBSERVATIONS, [obs.to_dict()])

    def record_failure(self, failure: FailureRecord) -> None:
        self._append(self.ERRORS, [failure.to_dict()])

    def load_baselines(self) -> dict[str, BaselineProfile]:
        profiles = {}
        for lineno, record in self._read(self.BASELINES):
            try:
                profile = BaselineProfile.from_dict(record)
            except (KeyError, TypeError, ValueError) as exc:
                raise CorruptRecord(str(self.path(self.BASELINES)), lineno, f"bad baseline record: {exc}") from None
            profiles[profile.workload_id] = profile
        return profiles

    def load_observations(self) -> dict[PairKey, PairObservation]:
        observations = {}
        for lineno, record in self._read(self.OBSERVATIONS):
            try:
                obs = PairObservation.from_dict(record)
            except (KeyError, TypeError, ValueError) as exc:
                raise CorruptRecord(
                    str(self.path(self.OBSERVATIONS)), lineno, f"bad observation record: {exc}"
                ) from None
            observations[obs.key] = obs
        return observations

    def load_failures(self) -> list[FailureRecord]:
        failures = []
        for lineno, record in self._read(self.ERRORS):
            try:
                failures.append(FailureRecord.from_dict(record))
            except (KeyError, TypeError, ValueError) as exc:
                raise CorruptRecord(str(self.path(self.ERRORS)), lineno, f"bad error record: {exc}") from None
        return failures

    def verify_samples(self) -> int:
        """Parse the whole sample log; returns the number of records."""
        return sum(1 for _ in self._read(self.SAMPLES))

    def next_sequence(self) -> int:
        last = -1
        for lineno, record in self._read(self.SAMPLES):
            try:
                last = max(last, int(record["sequence"]))
            except (KeyError, TypeError, ValueError):
                raise CorruptRecord(str(self.path(self.SAMPLES)), lineno, "sample without sequence") from None
        return last + 1


@dataclass
class CampaignResult:
    baselines: dict[str, BaselineProfile] = field(default_factory=dict)
    observations: dict[PairKey, PairObservation] = field(default_factory=dict)
    failures: list[FailureRecord] = field(default_factory=list)
    executed_baselines: list[str] = field(default_factory=list)
    executed_pairs: list[PairKey] = field(default_factory=list)


ProgressCallback = Callable[[int, int, PairKey, str], None]


def run_baselines(
    workloads: WorkloadSet,
    runner: Runner,
    *,
    store: CampaignStore | None = None,
    resume: bool = False,
    sequence: Iterator[int] | None = None,
    result: CampaignResult | None = None,
) -> CampaignResult:
    result = result if result is not None else CampaignResult()
    if sequence is None:
        sequence = itertools.count(store.next_sequence() if store else 0)
    done = store.load_baselines() if (store and resume) else {}
    for spec in sorted(workloads, key=lambda s: s.id):
        if spec.id in done:
            result.baselines[spec.id] = done[spec.id]
            continue
        try:
            profile = run_baseline(spec, runner, sequence=sequence)
        except (HarnessError, InsufficientSamples) as exc:
            failure = FailureRecord.from_exception("baseline", (spec.id,), exc)
            result.failures.append(failure)
            if store:
                store.record_failure(failure)
            continue
        result.baselines[spec.id] = profile
        result.executed_baselines.append(spec.id)
        if store:
            store.append_baseline(profile)
    return result


def run_pairs(
    workloads: WorkloadSet,
    rounds: int,
    runner: Runner,
    *,
    include_self: bool = True,
    skew_bound: float = DEFAULT_SKEW_BOUND,
    store: CampaignStore | None = None,
    resume: bool = False,
    skip_ids: Collection[str] = (),
    sequence: Iterator[int] | None = None,
    progress: ProgressCallback | None = None,
    result: CampaignResult | None = None,
) -> CampaignResult:
    """Co-run every ordered pair; individual pair failures go to the ledger."""
    result = result if result is not None else CampaignResult()
    if sequence is None:
        sequence = itertools.count(store.next_sequence() if store else 0)
    done = store.load_observations() if (store and resume) else {}
    keys = enumerate_pairs(workloads, include_self)
    for index, key in enumerate(keys, start=1):
        if key in done:
            result.observations[key] = done[key]
            status = "cached"
        elif key.first in skip_ids or key.second in skip_ids:
            missing = key.first if key.first in skip_ids else key.second
            failure = FailureRecord("pair", tuple(key), "MissingBaseline", f"no baseline for {missing!r}")
            result.failures.append(failure)
            if store:
                store.record_failure(failure)
            status = "skipped"
        else:
            try:
                obs = run_pair(
                    workloads[key.first], workloads[key.second], rounds, runner,
                    skew_bound=skew_bound, sequence=sequence,
                )
            except HarnessError as exc:
                failure = FailureRecord.from_exception("pair", tuple(key), exc)
                result.failures.append(failure)
                if store:
                    store.record_failure(failure)
                status = "failed"
            else:
                result.observations[key] = obs
                result.executed_pairs.append(key)
                if store:
                    store.append_observation(obs)
                status = "ok"
        if progress:
            progress(index, len(keys), key, status)
    return result


def run_campaign(
    workloads: WorkloadSet,
    rounds: int,
    runner: Runner,
    *,
    include_self: bool = True,
    skew_bound: float = DEFAULT_SKEW_BOUND,
    store: CampaignStore | None = None,
    resume: bool = False,
    progress: ProgressCallback | None = None,
) -> CampaignResult:
    """Baselines for every workload, then every ordered pair.

    With a ``store`` the campaign is persisted as it goes; ``resume`` skips
    units already recorded there (the manifest must match this configuration).
    Pairs involving a workload whose baseline failed are skipped and ledgered.
    """
    if store is not None:
        config_hash = campaign_config_hash(workloads, rounds, include_self, skew_bound)
        if resume and store.read_manifest() is not None:
            store.check_manifest(config_hash)
        else:
            store.reset(store.SAMPLES, store.BASELINES, store.OBSERVATIONS, store.ERRORS)
            store.write_manifest(
                campaign_manifest(workloads, rounds, include_self, skew_bound)
            )
    sequence = itertools.count(store.next_sequence() if store else 0)
    result = run_baselines(workloads, runner, store=store, resume=resume, sequence=sequence)
    failed = [wid for wid in workloads.ids if wid not in result.baselines]
    return run_pairs(
        workloads, rounds, runner,
        include_self=include_self, skew_bound=skew_bound, store=store, resume=resume,
        skip_ids=failed, sequence=sequence, progress=progress, result=result,
    )


def campaign_manifest(
    workloads: WorkloadSet, rounds: int, include_self: bool, skew_bound: float
) -> dict[str, Any]:
    return {
        "version": CAMPAIGN_FORMAT_VERSION,
        "config_hash": campaign_config_hash(workloads, rounds, include_self, skew_bound),
        "workloads": sorted(workloads.ids),
        "rounds": rounds,
        "include_self": include_self,
        "skew_bound": skew_bound,
    }
