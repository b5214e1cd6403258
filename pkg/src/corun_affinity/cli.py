"""``corun-affinity`` command line: baseline -> profile -> matrix -> plan/report.

Exit codes: 0 success, 1 run or feasibility failure, 2 usage/config/data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import (
    AffinityError,
    CampaignError,
    ConfigError,
    InsufficientCapacity,
    InstanceTooLarge,
    PlanningError,
    StoreError,
)
from .harness import (
    DEFAULT_ROUNDS,
    DEFAULT_SKEW_BOUND,
    CampaignStore,
    FakeRunner,
    ProcessRunner,
    Runner,
    campaign_config_hash,
    campaign_manifest,
    run_baselines,
    run_pairs,
)
from .metrics import ClassificationThresholds
from .model import WorkloadSet, enumerate_pairs, parse_workload_document
from .scheduler import (
    DEFAULT_PENALTY,
    Objective,
    explain_plan,
    parse_hosts,
    parse_requests,
    plan_exhaustive,
    plan_greedy,
)
from .store import build_matrix, impact_summary, load_matrix, render_impact, render_matrix_table, save_matrix

log = logging.getLogger("corun_affinity")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
CAMPAIGN_DIR_ENV = "CORUN_AFFINITY_DIR"
DEFAULT_CAMPAIGN_DIR = "corun-campaign"


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    workload_file: Path | None = None
    campaign_dir: Path = Path(DEFAULT_CAMPAIGN_DIR)
    matrix_file: Path | None = None
    thresholds: ClassificationThresholds = field(default_factory=ClassificationThresholds)
    rounds: int = DEFAULT_ROUNDS
    include_self: bool = True
    skew_bound: float = DEFAULT_SKEW_BOUND
    default_penalty: float = DEFAULT_PENALTY
    objective: Objective = field(default_factory=Objective)
    resume: bool = False
    runner: str = "real"
    fake_script: Path | None = None
    max_ratio: float = 1.0
    verify: bool = False
    workloads: WorkloadSet | None = None

    @property
    def matrix_path(self) -> Path:
        return self.matrix_file if self.matrix_file is not None else self.campaign_dir / "matrix.json"

    def config_hash(self) -> str:
        assert self.workloads is not None
        return campaign_config_hash(self.workloads, self.rounds, self.include_self, self.skew_bound)


def parse_thresholds(text: str, base: ClassificationThresholds | None = None) -> ClassificationThresholds:
    """Parse ``coexist=A,dist=D,avoid=V``; omitted keys keep ``base`` values."""
    base = base or ClassificationThresholds()
    names = {"coexist": "coexist_max_avg", "dist": "coexist_max_distance", "avoid": "avoid_min_avg"}
    values = base.to_dict()
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, raw = part.partition("=")
        if not sep or key.strip() not in names:
            raise UsageError(f"bad threshold {part!r}; expected coexist=A,dist=D,avoid=V")
        try:
            values[names[key.strip()]] = float(raw)
        except ValueError:
            raise UsageError(f"threshold {key!r} needs a number, got {raw!r}") from None
    try:
        return ClassificationThresholds(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read_json(path: Path, what: str) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _apply_settings(cfg: CliConfig, settings: Mapping[str, Any], base: Path) -> None:
    if not isinstance(settings, Mapping):
        raise ConfigError("'settings' must be an object")
    try:
        if "campaign_dir" in settings:
            cfg.campaign_dir = base / settings["campaign_dir"]
        if "matrix_file" in settings:
            cfg.matrix_file = base / settings["matrix_file"]
        if "fake_script" in settings:
            cfg.fake_script = base / settings["fake_script"]
        if "rounds" in settings:
            cfg.rounds = int(settings["rounds"])
        if "include_self" in settings:
            cfg.include_self = bool(settings["include_self"])
        if "skew_bound" in settings:
            cfg.skew_bound = float(settings["skew_bound"])
        if "default_penalty" in settings:
            cfg.default_penalty = float(settings["default_penalty"])
        if "max_ratio" in settings:
            cfg.max_ratio = float(settings["max_ratio"])
        if "objective" in settings:
            cfg.objective = Objective.parse(str(settings["objective"]))
        if "thresholds" in settings:
            cfg.thresholds = ClassificationThresholds(**{**cfg.thresholds.to_dict(), **settings["thresholds"]})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad settings value: {exc}") from None


def resolve_config(args: argparse.Namespace, environ: Mapping[str, str] | None = None) -> CliConfig:
    """Merge defaults, the config file's ``settings``, the environment and flags."""
    environ = os.environ if environ is None else environ
    cfg = CliConfig()
    if args.config:
        path = Path(args.config)
        doc = _read_json(path, "config file")
        cfg.workload_file = path
        cfg.workloads = parse_workload_document(doc)
        if isinstance(doc, Mapping) and "settings" in doc:
            _apply_settings(cfg, doc["settings"], path.parent)
    if environ.get(CAMPAIGN_DIR_ENV):
        cfg.campaign_dir = Path(environ[CAMPAIGN_DIR_ENV])
    if args.campaign_dir:
        cfg.campaign_dir = Path(args.campaign_dir)
    if args.matrix_file:
        cfg.matrix_file = Path(args.matrix_file)
    if args.rounds is not None:
        cfg.rounds = args.rounds
    if args.include_self is not None:
        cfg.include_self = args.include_self
    if args.skew_bound is not None:
        cfg.skew_bound = args.skew_bound
    if args.default_penalty is not None:
        cfg.default_penalty = args.default_penalty
    if args.max_ratio is not None:
        cfg.max_ratio = args.max_ratio
    if args.fake_script:
        cfg.fake_script = Path(args.fake_script)
    if args.objective:
        try:
            cfg.objective = Objective.parse(args.objective)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.thresholds:
        cfg.thresholds = parse_thresholds(args.thresholds, cfg.thresholds)
    cfg.resume = args.resume
    cfg.runner = args.runner
    cfg.verify = getattr(args, "verify", False)
    if cfg.rounds < 1:
        raise UsageError("--rounds must be >= 1")
    if cfg.skew_bound < 0:
        raise UsageError("--skew-bound must be >= 0")
    if cfg.default_penalty < 0:
        raise UsageError("--default-penalty must be >= 0")
    if cfg.max_ratio < 1.0:
        raise UsageError("--max-ratio must be >= 1")
    return cfg


def _need_workloads(cfg: CliConfig) -> WorkloadSet:
    if cfg.workloads is None:
        raise UsageError("this command needs --config <workload file>")
    return cfg.workloads


def make_runner(cfg: CliConfig) -> Runner:
    if cfg.runner == "fake":
        if cfg.fake_script is None:
            raise UsageError("--runner fake needs --fake-script <file>")
        try:
            return FakeRunner.from_dict(_read_json(cfg.fake_script, "fake script"))
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad fake script {cfg.fake_script}: {exc}") from None
    return ProcessRunner()


def _print_failures(failures) -> None:
    for f in failures:
        print(f"error: {f.stage} {'/'.join(f.subject)}: {f.error}: {f.message}", file=sys.stderr)


# -- subcommands --------------------------------------------------------------------


def cmd_baseline(cfg: CliConfig, out=sys.stdout) -> int:
    workloads = _need_workloads(cfg)
    runner = make_runner(cfg)
    store = CampaignStore(cfg.campaign_dir)
    if cfg.resume and store.read_manifest() is not None:
        store.check_manifest(cfg.config_hash())
    else:
        store.reset(store.SAMPLES, store.BASELINES, store.OBSERVATIONS, store.ERRORS)
        store.write_manifest(campaign_manifest(workloads, cfg.rounds, cfg.include_self, cfg.skew_bound))
    result = run_baselines(workloads, runner, store=store, resume=cfg.resume)

    print(f"{'workload':<24} {'mean s':>12} {'stddev s':>12} {'ci95 s':>27}", file=out)
    for wid in sorted(result.baselines):
        p = result.baselines[wid]
        ci = f"[{p.ci95[0]:.6f}, {p.ci95[1]:.6f}]"
        print(f"{wid:<24} {p.mean:>12.6f} {p.stddev:>12.6f} {ci:>27}", file=out)
    print(f"baselines run: {len(result.executed_baselines)}, reused: "
          f"{len(result.baselines) - len(result.executed_baselines)}, failed: {len(result.failures)}", file=out)
    _print_failures(result.failures)
    return EXIT_FAILURE if result.failures else EXIT_OK


def _checked_store(cfg: CliConfig) -> CampaignStore:
    store = CampaignStore(cfg.campaign_dir)
    if store.read_manifest() is None:
        raise CampaignError(f"no campaign in {cfg.campaign_dir}; run 'baseline' first")
    store.check_manifest(cfg.config_hash())
    return store


def cmd_profile(cfg: CliConfig, out=sys.stdout) -> int:
    workloads = _need_workloads(cfg)
    store = _checked_store(cfg)
    baselines = store.load_baselines()
    missing = [wid for wid in workloads.ids if wid not in baselines]
    if missing:
        raise CampaignError(f"missing baselines for {', '.join(missing)}; run 'baseline' first")
    runner = make_runner(cfg)
    if not cfg.resume:
        store.reset(store.OBSERVATIONS)

    def progress(done: int, total: int, key, status: str) -> None:
        print(f"[{done}/{total}] {key.first} x {key.second}: {status}", file=out)

    result = run_pairs(
        workloads, cfg.rounds, runner,
        include_self=cfg.include_self, skew_bound=cfg.skew_bound,
        store=store, resume=cfg.resume, progress=progress,
    )
    print(f"pairs run: {len(result.executed_pairs)}, reused: "
          f"{len(result.observations) - len(result.executed_pairs)}, failed: {len(result.failures)}", file=out)
    _print_failures(result.failures)
    return EXIT_FAILURE if result.failures else EXIT_OK


def cmd_matrix(cfg: CliConfig, out=sys.stdout) -> int:
    workloads = _need_workloads(cfg)
    store = _checked_store(cfg)
    log.debug("sample log holds %d records", store.verify_samples())
    baselines = store.load_baselines()
    observations = store.load_observations()
    if not observations:
        raise CampaignError(f"no pair observations in {cfg.campaign_dir}; run 'profile' first")
    matrix = build_matrix(
        baselines, observations, cfg.thresholds, workloads=workloads, provenance=cfg.config_hash()
    )
    path = cfg.matrix_path
    save_matrix(matrix, path)
    table = render_matrix_table(matrix)
    csv_path = path.with_suffix(".csv")
    csv_path.write_text(table.to_csv(), encoding="utf-8", newline="")
    out.write(table.grid)
    gaps = [k for k in enumerate_pairs(workloads, cfg.include_self) if k not in matrix.entries]
    if gaps:
        print(f"warning: {len(gaps)} pair(s) have no observation: "
              + ", ".join(f"{k.first} x {k.second}" for k in gaps), file=sys.stderr)
    print(f"matrix: {len(matrix)} entries -> {path} (cells: {csv_path})", file=out)
    return EXIT_OK


def cmd_plan(cfg: CliConfig, requests_file: str, hosts_file: str, plan_out: str | None, out=sys.stdout) -> int:
    matrix = load_matrix(cfg.matrix_path)
    requests = parse_requests(_read_json(Path(requests_file), "requests file"))
    hosts = parse_hosts(_read_json(Path(hosts_file), "hosts file"))
    try:
        plan = plan_greedy(requests, hosts, matrix, cfg.objective, cfg.default_penalty)
    except InsufficientCapacity as exc:
        print(f"error: InsufficientCapacity: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    target = Path(plan_out) if plan_out else cfg.matrix_path.with_name(cfg.matrix_path.stem + ".plan.json")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(plan.to_json(), encoding="utf-8")
    target.with_suffix(".csv").write_text(plan.to_csv(), encoding="utf-8", newline="")
    out.write(explain_plan(plan, matrix))
    print(f"greedy cost: {plan.scalar_cost:.6f}", file=out)

    status = EXIT_OK
    if cfg.verify:
        try:
            best = plan_exhaustive(requests, hosts, matrix, cfg.objective, cfg.default_penalty)
        except InstanceTooLarge as exc:
            print(f"verify: skipped ({exc})", file=out)
        else:
            g, e = plan.scalar_cost, best.scalar_cost
            ratio = (g / e) if e > 0 else (1.0 if g == 0 else float("inf"))
            print(f"exhaustive cost: {e:.6f}", file=out)
            print(f"greedy/exhaustive ratio: {ratio:.6f} (limit {cfg.max_ratio})", file=out)
            if ratio > cfg.max_ratio + 1e-12:
                print("verify: greedy plan exceeds the allowed ratio", file=sys.stderr)
                status = EXIT_FAILURE
    print(f"plan -> {target}", file=out)
    return status


def cmd_report(cfg: CliConfig, out=sys.stdout, thresholds_given: bool = False) -> int:
    matrix = load_matrix(cfg.matrix_path)
    if thresholds_given:
        matrix = matrix.reclassify(cfg.thresholds)
    out.write(render_matrix_table(matrix).grid)
    counts: dict[str, int] = {}
    for e in matrix.entries.values():
        counts[e.classification.value] = counts.get(e.classification.value, 0) + 1
    print("", file=out)
    print("classes: " + ", ".join(f"{k}={counts.get(k, 0)}" for k in ("coexist", "conditional", "avoid")), file=out)
    print("", file=out)
    out.write(render_impact(impact_summary(matrix)))
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="workload/config JSON file")
    common.add_argument("--campaign-dir", help=f"campaign directory (env {CAMPAIGN_DIR_ENV})")
    common.add_argument("--matrix-file", help="affinity matrix JSON (default <campaign-dir>/matrix.json)")
    common.add_argument("--resume", action="store_true", help="reuse already persisted results")
    common.add_argument("--runner", choices=("real", "fake"), default="real")
    common.add_argument("--fake-script", help="scripted timings for --runner fake")
    common.add_argument("--rounds", type=int, help=f"measured co-run rounds per pair (default {DEFAULT_ROUNDS})")
    common.add_argument("--include-self", action=argparse.BooleanOptionalAction, default=None,
                        help="co-run each workload with itself (default on)")
    common.add_argument("--skew-bound", type=float, help="max start skew in seconds (default 0.05)")
    common.add_argument("--objective", help="avg | stability | lex | weighted:<alpha>")
    common.add_argument("--thresholds", help="coexist=A,dist=D,avoid=V")
    common.add_argument("--default-penalty", type=float, help="cost of unmeasured pairs (default 200)")
    common.add_argument("--max-ratio", type=float, help="allowed greedy/exhaustive cost ratio with --verify")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="corun-affinity", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("baseline", parents=[common], help="solo-run every workload")
    sub.add_parser("profile", parents=[common], help="co-run every ordered workload pair")
    sub.add_parser("matrix", parents=[common], help="build, save and print the affinity matrix")
    plan = sub.add_parser("plan", parents=[common], help="place requests onto hosts")
    plan.add_argument("--requests", required=True, help="requests JSON file")
    plan.add_argument("--hosts", required=True, help="hosts JSON file")
    plan.add_argument("--plan-out", help="plan JSON output (CSV written alongside)")
    plan.add_argument("--verify", action="store_true", help="cross-check against the exhaustive planner")
    sub.add_parser("report", parents=[common], help="print the matrix grid and impact summary")
    return parser


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        log.debug("campaign dir %s, matrix file %s, runner %s", cfg.campaign_dir, cfg.matrix_path, cfg.runner)
        if args.command == "baseline":
            return cmd_baseline(cfg, out)
        if args.command == "profile":
            return cmd_profile(cfg, out)
        if args.command == "matrix":
            return cmd_matrix(cfg, out)
        if args.command == "plan":
            return cmd_plan(cfg, args.requests, args.hosts, args.plan_out, out)
        return cmd_report(cfg, out, thresholds_given=bool(args.thresholds))
    except InsufficientCapacity as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (UsageError, ConfigError, CampaignError, StoreError, PlanningError, AffinityError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
