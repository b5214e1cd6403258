"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class AffinityError(Exception):
    """Base class for all errors raised by this package."""


# -- workload model ---------------------------------------------------------


class InvalidWorkload(AffinityError, ValueError):
    def __init__(self, workload_id: str, reason: str):
        self.workload_id = workload_id
        super().__init__(f"workload {workload_id!r}: {reason}")


class DuplicateId(InvalidWorkload):
    def __init__(self, workload_id: str):
        super().__init__(workload_id, "duplicate id")


class EmptyCommand(InvalidWorkload):
    def __init__(self, workload_id: str):
        super().__init__(workload_id, "command is empty")


class ZeroSamples(InvalidWorkload):
    def __init__(self, workload_id: str):
        super().__init__(workload_id, "samples must be >= 1")


class ConfigError(AffinityError, ValueError):
    """A configuration or input document is malformed."""


# -- metrics ----------------------------------------------------------------


class NonPositiveDuration(AffinityError, ValueError):
    pass


class InsufficientSamples(AffinityError, ValueError):
    def __init__(self, what: str, count: int | None = None):
        self.what = what
        self.count = count
        detail = "" if count is None else f" (got {count})"
        super().__init__(f"{what}: at least 2 samples required{detail}")


class EmptyInput(AffinityError, ValueError):
    pass


# -- harness ----------------------------------------------------------------


class HarnessError(AffinityError):
    pass


class LaunchFailure(HarnessError):
    def __init__(self, workload_id: str, cause: str):
        self.workload_id = workload_id
        self.cause = cause
        super().__init__(f"could not launch {workload_id!r}: {cause}")


class NonZeroExit(HarnessError):
    def __init__(self, workload_id: str, run_index: int, exit_code: int | None = None):
        self.workload_id = workload_id
        self.run_index = run_index
        self.exit_code = exit_code
        super().__init__(
            f"{workload_id!r} failed on measured run {run_index} (exit code {exit_code})"
        )


class SkewExceeded(HarnessError):
    def __init__(self, first: str, second: str, round_index: int, skew: float, bound: float):
        self.first = first
        self.second = second
        self.round_index = round_index
        self.skew = skew
        self.bound = bound
        super().__init__(
            f"start skew {skew * 1e3:.3f} ms exceeds {bound * 1e3:.3f} ms "
            f"on round {round_index} of ({first}, {second})"
        )


class CampaignError(HarnessError):
    """Campaign directory state is unusable (bad manifest, corrupt log, ...)."""


class ManifestMismatch(CampaignError):
    pass


class CorruptRecord(CampaignError):
    def __init__(self, path: str, line: int, reason: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


# -- affinity store ---------------------------------------------------------


class StoreError(AffinityError):
    pass


class MissingBaseline(StoreError):
    def __init__(self, workload_id: str):
        self.workload_id = workload_id
        super().__init__(f"no baseline for workload {workload_id!r}")


class FormatVersionMismatch(StoreError):
    def __init__(self, found: object, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(f"unsupported format version {found!r} (expected {expected})")


class CorruptEntry(StoreError):
    def __init__(self, key: object, reason: str):
        self.key = key
        super().__init__(f"corrupt entry {key}: {reason}")


# -- scheduler --------------------------------------------------------------


class PlanningError(AffinityError):
    pass


class UnknownWorkload(PlanningError):
    def __init__(self, workload_id: str):
        self.workload_id = workload_id
        super().__init__(f"workload {workload_id!r} is not in the affinity matrix")


class InsufficientCapacity(PlanningError):
    def __init__(self, requests: int, capacity: int):
        self.requests = requests
        self.capacity = capacity
        super().__init__(f"{requests} requests exceed total host capacity {capacity}")


class InstanceTooLarge(PlanningError):
    def __init__(self, size: int, limit: int):
        self.size = size
        self.limit = limit
        super().__init__(f"search space {size} exceeds enumeration limit {limit}")
