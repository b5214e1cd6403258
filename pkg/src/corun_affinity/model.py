"""Workload descriptions, pair keys and the workload configuration file."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, ClassVar, Iterable, Iterator, Mapping, NamedTuple, Sequence

from .errors import ConfigError, DuplicateId, EmptyCommand, InvalidWorkload, ZeroSamples

WORKLOAD_FILE_VERSION = 1
DEFAULT_WARMUP_RUNS = 1
DEFAULT_SAMPLES = 20


class EnvironmentKind(str, Enum):
    REAL = "real"
    VIRTUAL = "virtual"

    @classmethod
    def parse(cls, label: str) -> "EnvironmentKind":
        try:
            return cls(label.strip().lower())
        except ValueError:
            raise ValueError(f"unknown environment {label!r}; expected 'real' or 'virtual'") from None

    @property
    def label(self) -> str:
        return self.value


@dataclass(frozen=True, order=True)
class LibraryKind:
    """Parallel library used by a workload.

    ``shared_memory`` covers OpenMP-style runtimes and ``heterogeneous``
    covers OpenCL-style runtimes. Any other label is kept as an open variant.
    """

    name: str

    SHARED_MEMORY: ClassVar["LibraryKind"]
    HETEROGENEOUS: ClassVar["LibraryKind"]

    def __post_init__(self) -> None:
        normalized = self.name.strip().lower()
        if not normalized:
            raise ValueError("library label must be non-empty")
        object.__setattr__(self, "name", normalized)

    @classmethod
    def parse(cls, label: str) -> "LibraryKind":
        return cls(label)

    @property
    def is_other(self) -> bool:
        return self.name not in _BUILTIN_LIBRARIES

    @property
    def label(self) -> str:
        return self.name

    def __str__(self) -> str:
        return self.name


_BUILTIN_LIBRARIES = ("shared_memory", "heterogeneous")
LibraryKind.SHARED_MEMORY = LibraryKind("shared_memory")
LibraryKind.HETEROGENEOUS = LibraryKind("heterogeneous")


class DwarfClass(str, Enum):
    """The thirteen Berkeley dwarfs plus an explicit unclassified marker."""

    DENSE_LINEAR_ALGEBRA = "dense_linear_algebra"
    SPARSE_LINEAR_ALGEBRA = "sparse_linear_algebra"
    SPECTRAL_METHODS = "spectral_methods"
    N_BODY = "n_body"
    STRUCTURED_GRID = "structured_grid"
    UNSTRUCTURED_GRID = "unstructured_grid"
    MAPREDUCE = "mapreduce"
    COMBINATIONAL_LOGIC = "combinational_logic"
    GRAPH_TRAVERSAL = "graph_traversal"
    DYNAMIC_PROGRAMMING = "dynamic_programming"
    BACKTRACK_BRANCH_AND_BOUND = "backtrack_branch_and_bound"
    GRAPHICAL_MODELS = "graphical_models"
    FINITE_STATE_MACHINE = "finite_state_machine"
    UNCLASSIFIED = "unclassified"

    @classmethod
    def parse(cls, label: str) -> "DwarfClass":
        try:
            return cls(label.strip().lower())
        except ValueError:
            raise ValueError(f"unknown dwarf class {label!r}") from None

    @property
    def label(self) -> str:
        return self.value


@dataclass(frozen=True)
class WorkloadSpec:
    id: str
    command: tuple[str, ...]
    dwarf: DwarfClass = DwarfClass.UNCLASSIFIED
    library: LibraryKind = LibraryKind.SHARED_MEMORY
    environment: EnvironmentKind = EnvironmentKind.REAL
    working_dir: str | None = None
    env_vars: Mapping[str, str] = field(default_factory=dict)
    warmup_runs: int = DEFAULT_WARMUP_RUNS
    samples: int = DEFAULT_SAMPLES

    def __post_init__(self) -> None:
        object.__setattr__(self, "command", tuple(self.command))
        object.__setattr__(self, "env_vars", dict(self.env_vars))

    def check(self) -> None:
        """Raise the first invariant violation found on this spec."""
        if not isinstance(self.id, str) or not self.id.strip():
            raise InvalidWorkload(str(self.id), "id must be a non-empty string")
        if not self.command or not self.command[0]:
            raise EmptyCommand(self.id)
        if self.samples < 1:
            raise ZeroSamples(self.id)
        if self.warmup_runs < 0:
            raise InvalidWorkload(self.id, "warmup_runs must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "dwarf": self.dwarf.label,
            "library": self.library.label,
            "environment": self.environment.label,
            "command": list(self.command),
            "working_dir": self.working_dir,
            "env_vars": dict(sorted(self.env_vars.items())),
            "warmup_runs": self.warmup_runs,
            "samples": self.samples,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "WorkloadSpec":
        if not isinstance(raw, Mapping):
            raise ConfigError(f"workload entry must be an object, got {type(raw).__name__}")
        wid = raw.get("id")
        if not isinstance(wid, str):
            raise ConfigError(f"workload entry is missing a string 'id': {raw!r}")
        unknown = set(raw) - _SPEC_FIELDS
        if unknown:
            raise ConfigError(f"workload {wid!r}: unknown fields {sorted(unknown)}")
        command = raw.get("command", [])
        if isinstance(command, str) or not isinstance(command, list):
            raise ConfigError(f"workload {wid!r}: 'command' must be a list of strings")
        env_vars = raw.get("env_vars") or {}
        if not isinstance(env_vars, Mapping):
            raise ConfigError(f"workload {wid!r}: 'env_vars' must be an object")
        try:
            return cls(
                id=wid,
                command=tuple(str(part) for part in command),
                dwarf=DwarfClass.parse(raw.get("dwarf", "unclassified")),
                library=LibraryKind.parse(raw.get("library", "shared_memory")),
                environment=EnvironmentKind.parse(raw.get("environment", "real")),
                working_dir=raw.get("working_dir"),
                env_vars={str(k): str(v) for k, v in env_vars.items()},
                warmup_runs=_as_int(raw.get("warmup_runs", DEFAULT_WARMUP_RUNS), wid, "warmup_runs"),
                samples=_as_int(raw.get("samples", DEFAULT_SAMPLES), wid, "samples"),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"workload {wid!r}: {exc}") from None


_SPEC_FIELDS = frozenset(
    ["id", "dwarf", "library", "environment", "command", "working_dir", "env_vars", "warmup_runs", "samples"]
)


def _as_int(value: Any, wid: str, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"workload {wid!r}: {name!r} must be an integer")
    return value


class PairKey(NamedTuple):
    """Ordered workload pair. ``(a, b)`` and ``(b, a)`` are different keys."""

    first: str
    second: str

    def reversed(self) -> "PairKey":
        return PairKey(self.second, self.first)

    def __str__(self) -> str:
        return f"({self.first}, {self.second})"


class WorkloadSet:
    """Validated, immutable collection of workloads keyed by id."""

    def __init__(self, specs: Iterable[WorkloadSpec]):
        self._specs = tuple(specs)
        self._by_id = {spec.id: spec for spec in self._specs}

    def __iter__(self) -> Iterator[WorkloadSpec]:
        return iter(self._specs)

    def __len__(self) -> int:
        return len(self._specs)

    def __contains__(self, workload_id: object) -> bool:
        return workload_id in self._by_id

    def __getitem__(self, workload_id: str) -> WorkloadSpec:
        return self._by_id[workload_id]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorkloadSet):
            return NotImplemented
        return self._specs == other._specs

    def __repr__(self) -> str:
        return f"WorkloadSet({list(self.ids)!r})"

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(spec.id for spec in self._specs)

    def to_list(self) -> list[dict[str, Any]]:
        return [spec.to_dict() for spec in self._specs]


def validate_workload_set(specs: Sequence[WorkloadSpec]) -> WorkloadSet:
    """Check every spec and id uniqueness, raising on the first offender."""
    seen: set[str] = set()
    for spec in specs:
        spec.check()
        if spec.id in seen:
            raise DuplicateId(spec.id)
        seen.add(spec.id)
    return WorkloadSet(specs)


def enumerate_pairs(workloads: Iterable[WorkloadSpec] | WorkloadSet, include_self: bool = True) -> list[PairKey]:
    ids = sorted(spec.id for spec in workloads)
    return [PairKey(a, b) for a in ids for b in ids if include_self or a != b]


def parse_workload_document(doc: Any) -> WorkloadSet:
    if not isinstance(doc, Mapping):
        raise ConfigError("workload file must contain a JSON object")
    version = doc.get("version")
    if version != WORKLOAD_FILE_VERSION:
        raise ConfigError(f"workload file version must be {WORKLOAD_FILE_VERSION}, got {version!r}")
    entries = doc.get("workloads")
    if not isinstance(entries, list):
        raise ConfigError("workload file needs a 'workloads' array")
    return validate_workload_set([WorkloadSpec.from_dict(entry) for entry in entries])


def load_workloads(path: str | os.PathLike[str]) -> WorkloadSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read workload file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_workload_document(doc)


def dump_workloads(workloads: WorkloadSet) -> dict[str, Any]:
    return {"version": WORKLOAD_FILE_VERSION, "workloads": workloads.to_list()}
