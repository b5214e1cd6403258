"""Affinity-aware placement of workload requests onto hosts."""

from __future__ import annotations

import csv
import functools
import io
import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .errors import ConfigError, InstanceTooLarge, InsufficientCapacity, PlanningError, UnknownWorkload
from .metrics import AffinityClass
from .model import PairKey
from .store import AffinityMatrix

DEFAULT_PENALTY = 200.0
DEFAULT_ENUMERATION_LIMIT = 10**6
DEFAULT_ZERO_SEARCH_BUDGET = 100_000
DEFAULT_IMPROVEMENT_ROUNDS = 1_000
_EPS = 1e-9
PLAN_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Host:
    id: str
    capacity: int

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("host id must be non-empty")
        if self.capacity < 1:
            raise ValueError(f"host {self.id!r}: capacity must be >= 1")


@dataclass(frozen=True)
class PlacementRequest:
    request_id: str
    workload_id: str


class ObjectiveKind(str, Enum):
    MIN_AVERAGE_LOSS = "avg"
    MIN_INSTABILITY = "stability"
    LEXICOGRAPHIC = "lex"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind = ObjectiveKind.MIN_AVERAGE_LOSS
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @classmethod
    def min_average_loss(cls) -> "Objective":
        return cls(ObjectiveKind.MIN_AVERAGE_LOSS)

    @classmethod
    def min_instability(cls) -> "Objective":
        return cls(ObjectiveKind.MIN_INSTABILITY)

    @classmethod
    def lexicographic(cls) -> "Objective":
        return cls(ObjectiveKind.LEXICOGRAPHIC)

    @classmethod
    def weighted(cls, alpha: float) -> "Objective":
        return cls(ObjectiveKind.WEIGHTED, alpha)

    @classmethod
    def parse(cls, text: str) -> "Objective":
        """Parse ``avg``, ``stability``, ``lex`` or ``weighted:<alpha>``."""
        name, _, arg = text.strip().lower().partition(":")
        if name == "weighted":
            try:
                return cls.weighted(float(arg))
            except ValueError:
                raise ValueError(f"bad weighted objective {text!r}; use weighted:<alpha in [0,1]>") from None
        try:
            kind = ObjectiveKind(name)
        except ValueError:
            raise ValueError(f"unknown objective {text!r}") from None
        if arg:
            raise ValueError(f"objective {name!r} takes no argument")
        return cls(kind)

    def __str__(self) -> str:
        if self.kind is ObjectiveKind.WEIGHTED:
            return f"weighted:{self.alpha!r}"
        return self.kind.value

    def cost(self, average_loss: float, instability: float) -> tuple[float, ...]:
        """Comparable cost key; lower is better."""
        if self.kind is ObjectiveKind.MIN_AVERAGE_LOSS:
            return (average_loss,)
        if self.kind is ObjectiveKind.MIN_INSTABILITY:
            return (instability,)
        if self.kind is ObjectiveKind.LEXICOGRAPHIC:
            return (average_loss, instability)
        return (self.alpha * average_loss + (1.0 - self.alpha) * instability,)

    def scalar(self, average_loss: float, instability: float) -> float:
        """Single number used for ratios; the primary criterion for ``lex``."""
        return self.cost(average_loss, instability)[0]


@dataclass(frozen=True)
class PairCost:
    key: PairKey
    average: float
    distance: float
    classification: AffinityClass | None
    penalty: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "first": self.key.first,
            "second": self.key.second,
            "average": self.average,
            "distance": self.distance,
            "classification": None if self.classification is None else self.classification.value,
            "default_penalty": self.penalty,
        }


@dataclass(frozen=True)
class HostCost:
    average_loss: float
    instability: float
    pairs: tuple[PairCost, ...] = ()

    @property
    def missing(self) -> tuple[PairKey, ...]:
        return tuple(p.key for p in self.pairs if p.penalty)


def _pair_cost(u: str, v: str, matrix: AffinityMatrix, default_penalty: float) -> PairCost:
    key = PairKey(u, v)
    found = matrix.lookup_either(key)
    if found is None:
        return PairCost(key, default_penalty, default_penalty, None, True)
    entry, _ = found
    return PairCost(entry.key, max(entry.average, 0.0), entry.distance, entry.classification, False)


def predict_host_cost(
    residents: Iterable[str], matrix: AffinityMatrix, default_penalty: float = DEFAULT_PENALTY
) -> HostCost:
    """Sum pair averages and distances over all unordered resident pairs.

    Hosts with more than two residents are costed pairwise-additively: the
    matrix holds measured pairs only, so this is an approximation. Unmeasured
    pairs cost ``default_penalty`` on both sums. Negative averages count as 0.
    """
    ids = sorted(residents)
    for wid in ids:
        if wid not in matrix.workloads:
            raise UnknownWorkload(wid)
    pairs = tuple(_pair_cost(u, v, matrix, default_penalty) for u, v in itertools.combinations(ids, 2))
    return HostCost(
        average_loss=sum(p.average for p in pairs),
        instability=sum(p.distance for p in pairs),
        pairs=pairs,
    )


@dataclass(frozen=True)
class PlacementPlan:
    assignment: Mapping[str, str]
    total_average_loss: float
    total_instability: float
    per_host_breakdown: Mapping[str, HostCost]
    missing_pairs: tuple[PairKey, ...] = ()
    objective: Objective = field(default_factory=Objective)

    @property
    def cost(self) -> tuple[float, ...]:
        return self.objective.cost(self.total_average_loss, self.total_instability)

    @property
    def scalar_cost(self) -> float:
        return self.objective.scalar(self.total_average_loss, self.total_instability)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": PLAN_FORMAT_VERSION,
            "objective": str(self.objective),
            "assignment": dict(self.assignment),
            "total_average_loss": self.total_average_loss,
            "total_instability": self.total_instability,
            "missing_pairs": [list(k) for k in self.missing_pairs],
            "breakdown": {
                host: {
                    "average_loss": hc.average_loss,
                    "instability": hc.instability,
                    "pairs": [p.to_dict() for p in hc.pairs],
                }
                for host, hc in self.per_host_breakdown.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["request_id", "host_id"])
        for rid, host in self.assignment.items():
            writer.writerow([rid, host])
        return buf.getvalue()


def _check_instance(requests: Sequence[PlacementRequest], hosts: Sequence[Host], matrix: AffinityMatrix) -> None:
    seen_r = Counter(r.request_id for r in requests)
    dup = [rid for rid, n in seen_r.items() if n > 1]
    if dup:
        raise PlanningError(f"duplicate request id {dup[0]!r}")
    seen_h = Counter(h.id for h in hosts)
    dup = [hid for hid, n in seen_h.items() if n > 1]
    if dup:
        raise PlanningError(f"duplicate host id {dup[0]!r}")
    for r in requests:
        if r.workload_id not in matrix.workloads:
            raise UnknownWorkload(r.workload_id)
    capacity = sum(h.capacity for h in hosts)
    if len(requests) > capacity:
        raise InsufficientCapacity(len(requests), capacity)


def build_plan(
    assignment: Mapping[str, str],
    requests: Sequence[PlacementRequest],
    hosts: Sequence[Host],
    matrix: AffinityMatrix,
    objective: Objective,
    default_penalty: float = DEFAULT_PENALTY,
) -> PlacementPlan:
    """Cost a complete assignment; hosts and requests are reported in id order."""
    workload_of = {r.request_id: r.workload_id for r in requests}
    residents: dict[str, list[str]] = {h.id: [] for h in sorted(hosts, key=lambda h: h.id)}
    for rid in sorted(assignment):
        residents[assignment[rid]].append(workload_of[rid])
    breakdown = {hid: predict_host_cost(ws, matrix, default_penalty) for hid, ws in residents.items()}
    total_avg = 0.0
    total_inst = 0.0
    missing: list[PairKey] = []
    for hc in breakdown.values():
        total_avg += hc.average_loss
        total_inst += hc.instability
        missing.extend(hc.missing)
    return PlacementPlan(
        assignment={rid: assignment[rid] for rid in sorted(assignment)},
        total_average_loss=total_avg,
        total_instability=total_inst,
        per_host_breakdown=breakdown,
        missing_pairs=tuple(missing),
        objective=objective,
    )


def _sub(a: tuple[float, ...], b: tuple[float, ...]) -> tuple[float, ...]:
    return tuple(x - y for x, y in zip(a, b))


def plan_greedy(
    requests: Sequence[PlacementRequest],
    hosts: Sequence[Host],
    matrix: AffinityMatrix,
    objective: Objective | None = None,
    default_penalty: float = DEFAULT_PENALTY,
    zero_search_budget: int = DEFAULT_ZERO_SEARCH_BUDGET,
    improvement_rounds: int = DEFAULT_IMPROVEMENT_ROUNDS,
) -> PlacementPlan:
    """Worst-first greedy placement.

    Requests are taken in descending order of their worst pairwise average
    against the other requested workloads (ties by request id). Each goes to
    the feasible host whose objective rises least (ties by host id).

    The one-pass result is then polished by local search: single moves into
    spare capacity and swaps between hosts, each accepted only if it lowers
    the objective, for at most ``improvement_rounds`` accepted steps.

    If the result still carries cost, a bounded search for a zero-cost
    packing runs (``zero_search_budget`` nodes; 0 disables it) and its
    result is used when found.
    """
    objective = objective or Objective()
    _check_instance(requests, hosts, matrix)
    hosts = sorted(hosts, key=lambda h: h.id)

    def worst(r: PlacementRequest) -> float:
        others = [o for o in requests if o.request_id != r.request_id]
        return max(
            (_pair_cost(*sorted((r.workload_id, o.workload_id)), matrix, default_penalty).average for o in others),
            default=0.0,
        )

    order = sorted(requests, key=lambda r: (-worst(r), r.request_id))

    @functools.lru_cache(maxsize=None)
    def pair(u: str, v: str) -> tuple[float, float]:
        p = _pair_cost(*sorted((u, v)), matrix, default_penalty)
        return p.average, p.distance

    def marginal(workload: str, current: list[str]) -> tuple[float, ...]:
        avg = inst = 0.0
        for w in current:
            a, i = pair(workload, w)
            avg += a
            inst += i
        return objective.cost(avg, inst)

    residents: dict[str, list[str]] = {h.id: [] for h in hosts}
    assignment: dict[str, str] = {}
    for r in order:
        best_host = None
        best_delta = None
        for h in hosts:
            current = residents[h.id]
            if len(current) >= h.capacity:
                continue
            delta = marginal(r.workload_id, current)
            if best_delta is None or delta < best_delta:
                best_host, best_delta = h.id, delta
        assert best_host is not None
        residents[best_host].append(r.workload_id)
        assignment[r.request_id] = best_host
    if improvement_rounds > 0:
        assignment = _improve(assignment, requests, hosts, pair, objective, improvement_rounds)
    plan = build_plan(assignment, requests, hosts, matrix, objective, default_penalty)
    if any(plan.cost) and zero_search_budget > 0:
        # One pass can strand a request next to its only incompatible peers;
        # look for an interference-free packing before settling.
        perfect = _zero_cost_assignment(order, hosts, marginal, zero_search_budget)
        if perfect is not None:
            plan = build_plan(perfect, requests, hosts, matrix, objective, default_penalty)
    return plan


def _lower(a: tuple[float, ...], b: tuple[float, ...]) -> bool:
    """``a < b`` lexicographically, ignoring float noise below _EPS."""
    for x, y in zip(a, b):
        if x < y - _EPS:
            return True
        if x > y + _EPS:
            return False
    return False


def _improve(assignment, requests, hosts, pair, objective, rounds: int) -> dict[str, str]:
    """First-improvement local search over moves and swaps, in id order."""
    workload_of = {r.request_id: r.workload_id for r in requests}
    capacity = {h.id: h.capacity for h in hosts}
    members: dict[str, list[str]] = {h.id: [] for h in hosts}
    for rid in sorted(assignment):
        members[assignment[rid]].append(rid)
    rids = sorted(assignment)
    assignment = dict(assignment)

    def pair_sums(rid: str, others: Iterable[str]) -> tuple[float, float]:
        avg = inst = 0.0
        for o in others:
            a, i = pair(workload_of[rid], workload_of[o])
            avg += a
            inst += i
        return avg, inst

    def delta(moves: list[tuple[str, str, str]]) -> tuple[float, ...]:
        # moves: (request, from_host, to_host); applied together
        moving = {rid for rid, _, _ in moves}
        avg = inst = 0.0
        for rid, src, dst in moves:
            stay_src = [o for o in members[src] if o not in moving]
            stay_dst = [o for o in members[dst] if o not in moving]
            a_out, i_out = pair_sums(rid, stay_src)
            a_in, i_in = pair_sums(rid, stay_dst)
            avg += a_in - a_out
            inst += i_in - i_out
        return objective.cost(avg, inst)

    zero = objective.cost(0.0, 0.0)
    for _ in range(rounds):
        step = None
        for i, rid in enumerate(rids):
            src = assignment[rid]
            for h in hosts:
                if h.id != src and len(members[h.id]) < capacity[h.id]:
                    if _lower(delta([(rid, src, h.id)]), zero):
                        step = [(rid, src, h.id)]
                        break
            if step:
                break
            for other in rids[i + 1:]:
                dst = assignment[other]
                if dst == src or workload_of[other] == workload_of[rid]:
                    continue
                swap = [(rid, src, dst), (other, dst, src)]
                if _lower(delta(swap), zero):
                    step = swap
                    break
            if step:
                break
        if step is None:
            break
        for rid, src, dst in step:
            members[src].remove(rid)
            members[dst].append(rid)
            assignment[rid] = dst
    return assignment


def _zero_cost_assignment(order, hosts, marginal, budget: int) -> dict[str, str] | None:
    """Depth-first search over placements that add no cost at all.

    Interchangeable empty hosts (same capacity) are tried once. Returns None
    when no such packing exists or ``budget`` search nodes are used up.
    """
    residents: dict[str, list[str]] = {h.id: [] for h in hosts}
    assignment: dict[str, str] = {}
    nodes = 0

    def place(i: int) -> bool:
        nonlocal nodes
        if i == len(order):
            return True
        r = order[i]
        tried_empty: set[int] = set()
        for h in hosts:
            current = residents[h.id]
            if len(current) >= h.capacity:
                continue
            if not current:
                if h.capacity in tried_empty:
                    continue
                tried_empty.add(h.capacity)
            nodes += 1
            if nodes > budget:
                return False
            if any(marginal(r.workload_id, current)):
                continue
            current.append(r.workload_id)
            assignment[r.request_id] = h.id
            if place(i + 1):
                return True
            current.pop()
            del assignment[r.request_id]
        return False

    return dict(assignment) if place(0) else None


def plan_exhaustive(
    requests: Sequence[PlacementRequest],
    hosts: Sequence[Host],
    matrix: AffinityMatrix,
    objective: Objective | None = None,
    default_penalty: float = DEFAULT_PENALTY,
    limit: int = DEFAULT_ENUMERATION_LIMIT,
) -> PlacementPlan:
    """Objective-optimal plan by enumerating every host assignment.

    Ties go to the lexicographically smallest assignment vector (host ids
    listed in request-id order).
    """
    objective = objective or Objective()
    _check_instance(requests, hosts, matrix)
    size = len(hosts) ** len(requests)
    if size > limit:
        raise InstanceTooLarge(size, limit)
    hosts = sorted(hosts, key=lambda h: h.id)
    reqs = sorted(requests, key=lambda r: r.request_id)
    capacity = [h.capacity for h in hosts]

    # Pair costs are memoised per workload pair; the plan itself is costed
    # through build_plan so totals match the greedy planner bit for bit.
    best_vector = None
    best_cost = None
    for vector in itertools.product(range(len(hosts)), repeat=len(reqs)):
        load = Counter(vector)
        if any(load[i] > capacity[i] for i in load):
            continue
        assignment = {r.request_id: hosts[i].id for r, i in zip(reqs, vector)}
        cost = build_plan(assignment, reqs, hosts, matrix, objective, default_penalty).cost
        if best_cost is None or cost < best_cost:
            best_vector, best_cost = vector, cost
    assert best_vector is not None
    assignment = {r.request_id: hosts[i].id for r, i in zip(reqs, best_vector)}
    return build_plan(assignment, reqs, hosts, matrix, objective, default_penalty)


def explain_plan(plan: PlacementPlan, matrix: AffinityMatrix) -> str:
    lines = [
        f"objective: {plan.objective}",
        f"total average loss: {plan.total_average_loss:.2f} pp",
        f"total instability:  {plan.total_instability:.2f} pp",
        "costs are summed over co-resident pairs (pairwise-additive approximation)",
        "",
    ]
    avoid = 0
    for host, hc in plan.per_host_breakdown.items():
        members = [rid for rid, h in plan.assignment.items() if h == host]
        lines.append(f"host {host}: {len(members)} request(s) [{', '.join(members)}], {len(hc.pairs)} pair(s)")
        for p in hc.pairs:
            label = "default-penalty" if p.penalty else p.classification.value
            line = f"    {p.key.first} + {p.key.second}: average {p.average:.2f}, distance {p.distance:.2f}, {label}"
            if p.classification is AffinityClass.AVOID:
                avoid += 1
                line = "!!  AVOID " + line.strip()
            lines.append(line)
    lines.append("")
    lines.append(f"avoid co-residencies: {avoid}")
    if plan.missing_pairs:
        lines.append(f"pairs costed with the default penalty: {len(plan.missing_pairs)}")
        for key in plan.missing_pairs:
            lines.append(f"    {key.first} + {key.second}")
    else:
        lines.append("pairs costed with the default penalty: 0")
    return "\n".join(lines) + "\n"


# -- instance files --------------------------------------------------------------


def parse_requests(doc: Any) -> list[PlacementRequest]:
    entries = doc.get("requests") if isinstance(doc, Mapping) else None
    if not isinstance(entries, list):
        raise ConfigError("requests file needs a 'requests' array")
    try:
        return [PlacementRequest(str(e["request_id"]), str(e["workload_id"])) for e in entries]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad request entry: {exc}") from None


def parse_hosts(doc: Any) -> list[Host]:
    entries = doc.get("hosts") if isinstance(doc, Mapping) else None
    if not isinstance(entries, list):
        raise ConfigError("hosts file needs a 'hosts' array")
    try:
        return [Host(str(e["id"]), int(e["capacity"])) for e in entries]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad host entry: {exc}") from None
