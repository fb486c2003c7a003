"""Broker self-organization: multi-criteria neighbor choice for request migration.

A broker that has exhausted its own providers delegates the request to one
neighbor broker. The choice minimizes a vector of criteria (workload, link
delay, ...) under Pareto dominance: candidates are drawn best-first from the
non-dominated set, each checked against preventive coherence constraints
(non-empty provider list, resource coverage, not previously visited), and
removed when they fail, until one passes or none remain.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

from .model import (
    AgentId,
    CallPayload,
    CoherenceError,
    DomainError,
    FailurePayload,
    Message,
    Performative,
    Request,
    ResourceType,
)


@dataclass(frozen=True)
class CriteriaVector:
    """Minimized criteria values for one candidate neighbor."""

    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise DomainError("criteria vector must have at least one entry")
        for v in self.values:
            if v != v or v in (float("inf"), float("-inf")):
                raise DomainError(f"criteria values must be finite, got {v}")


@dataclass(frozen=True)
class NeighborInfo:
    """Zero-staleness snapshot of one neighbor broker, taken at decision time."""

    broker: AgentId
    workload: int                          # open conversations at the neighbor
    delay: int                             # link delay from the evaluating broker
    provider_types: frozenset[ResourceType]  # types covered by its live contacts
    provider_count: int                    # size of its live contact list


@dataclass(frozen=True)
class MigrationDecision:
    target: AgentId | None  # None means stay and fail

    @property
    def failed(self) -> bool:
        return self.target is None


CriterionFn = Callable[[NeighborInfo], float]

CRITERIA: dict[str, CriterionFn] = {
    "workload": lambda info: float(info.workload),
    "delay": lambda info: float(info.delay),
    # scarcity shrinks as the neighbor knows more providers
    "provider_scarcity": lambda info: 1.0 / (1.0 + info.provider_count),
}

DEFAULT_CRITERIA: tuple[str, ...] = ("workload", "delay")


def criteria_vector(info: NeighborInfo, criteria: Sequence[str] = DEFAULT_CRITERIA) -> CriteriaVector:
    """Project a neighbor snapshot onto the configured criteria, in order."""
    try:
        fns = [CRITERIA[name] for name in criteria]
    except KeyError as exc:
        raise DomainError(f"unknown criterion {exc.args[0]!r}") from None
    return CriteriaVector(tuple(fn(info) for fn in fns))


def dominates(a: CriteriaVector, b: CriteriaVector) -> bool:
    """Minimization Pareto dominance: a <= b everywhere and a < b somewhere."""
    if len(a.values) != len(b.values):
        raise DomainError(
            f"criteria length mismatch: {len(a.values)} vs {len(b.values)}"
        )
    return all(x <= y for x, y in zip(a.values, b.values)) and any(
        x < y for x, y in zip(a.values, b.values)
    )


def verify_constraints(req: Request, info: NeighborInfo) -> bool:
    """Preventive coherence checks: the target must plausibly be able to serve."""
    if info.provider_count <= 0:
        return False
    if not req.bundle.types() <= info.provider_types:
        return False
    if info.broker in req.visited:
        return False
    return True


def _sort_key(info: NeighborInfo, vec: CriteriaVector):
    # lexicographic on criteria values, then lowest broker id
    return (vec.values, info.broker)


def select_direction(
    req: Request,
    neighbors: Iterable[NeighborInfo],
    criteria: Sequence[str] = DEFAULT_CRITERIA,
) -> MigrationDecision:
    """Pick the migration target, or stay and fail.

    Repeatedly takes the best non-dominated candidate (ties broken by
    criteria values then broker id), accepts it if it passes the
    constraints, otherwise removes it and retries. Deterministic.
    """
    remaining = [(info, criteria_vector(info, criteria)) for info in neighbors]
    while remaining:
        nondominated = [
            (info, vec)
            for info, vec in remaining
            if not any(dominates(other_vec, vec) for _, other_vec in remaining)
        ]
        pick, pick_vec = min(nondominated, key=lambda pair: _sort_key(*pair))
        if verify_constraints(req, pick):
            return MigrationDecision(target=pick.broker)
        remaining = [(info, vec) for info, vec in remaining if info is not pick]
    return MigrationDecision(target=None)


@dataclass(frozen=True)
class SelfOrganizeResult:
    messages: tuple[Message, ...]
    workload_delta: int           # applied to the acting broker's in-flight count
    decision: MigrationDecision | None  # None when the hop limit blocked selection


def self_organize(
    req: Request,
    self_id: AgentId,
    neighbors: Sequence[NeighborInfo],
    max_migrations: int,
    conversation: str,
    criteria: Sequence[str] = DEFAULT_CRITERIA,
) -> SelfOrganizeResult:
    """Resolve a local failure situation: migrate the request or give up.

    Within the hop budget, delegates to the selected neighbor with the hop
    count bumped and this broker recorded as visited; otherwise reports
    FAILURE to the consumer. Either way the conversation leaves this broker,
    so the workload delta is always -1.
    """
    if req.migrations >= max_migrations:
        fail = Message(
            Performative.FAILURE,
            conversation,
            sender=self_id,
            receiver=req.consumer,
            payload=FailurePayload("migration-limit"),
        )
        return SelfOrganizeResult((fail,), -1, decision=None)

    decision = select_direction(req, neighbors, criteria)
    if decision.failed:
        fail = Message(
            Performative.FAILURE,
            conversation,
            sender=self_id,
            receiver=req.consumer,
            payload=FailurePayload("no-admissible-broker"),
        )
        return SelfOrganizeResult((fail,), -1, decision=decision)

    hopped = replace(
        req,
        migrations=req.migrations + 1,
        visited=req.visited | {self_id},
    )
    cfp = Message(
        Performative.CFP,
        conversation,
        sender=self_id,
        receiver=decision.target,
        payload=CallPayload(request=hopped),
    )
    return SelfOrganizeResult((cfp,), -1, decision=decision)


def transfer_workload(source_workload: int, dest_workload: int) -> tuple[int, int]:
    """Move one in-flight conversation between a broker pair; sum is preserved."""
    if source_workload < 1:
        raise CoherenceError(
            f"cannot transfer from a broker with workload {source_workload}"
        )
    return source_workload - 1, dest_workload + 1
