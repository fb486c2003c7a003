"""Shared value types for the federation simulator.

Everything here is an immutable record: agents mutate their own state by
replacing entries, never by editing these objects in place.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_EVEN
from typing import Mapping

CENT = Decimal("0.01")

Money = Decimal
ResourceType = str


def money(value) -> Money:
    """Quantize to 2 decimals, half-even. The single rounding point for money."""
    return Decimal(str(value)).quantize(CENT, rounding=ROUND_HALF_EVEN)


def format_money(value: Money) -> str:
    return f"{value:.2f}"


class SimulatorError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SimulatorError):
    """A record violates one of its invariants. `code` names the violation."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class DomainError(SimulatorError):
    """An argument is outside an operation's stated domain."""


class ProtocolError(SimulatorError):
    """A message arrived that the receiving agent's phase cannot accept."""


class CoherenceError(SimulatorError):
    """A workload transfer would drive an in-flight counter negative."""


class ScenarioError(SimulatorError):
    """A scenario file failed to parse or validate."""


class AgentKind(enum.IntEnum):
    CONSUMER = 0
    BROKER = 1
    PROVIDER = 2


@dataclass(frozen=True, order=True)
class AgentId:
    """Identity of one agent; totally ordered by (kind, index)."""

    kind: AgentKind
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValidationError("negative-index", f"agent index must be >= 0, got {self.index}")

    def __str__(self) -> str:
        return f"{self.kind.name.lower()}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "AgentId":
        kind_name, sep, index = text.partition(":")
        if not sep or not index.lstrip("-").isdigit():
            raise ValidationError("bad-agent-id", f"cannot parse agent id {text!r}")
        try:
            kind = AgentKind[kind_name.upper()]
        except KeyError:
            raise ValidationError("bad-agent-id", f"unknown agent kind in {text!r}") from None
        return cls(kind, int(index))


def consumer(index: int) -> AgentId:
    return AgentId(AgentKind.CONSUMER, index)


def broker(index: int) -> AgentId:
    return AgentId(AgentKind.BROKER, index)


def provider(index: int) -> AgentId:
    return AgentId(AgentKind.PROVIDER, index)


@dataclass(frozen=True)
class ResourceBundle:
    """Typed quantities requested together. Stored sorted for canonical equality."""

    items: tuple[tuple[ResourceType, int], ...]

    @classmethod
    def of(cls, quantities: Mapping[ResourceType, int]) -> "ResourceBundle":
        return cls(tuple(sorted((str(r), int(q)) for r, q in quantities.items())))

    def as_dict(self) -> dict[ResourceType, int]:
        return dict(self.items)

    def types(self) -> frozenset[ResourceType]:
        return frozenset(r for r, _ in self.items)

    def quantity(self, rtype: ResourceType) -> int:
        return dict(self.items).get(rtype, 0)

    def __bool__(self) -> bool:
        return bool(self.items)

    def digest(self) -> str:
        return "+".join(f"{r}:{q}" for r, q in self.items) or "empty"


@dataclass(frozen=True)
class Request:
    """One consumer demand plus the metadata accumulated while it migrates."""

    consumer: AgentId
    bundle: ResourceBundle
    earliest_start: int
    deadline: int
    budget: Money
    source: AgentId
    migrations: int = 0
    visited: frozenset[AgentId] = frozenset()

    def digest(self) -> str:
        return (
            f"bundle={self.bundle.digest()},window=[{self.earliest_start},{self.deadline}),"
            f"budget={format_money(self.budget)},migrations={self.migrations}"
        )


def validate_request(req: Request, max_migrations: int | None = None) -> None:
    """Raise ValidationError naming the first violated field; return None when valid."""
    if req.earliest_start >= req.deadline:
        raise ValidationError(
            "deadline-before-start",
            f"deadline {req.deadline} must be after earliest start {req.earliest_start}",
        )
    if req.budget < 0:
        raise ValidationError("negative-budget", f"budget {req.budget} must be >= 0")
    if not req.bundle:
        raise ValidationError("empty-bundle", "request bundle has no resources")
    for rtype, qty in req.bundle.items:
        if qty <= 0:
            raise ValidationError(
                "non-positive-quantity", f"quantity for {rtype!r} must be > 0, got {qty}"
            )
    if req.migrations < 0:
        raise ValidationError("negative-migrations", "migration count must be >= 0")
    if max_migrations is not None and req.migrations > max_migrations:
        raise ValidationError(
            "migration-limit-exceeded",
            f"request carries {req.migrations} migrations, limit is {max_migrations}",
        )


class EntryStatus(str, enum.Enum):
    LIVE = "live"
    DEPARTED = "departed"


@dataclass(frozen=True)
class ContactEntry:
    """One broker's knowledge of one provider. Updated by replacement only."""

    provider: AgentId
    prices: Mapping[ResourceType, Money]
    grade: float = 0.5
    status: EntryStatus = EntryStatus.LIVE
    delay: int = 0

    def covers(self, bundle: ResourceBundle) -> bool:
        return bundle.types() <= frozenset(self.prices)


class Performative(str, enum.Enum):
    CFP = "CFP"
    PROPOSE = "PROPOSE"
    ACCEPT_PROPOSAL = "ACCEPT_PROPOSAL"
    REJECT_PROPOSAL = "REJECT_PROPOSAL"
    AGREE = "AGREE"
    REFUSE = "REFUSE"
    CONFIRM = "CONFIRM"
    INFORM = "INFORM"
    FAILURE = "FAILURE"


class ProposeStage(str, enum.Enum):
    QUOTE = "quote"          # broker -> consumer: cost of the bundle
    AGREEMENT = "agreement"  # broker -> consumer: provider found, terms attached
    HOLD = "hold"            # provider -> broker: reservation held at the CFP cost


class RefuseReason(str, enum.Enum):
    OVER_BUDGET = "over-budget"      # consumer: rejection budget spent, quote still too high
    DECLINED = "declined"            # consumer declined agreement terms / broker releasing provider
    EXPECTED_COST = "expected-cost"  # provider: demand-adjusted cost above the CFP cost
    CAPACITY = "capacity"            # provider: bundle does not fit the window
    UNAVAILABLE = "unavailable"      # provider: unknown or unpriced resource type
    DEPARTED = "departed"            # synthesized: the provider left the federation


@dataclass(frozen=True)
class CallPayload:
    request: Request
    cost: Money | None = None  # set on broker -> provider calls only

    def digest(self) -> str:
        base = self.request.digest()
        return f"{base},cost={format_money(self.cost)}" if self.cost is not None else base


@dataclass(frozen=True)
class ProposePayload:
    stage: ProposeStage
    cost: Money
    provider: AgentId | None = None  # set on agreement proposals

    def digest(self) -> str:
        out = f"stage={self.stage.value},cost={format_money(self.cost)}"
        if self.provider is not None:
            out += f",provider={self.provider}"
        return out


@dataclass(frozen=True)
class RejectPayload:
    cost_limit: Money

    def digest(self) -> str:
        return f"limit={format_money(self.cost_limit)}"


@dataclass(frozen=True)
class RefusePayload:
    reason: RefuseReason
    # demand/capacity ratio per refused resource type, sorted by type
    ratios: tuple[tuple[ResourceType, float], ...] = ()

    def digest(self) -> str:
        out = f"reason={self.reason.value}"
        if self.ratios:
            out += ",ratio=" + "+".join(f"{r}:{v:.4f}" for r, v in self.ratios)
        return out


@dataclass(frozen=True)
class InformPayload:
    feedback: float | None = None  # None is the plain acknowledgement

    def digest(self) -> str:
        return "ack" if self.feedback is None else f"feedback={self.feedback:.4f}"


@dataclass(frozen=True)
class FailurePayload:
    reason: str

    def digest(self) -> str:
        return f"reason={self.reason}"


@dataclass(frozen=True)
class Message:
    """One performative-tagged protocol message."""

    performative: Performative
    conversation: str
    sender: AgentId
    receiver: AgentId
    payload: object = None

    def __post_init__(self):
        if self.performative is Performative.FAILURE:
            if self.sender.kind is not AgentKind.BROKER or self.receiver.kind is not AgentKind.CONSUMER:
                raise ValidationError("failure-route", "FAILURE is broker -> consumer only")
        if self.performative is Performative.REJECT_PROPOSAL and not isinstance(self.payload, RejectPayload):
            raise ValidationError("missing-cost-limit", "REJECT_PROPOSAL must carry a cost limit")
        if (
            self.performative is Performative.REFUSE
            and self.sender.kind is AgentKind.PROVIDER
            and not isinstance(self.payload, RefusePayload)
        ):
            raise ValidationError("missing-ratio", "provider REFUSE must carry a demand/price payload")

    def payload_digest(self) -> str:
        if self.payload is None:
            return "-"
        return self.payload.digest()


def conversation_id(ca_id: AgentId, seq: int) -> str:
    return f"{ca_id}#{seq}"
