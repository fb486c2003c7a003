"""The three agent state machines: consumer, broker, and provider.

Each step function is a transition (state, message) -> (state, outgoing
messages). States are owned by the engine and mutated in place; transitions
are applied strictly in event order. A message that the current phase cannot
accept raises ProtocolError.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from decimal import Decimal

from .migration import DEFAULT_CRITERIA, NeighborInfo, SelfOrganizeResult, self_organize
from .model import (
    AgentId,
    AgentKind,
    CallPayload,
    ContactEntry,
    EntryStatus,
    InformPayload,
    Message,
    Money,
    Performative,
    ProposePayload,
    ProposeStage,
    ProtocolError,
    RefusePayload,
    RefuseReason,
    RejectPayload,
    Request,
    ResourceBundle,
    ResourceType,
)
from .pricing import (
    PricingParams,
    compute_utility,
    expected_unit_price,
    lease_factor,
    total_cost,
    update_grade,
)


def _violation(agent: AgentId, phase, msg: Message) -> ProtocolError:
    return ProtocolError(
        f"{agent} in phase {getattr(phase, 'value', phase)} cannot handle "
        f"{msg.performative.value} from {msg.sender}"
    )


# --- Consumer ---------------------------------------------------------------


class ConsumerPhase(str, enum.Enum):
    IDLE = "idle"
    AWAITING_COST = "awaiting-cost-propose"
    AWAITING_AGREEMENT = "awaiting-agreement"
    AWAITING_CONFIRM = "awaiting-confirm"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


_NEGOTIATING = (
    ConsumerPhase.AWAITING_COST,
    ConsumerPhase.AWAITING_AGREEMENT,
    ConsumerPhase.AWAITING_CONFIRM,
)


@dataclass
class ConsumerState:
    id: AgentId
    request: Request
    conversation: str
    params: PricingParams
    max_rejects: int = 3
    phase: ConsumerPhase = ConsumerPhase.IDLE
    rounds: int = 0                      # REJECT_PROPOSALs sent so far
    accepted_cost: Money | None = None   # quote accepted, pending confirmation
    paid: Money | None = None            # fixed once the agreement is confirmed
    serving_broker: AgentId | None = None
    utility: float | None = None


def consumer_start(state: ConsumerState) -> list[Message]:
    """Open the conversation by sending the CFP to the request's source broker."""
    if state.phase is not ConsumerPhase.IDLE:
        raise ProtocolError(f"{state.id} already started its request")
    state.phase = ConsumerPhase.AWAITING_COST
    return [
        Message(
            Performative.CFP,
            state.conversation,
            sender=state.id,
            receiver=state.request.source,
            payload=CallPayload(request=state.request),
        )
    ]


def _consumer_quote(state: ConsumerState, msg: Message, cost: Money) -> list[Message]:
    # The reply depends only on (phase, performative, payload); the sender is
    # just the reply target, so broker migration stays invisible here.
    if cost <= state.request.budget:
        state.accepted_cost = cost
        state.phase = ConsumerPhase.AWAITING_AGREEMENT
        return [Message(Performative.ACCEPT_PROPOSAL, msg.conversation, state.id, msg.sender)]
    if state.rounds < state.max_rejects:
        state.rounds += 1
        state.phase = ConsumerPhase.AWAITING_COST
        return [
            Message(
                Performative.REJECT_PROPOSAL,
                msg.conversation,
                state.id,
                msg.sender,
                payload=RejectPayload(cost_limit=state.request.budget),
            )
        ]
    state.phase = ConsumerPhase.AWAITING_COST
    return [
        Message(
            Performative.REFUSE,
            msg.conversation,
            state.id,
            msg.sender,
            payload=RefusePayload(reason=RefuseReason.OVER_BUDGET),
        )
    ]


def consumer_step(state: ConsumerState, msg: Message) -> tuple[ConsumerState, list[Message]]:
    if msg.receiver != state.id:
        raise ProtocolError(f"message for {msg.receiver} delivered to {state.id}")
    perf = msg.performative

    if perf is Performative.FAILURE and state.phase in _NEGOTIATING:
        state.phase = ConsumerPhase.FAILED
        return state, []

    if perf is Performative.PROPOSE and state.phase in _NEGOTIATING:
        payload: ProposePayload = msg.payload
        if payload.stage is ProposeStage.QUOTE:
            # a fresh quote also restarts negotiation after a provider fell through
            return state, _consumer_quote(state, msg, payload.cost)
        if payload.stage is ProposeStage.AGREEMENT and state.phase is ConsumerPhase.AWAITING_AGREEMENT:
            if payload.cost == state.accepted_cost:
                state.serving_broker = msg.sender
                state.phase = ConsumerPhase.AWAITING_CONFIRM
                return state, [Message(Performative.AGREE, msg.conversation, state.id, msg.sender)]
            state.phase = ConsumerPhase.AWAITING_COST
            return state, [
                Message(
                    Performative.REFUSE,
                    msg.conversation,
                    state.id,
                    msg.sender,
                    payload=RefusePayload(reason=RefuseReason.DECLINED),
                )
            ]
        raise _violation(state.id, state.phase, msg)

    if perf is Performative.CONFIRM and state.phase is ConsumerPhase.AWAITING_CONFIRM:
        state.paid = state.accepted_cost
        state.phase = ConsumerPhase.RUNNING
        return state, [
            Message(Performative.INFORM, msg.conversation, state.id, msg.sender, payload=InformPayload())
        ]

    raise _violation(state.id, state.phase, msg)


def consumer_complete(state: ConsumerState, on_time: bool) -> list[Message]:
    """Finish the task: grade the outcome and report it to the serving broker."""
    if state.phase is not ConsumerPhase.RUNNING:
        raise ProtocolError(f"{state.id} cannot complete a task in phase {state.phase.value}")
    state.utility = compute_utility(state.request.budget, state.paid, on_time, state.params)
    state.phase = ConsumerPhase.DONE
    return [
        Message(
            Performative.INFORM,
            state.conversation,
            state.id,
            state.serving_broker,
            payload=InformPayload(feedback=state.utility),
        )
    ]


# --- Broker -----------------------------------------------------------------


class BrokerPhase(str, enum.Enum):
    QUOTING = "quoting"
    AWAITING_PROVIDER = "awaiting-provider"
    AWAITING_AGREEMENT = "awaiting-agreement"
    AWAITING_FEEDBACK = "awaiting-feedback"


@dataclass(frozen=True)
class SelectionSnapshot:
    """Contact list as priced at one selection, kept for post-hoc cost audits."""

    entries: tuple[ContactEntry, ...]
    excluded: frozenset[AgentId]  # removed for cause: capacity, unavailable, departed
    bundle: ResourceBundle
    factor: Decimal
    cost: Money


@dataclass
class BrokerConversation:
    request: Request
    phase: BrokerPhase
    temporary: list[ContactEntry]
    # candidate universe: providers copied into the temporary list at open;
    # providers joining the federation later are not candidates here
    universe: frozenset[AgentId] = frozenset()
    best: AgentId | None = None
    proposed_cost: Money | None = None
    held: AgentId | None = None   # provider currently holding a reservation
    attempted: set[AgentId] = field(default_factory=set)
    excluded: set[AgentId] = field(default_factory=set)
    snapshot: SelectionSnapshot | None = None


@dataclass
class BrokerState:
    id: AgentId
    contact_list: list[ContactEntry]
    neighbors: tuple[AgentId, ...]
    params: PricingParams
    max_migrations: int
    criteria: tuple[str, ...] = DEFAULT_CRITERIA
    conversations: dict[str, BrokerConversation] = field(default_factory=dict)
    in_flight: int = 0

    def entry_for(self, pid: AgentId) -> ContactEntry | None:
        for entry in self.contact_list:
            if entry.provider == pid:
                return entry
        return None


def update_contact_list(
    current: list[ContactEntry], registry_view: list[ContactEntry]
) -> list[ContactEntry]:
    """Sync with the registry: drop departed providers, append newly visible ones.

    Surviving entries keep their learned prices and grades; new entries come
    in as the registry advertises them (default grade). Order is preserved.
    """
    visible = {entry.provider for entry in registry_view}
    known = {entry.provider for entry in current}
    kept = [entry for entry in current if entry.provider in visible]
    kept.extend(entry for entry in registry_view if entry.provider not in known)
    return kept


def select_best_provider(
    entries: list[ContactEntry], bundle: ResourceBundle, factor
) -> AgentId | None:
    """Cheapest live full-coverage provider; grade then id break ties."""
    candidates = [
        (total_cost(bundle, e.prices, factor), -e.grade, e.provider)
        for e in entries
        if e.status is EntryStatus.LIVE and e.covers(bundle)
    ]
    if not candidates:
        return None
    return min(candidates)[2]


def _replace_everywhere(state: BrokerState, old: ContactEntry, new: ContactEntry) -> None:
    # keep every open conversation's temporary list consistent with the
    # contact list so later selections always price against fresh knowledge
    for i, entry in enumerate(state.contact_list):
        if entry is old:
            state.contact_list[i] = new
    for conv in state.conversations.values():
        for i, entry in enumerate(conv.temporary):
            if entry is old:
                conv.temporary[i] = new


def _purge_everywhere(state: BrokerState, pid: AgentId) -> None:
    state.contact_list = [e for e in state.contact_list if e.provider != pid]
    for conv in state.conversations.values():
        conv.temporary = [e for e in conv.temporary if e.provider != pid]


def _apply_price_update(state: BrokerState, pid: AgentId, ratios) -> None:
    entry = state.entry_for(pid)
    if entry is None:
        return
    prices = dict(entry.prices)
    for rtype, ratio in sorted(ratios):
        if rtype in prices:
            prices[rtype] = expected_unit_price(
                prices[rtype], ratio, 1.0, state.params.demand_sensitivity
            )
    _replace_everywhere(state, entry, replace(entry, prices=prices))


def _remove_from_temporary(conv: BrokerConversation, pid: AgentId, for_cause: bool) -> None:
    conv.temporary = [e for e in conv.temporary if e.provider != pid]
    if for_cause:
        conv.excluded.add(pid)
    conv.best = None
    conv.held = None


def _close(state: BrokerState, conversation: str) -> None:
    state.conversations.pop(conversation, None)
    state.in_flight -= 1


def _record_failure_feedback(state: BrokerState, conv: BrokerConversation) -> None:
    # every provider attempted for this request is graded down once
    for pid in sorted(conv.attempted):
        entry = state.entry_for(pid)
        if entry is not None:
            graded = replace(
                entry, grade=update_grade(entry.grade, 0.0, state.params.grade_smoothing)
            )
            _replace_everywhere(state, entry, graded)


def _advance(
    state: BrokerState,
    conversation: str,
    conv: BrokerConversation,
    neighbor_info,
) -> list[Message]:
    """Quote the next best provider, or fall back to self-organization."""
    factor = lease_factor(conv.request, state.params)
    best = select_best_provider(conv.temporary, conv.request.bundle, factor)
    if best is None:
        neighbors = list(neighbor_info) if neighbor_info is not None else []
        result: SelfOrganizeResult = self_organize(
            conv.request,
            state.id,
            neighbors,
            state.max_migrations,
            conversation,
            state.criteria,
        )
        if result.decision is None or result.decision.failed:
            _record_failure_feedback(state, conv)
        assert result.workload_delta == -1
        _close(state, conversation)  # applies the -1 workload delta
        return list(result.messages)

    # price from the temporary list: it is what selection ranked, and it can
    # hold a provider a later refresh already dropped from the contact list
    entry = next(e for e in conv.temporary if e.provider == best)
    conv.best = best
    conv.attempted.add(best)
    conv.proposed_cost = total_cost(conv.request.bundle, entry.prices, factor)
    conv.snapshot = SelectionSnapshot(
        entries=tuple(e for e in state.contact_list if e.provider in conv.universe),
        excluded=frozenset(conv.excluded),
        bundle=conv.request.bundle,
        factor=factor,
        cost=conv.proposed_cost,
    )
    conv.phase = BrokerPhase.QUOTING
    return [
        Message(
            Performative.PROPOSE,
            conversation,
            state.id,
            conv.request.consumer,
            payload=ProposePayload(stage=ProposeStage.QUOTE, cost=conv.proposed_cost),
        )
    ]


def broker_step(
    state: BrokerState,
    msg: Message,
    now: int,
    registry_view: list[ContactEntry] | None = None,
    neighbor_info=None,
) -> tuple[BrokerState, list[Message]]:
    """Apply one message per the broker protocol, including the migration hook.

    `registry_view` is this broker's visibility-filtered snapshot of the
    provider registry (consulted on CFP receipt); `neighbor_info` carries
    fresh neighbor snapshots in case self-organization is needed.
    """
    if msg.receiver != state.id:
        raise ProtocolError(f"message for {msg.receiver} delivered to {state.id}")
    perf = msg.performative
    conv = state.conversations.get(msg.conversation)

    if perf is Performative.CFP:
        if conv is not None:
            raise ProtocolError(f"{state.id} got a second CFP for {msg.conversation}")
        payload: CallPayload = msg.payload
        req = replace(payload.request, visited=payload.request.visited | {state.id})
        state.contact_list = update_contact_list(state.contact_list, registry_view or [])
        conv = BrokerConversation(
            request=req,
            phase=BrokerPhase.QUOTING,
            temporary=list(state.contact_list),
            universe=frozenset(e.provider for e in state.contact_list),
        )
        state.conversations[msg.conversation] = conv
        state.in_flight += 1
        return state, _advance(state, msg.conversation, conv, neighbor_info)

    if conv is None:
        raise ProtocolError(f"{state.id} has no open conversation {msg.conversation}")

    if msg.sender.kind is AgentKind.CONSUMER:
        if perf is Performative.ACCEPT_PROPOSAL and conv.phase is BrokerPhase.QUOTING:
            conv.phase = BrokerPhase.AWAITING_PROVIDER
            return state, [
                Message(
                    Performative.CFP,
                    msg.conversation,
                    state.id,
                    conv.best,
                    payload=CallPayload(request=conv.request, cost=conv.proposed_cost),
                )
            ]
        if perf is Performative.REJECT_PROPOSAL and conv.phase is BrokerPhase.QUOTING:
            _remove_from_temporary(conv, conv.best, for_cause=False)
            return state, _advance(state, msg.conversation, conv, neighbor_info)
        if perf is Performative.REFUSE and conv.phase is BrokerPhase.QUOTING:
            # consumer spent its rejection budget and declines to continue here
            _remove_from_temporary(conv, conv.best, for_cause=False)
            return state, _advance(state, msg.conversation, conv, neighbor_info)
        if perf is Performative.AGREE and conv.phase is BrokerPhase.AWAITING_AGREEMENT:
            conv.phase = BrokerPhase.AWAITING_FEEDBACK
            return state, [
                Message(Performative.CONFIRM, msg.conversation, state.id, conv.held)
            ]
        if perf is Performative.REFUSE and conv.phase is BrokerPhase.AWAITING_AGREEMENT:
            held = conv.held
            _remove_from_temporary(conv, held, for_cause=True)
            release = Message(
                Performative.REFUSE,
                msg.conversation,
                state.id,
                held,
                payload=RefusePayload(reason=RefuseReason.DECLINED),
            )
            return state, [release] + _advance(state, msg.conversation, conv, neighbor_info)
        if perf is Performative.INFORM and conv.phase is BrokerPhase.AWAITING_FEEDBACK:
            feedback: InformPayload = msg.payload
            entry = state.entry_for(conv.best)
            if entry is not None and feedback.feedback is not None:
                graded = replace(
                    entry,
                    grade=update_grade(entry.grade, feedback.feedback, state.params.grade_smoothing),
                )
                _replace_everywhere(state, entry, graded)
            _close(state, msg.conversation)
            return state, []
        raise _violation(state.id, conv.phase, msg)

    if msg.sender.kind is AgentKind.PROVIDER:
        if perf is Performative.PROPOSE and conv.phase is BrokerPhase.AWAITING_PROVIDER:
            payload: ProposePayload = msg.payload
            conv.held = msg.sender
            conv.phase = BrokerPhase.AWAITING_AGREEMENT
            return state, [
                Message(
                    Performative.PROPOSE,
                    msg.conversation,
                    state.id,
                    conv.request.consumer,
                    payload=ProposePayload(
                        stage=ProposeStage.AGREEMENT,
                        cost=payload.cost,
                        provider=msg.sender,
                    ),
                )
            ]
        if perf is Performative.REFUSE and conv.phase in (
            BrokerPhase.AWAITING_PROVIDER,
            # a CONFIRM sent to a provider that left bounces back here; the
            # agreement collapsed, so fall back into the selection loop
            BrokerPhase.AWAITING_FEEDBACK,
        ):
            payload: RefusePayload = msg.payload
            if payload.reason is RefuseReason.DEPARTED:
                _purge_everywhere(state, msg.sender)
                _remove_from_temporary(conv, msg.sender, for_cause=True)
            else:
                _apply_price_update(state, msg.sender, payload.ratios)
                if payload.reason in (RefuseReason.CAPACITY, RefuseReason.UNAVAILABLE):
                    _remove_from_temporary(conv, msg.sender, for_cause=True)
                else:
                    # expected-cost: prices are refreshed, the provider stays eligible
                    conv.best = None
                    conv.held = None
            return state, _advance(state, msg.conversation, conv, neighbor_info)
        raise _violation(state.id, conv.phase, msg)

    raise _violation(state.id, conv.phase, msg)


# --- Provider ---------------------------------------------------------------


class ReservationStatus(str, enum.Enum):
    HELD = "held"
    CONFIRMED = "confirmed"
    RELEASED = "released"


@dataclass
class Reservation:
    conversation: str
    bundle: ResourceBundle
    start: int
    end: int
    consumer: AgentId
    status: ReservationStatus
    cost: Money


@dataclass
class ProviderState:
    id: AgentId
    capacity: dict[ResourceType, int]
    base_prices: dict[ResourceType, Money]
    params: PricingParams
    ledger: dict[str, Reservation] = field(default_factory=dict)
    demand: dict[ResourceType, float] = field(default_factory=dict)

    def expected_price(self, rtype: ResourceType) -> Money:
        return expected_unit_price(
            self.base_prices[rtype],
            self.demand.get(rtype, 0.0),
            float(self.capacity[rtype]),
            self.params.demand_sensitivity,
        )

    def demand_ratios(self, bundle: ResourceBundle) -> tuple[tuple[ResourceType, float], ...]:
        out = []
        for rtype, _ in bundle.items:
            if rtype in self.capacity:
                out.append((rtype, self.demand.get(rtype, 0.0) / float(self.capacity[rtype])))
        return tuple(out)


def _active(state: ProviderState):
    return (
        res
        for res in state.ledger.values()
        if res.status in (ReservationStatus.HELD, ReservationStatus.CONFIRMED)
    )


def _peak_committed(state: ProviderState, rtype: ResourceType, start: int, end: int) -> int:
    """Max committed quantity of one type anywhere in [start, end), by sweep."""
    deltas: list[tuple[int, int]] = []
    for res in _active(state):
        qty = res.bundle.quantity(rtype)
        if qty <= 0:
            continue
        lo = max(res.start, start)
        hi = min(res.end, end)
        if lo < hi:
            deltas.append((lo, qty))
            deltas.append((hi, -qty))
    peak = level = 0
    for _, delta in sorted(deltas):  # at equal times the -q leg sorts first
        level += delta
        peak = max(peak, level)
    return peak


def allocate(
    state: ProviderState,
    bundle: ResourceBundle,
    start: int,
    end: int,
    conversation: str,
    consumer: AgentId,
    cost: Money,
) -> Reservation | None:
    """Hold [start, end) for the bundle if it fits alongside existing commitments.

    Returns the held reservation, or None when the window cannot take the
    bundle (including unknown resource types). On success the per-type demand
    counters grow by the held quantities.
    """
    for rtype, qty in bundle.items:
        if rtype not in state.capacity:
            return None
        if _peak_committed(state, rtype, start, end) + qty > state.capacity[rtype]:
            return None
    res = Reservation(conversation, bundle, start, end, consumer, ReservationStatus.HELD, cost)
    state.ledger[conversation] = res
    for rtype, qty in bundle.items:
        state.demand[rtype] = state.demand.get(rtype, 0.0) + qty
    return res


def _release_demand(state: ProviderState, bundle: ResourceBundle) -> None:
    for rtype, qty in bundle.items:
        state.demand[rtype] = max(0.0, state.demand.get(rtype, 0.0) - qty)


def release_hold(state: ProviderState, conversation: str) -> bool:
    """Drop a held reservation (broker refusal, expiry, or churn). Idempotent."""
    res = state.ledger.get(conversation)
    if res is None or res.status is not ReservationStatus.HELD:
        return False
    res.status = ReservationStatus.RELEASED
    _release_demand(state, res.bundle)
    return True


def finish_lease(state: ProviderState, conversation: str) -> None:
    """Task completed: the commitment stops counting toward demand pressure."""
    res = state.ledger.get(conversation)
    if res is not None and res.status is ReservationStatus.CONFIRMED:
        _release_demand(state, res.bundle)


def provider_step(state: ProviderState, msg: Message) -> tuple[ProviderState, list[Message]]:
    if msg.receiver != state.id:
        raise ProtocolError(f"message for {msg.receiver} delivered to {state.id}")
    perf = msg.performative

    if perf is Performative.CFP:
        payload: CallPayload = msg.payload
        req = payload.request
        known = all(r in state.base_prices and r in state.capacity for r, _ in req.bundle.items)
        if not known:
            refuse = RefusePayload(
                reason=RefuseReason.UNAVAILABLE, ratios=state.demand_ratios(req.bundle)
            )
            return state, [Message(Performative.REFUSE, msg.conversation, state.id, msg.sender, refuse)]
        factor = lease_factor(req, state.params)
        expected_prices = {r: state.expected_price(r) for r, _ in req.bundle.items}
        expected = total_cost(req.bundle, expected_prices, factor)
        if expected > payload.cost:
            refuse = RefusePayload(
                reason=RefuseReason.EXPECTED_COST, ratios=state.demand_ratios(req.bundle)
            )
            return state, [Message(Performative.REFUSE, msg.conversation, state.id, msg.sender, refuse)]
        res = allocate(
            state, req.bundle, req.earliest_start, req.deadline,
            msg.conversation, req.consumer, payload.cost,
        )
        if res is None:
            refuse = RefusePayload(
                reason=RefuseReason.CAPACITY, ratios=state.demand_ratios(req.bundle)
            )
            return state, [Message(Performative.REFUSE, msg.conversation, state.id, msg.sender, refuse)]
        return state, [
            Message(
                Performative.PROPOSE,
                msg.conversation,
                state.id,
                msg.sender,
                payload=ProposePayload(stage=ProposeStage.HOLD, cost=payload.cost),
            )
        ]

    if perf is Performative.CONFIRM:
        res = state.ledger.get(msg.conversation)
        if res is None or res.status is not ReservationStatus.HELD:
            raise ProtocolError(
                f"{state.id} got CONFIRM for {msg.conversation} without a held reservation"
            )
        res.status = ReservationStatus.CONFIRMED
        return state, [Message(Performative.CONFIRM, msg.conversation, state.id, res.consumer)]

    if perf is Performative.REFUSE:
        release_hold(state, msg.conversation)
        return state, []

    if perf is Performative.INFORM:
        # consumer acknowledgement; the confirmed lease simply stands
        return state, []

    raise _violation(state.id, "serving", msg)
