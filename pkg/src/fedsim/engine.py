"""Deterministic discrete-event kernel.

Events are processed in strict (time, seq) order from one heap; seq is a
monotone counter assigned at scheduling time, so simultaneous events run in
causal scheduling order. All state lives in the World; agent step functions
are invoked sequentially, never concurrently. Identical (scenario, seed)
inputs produce byte-identical traces.
"""

from __future__ import annotations

import enum
import heapq
import random
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .agents import (
    BrokerState,
    ConsumerPhase,
    ConsumerState,
    ProviderState,
    ReservationStatus,
    broker_step,
    consumer_complete,
    consumer_start,
    consumer_step,
    finish_lease,
    provider_step,
    release_hold,
    update_contact_list,
)
from .migration import NeighborInfo, verify_constraints
from .model import (
    AgentId,
    AgentKind,
    CallPayload,
    ContactEntry,
    EntryStatus,
    Message,
    Money,
    Performative,
    ProposePayload,
    ProposeStage,
    RefusePayload,
    RefuseReason,
    Request,
    ResourceBundle,
    ScenarioError,
    conversation_id,
)
from .pricing import lease_factor
from .scenario import ChurnAction, ProviderSpec, Scenario


class EventKind(str, enum.Enum):
    DELIVER = "deliver"
    CHURN = "churn"
    CONSUMER_START = "consumer-start"
    HOLD_EXPIRY = "hold-expiry"
    TASK_COMPLETE = "task-complete"


@dataclass(frozen=True)
class ChurnEvent:
    time: int
    action: ChurnAction
    provider: AgentId | None = None     # leave target
    join: ProviderSpec | None = None    # join payload


@dataclass(frozen=True)
class Event:
    time: int
    seq: int
    kind: EventKind
    message: Message | None = None
    churn: ChurnEvent | None = None
    request: Request | None = None
    conversation: str | None = None
    provider: AgentId | None = None


@dataclass(frozen=True)
class EventRecord:
    """One trace line; fields appear in this fixed order."""

    time: int
    seq: int
    kind: str
    sender: str
    receiver: str
    performative: str
    conversation: str
    payload: str

    def line(self) -> str:
        return (
            f"t={self.time} seq={self.seq} kind={self.kind} from={self.sender} "
            f"to={self.receiver} perf={self.performative} conv={self.conversation} "
            f"payload={self.payload}"
        )


def format_trace(records: list[EventRecord]) -> str:
    return "".join(record.line() + "\n" for record in records)


def write_trace(records: list[EventRecord], path) -> None:
    Path(path).write_bytes(format_trace(records).encode("ascii"))


def deliver(msg: Message, delay_matrix, now: int, default_delay: int = 1, seq: int = 0) -> Event:
    """Build the delivery event for a message sent at `now`."""
    delay = delay_matrix.get((msg.sender, msg.receiver), default_delay)
    if delay < 0:
        raise ScenarioError(f"negative delay for {msg.sender} -> {msg.receiver}")
    return Event(time=now + delay, seq=seq, kind=EventKind.DELIVER, message=msg)


@dataclass
class ConversationMeta:
    """Per-request bookkeeping the metrics layer consumes."""

    conversation: str
    consumer: AgentId
    source: AgentId
    issued_at: int
    bundle: ResourceBundle
    start: int
    end: int
    budget: Money
    factor: Decimal
    live_at_issue: tuple[AgentId, ...]
    status: str = "open"  # open | done | failed
    paid: Money | None = None
    migrations: int = 0
    serving_broker: AgentId | None = None
    serving_provider: AgentId | None = None
    snapshot: object = None  # SelectionSnapshot of the final selection
    on_time: bool | None = None
    utility: float | None = None


@dataclass
class MigrationProbe:
    """Independent recheck of one migration, taken from world state."""

    conversation: str
    source: AgentId
    target: AgentId
    nonempty: bool
    covered: bool
    unvisited: bool
    source_delta: int | None = None  # in-flight change at the sender event
    dest_delta: int | None = None    # in-flight change at the receipt event

    def preventive_ok(self) -> bool:
        return self.nonempty and self.covered and self.unvisited

    def conserved(self) -> bool:
        return self.source_delta == -1 and self.dest_delta == 1


@dataclass
class Diagnostics:
    migrations: list[MigrationProbe] = field(default_factory=list)
    hop_violations: list[str] = field(default_factory=list)
    bounced: int = 0


@dataclass
class WorkloadStat:
    peak: int = 0
    total: int = 0
    samples: int = 0

    def mean(self) -> float:
        return self.total / self.samples if self.samples else 0.0


@dataclass
class RunResult:
    seed: int
    trace: list[EventRecord]
    consumers: dict[AgentId, ConsumerState]
    brokers: dict[AgentId, BrokerState]
    providers: dict[AgentId, ProviderState]
    registry: frozenset[AgentId]
    conversations: dict[str, ConversationMeta]
    diagnostics: Diagnostics
    workloads: dict[AgentId, WorkloadStat]
    quiescent: bool
    open_conversations: list[str]
    events_processed: int


class _World:
    def __init__(self, scenario: Scenario, seed: int):
        self.scenario = scenario
        self.rng = random.Random(seed)  # sole randomness source; protocol logic is deterministic
        self.params = scenario.pricing
        self.max_migrations = scenario.effective_max_migrations()
        self.hold_timeout = scenario.hold_timeout
        self.default_delay = scenario.default_delay

        self.delays: dict[tuple[AgentId, AgentId], int] = {}
        for spec in scenario.delays:
            self.delays[(spec.a, spec.b)] = spec.delay
            self.delays[(spec.b, spec.a)] = spec.delay

        self.registry: set[AgentId] = set()
        self.providers: dict[AgentId, ProviderState] = {}
        self.visibility: dict[AgentId, set[AgentId]] = {}
        self.durations: dict[str, int] = {}

        self.brokers: dict[AgentId, BrokerState] = {}
        for spec in scenario.brokers:
            state = BrokerState(
                id=spec.agent,
                contact_list=[],
                neighbors=tuple(sorted(AgentId(AgentKind.BROKER, n) for n in spec.neighbors)),
                params=self.params,
                max_migrations=self.max_migrations,
                criteria=scenario.criteria,
            )
            self.brokers[spec.agent] = state
            self.visibility[spec.agent] = set()

        for spec in scenario.providers:
            self._add_provider(spec)
        for spec in scenario.brokers:
            for pid in spec.visible_providers:
                self.visibility[spec.agent].add(AgentId(AgentKind.PROVIDER, pid))

        self.consumers: dict[AgentId, ConsumerState] = {}
        for spec in scenario.consumers:
            conv = conversation_id(spec.agent, 0)
            self.consumers[spec.agent] = ConsumerState(
                id=spec.agent,
                request=spec.request(),
                conversation=conv,
                params=self.params,
                max_rejects=scenario.max_rejects,
            )
            self.durations[conv] = spec.task_duration

        self.queue: list[tuple[int, int, Event]] = []
        self.seq = 0
        self.now = 0
        self.trace: list[EventRecord] = []
        self.meta: dict[str, ConversationMeta] = {}
        self.diagnostics = Diagnostics()
        self.workloads: dict[AgentId, WorkloadStat] = {
            bid: WorkloadStat() for bid in self.brokers
        }
        self.pending_migrations: dict[str, MigrationProbe] = {}

    # -- infrastructure -----------------------------------------------------

    def _add_provider(self, spec: ProviderSpec) -> None:
        pid = spec.agent
        self.providers[pid] = ProviderState(
            id=pid,
            capacity=spec.capacity_dict(),
            base_prices=spec.price_dict(),
            params=self.params,
        )
        self.registry.add(pid)
        for bid in spec.visible_to:
            self.visibility[AgentId(AgentKind.BROKER, bid)].add(pid)

    def delay(self, a: AgentId, b: AgentId) -> int:
        return self.delays.get((a, b), self.default_delay)

    def schedule(self, time: int, **kwargs) -> Event:
        assert time >= self.now, f"event scheduled in the past: {time} < {self.now}"
        self.seq += 1
        event = Event(time=time, seq=self.seq, **kwargs)
        heapq.heappush(self.queue, (event.time, event.seq, event))
        return event

    def send(self, msg: Message, now: int) -> None:
        self.schedule(
            now + self.delay(msg.sender, msg.receiver), kind=EventKind.DELIVER, message=msg
        )

    def registry_view(self, bid: AgentId) -> list[ContactEntry]:
        view = []
        for pid in sorted(self.visibility[bid]):
            if pid not in self.registry:
                continue
            provider = self.providers[pid]
            view.append(
                ContactEntry(
                    provider=pid,
                    prices=dict(provider.base_prices),
                    grade=0.5,
                    status=EntryStatus.LIVE,
                    delay=self.delay(bid, pid),
                )
            )
        return view

    def neighbor_snapshot(self, of: AgentId) -> list[NeighborInfo]:
        """Fresh per-call info for each neighbor, as its next refresh would see it."""
        out = []
        for nid in self.brokers[of].neighbors:
            neighbor = self.brokers[nid]
            projected = update_contact_list(neighbor.contact_list, self.registry_view(nid))
            live = [e for e in projected if e.status is EntryStatus.LIVE and e.provider in self.registry]
            types: set[str] = set()
            for entry in live:
                types.update(entry.prices)
            out.append(
                NeighborInfo(
                    broker=nid,
                    workload=neighbor.in_flight,
                    delay=self.delay(of, nid),
                    provider_types=frozenset(types),
                    provider_count=len(live),
                )
            )
        return out

    # -- trace --------------------------------------------------------------

    def record(self, event: Event, payload_suffix: str = "") -> None:
        kind = event.kind.value
        sender = receiver = performative = conversation = "-"
        payload = "-"
        if event.kind is EventKind.DELIVER:
            msg = event.message
            sender, receiver = str(msg.sender), str(msg.receiver)
            performative = msg.performative.value
            conversation = msg.conversation
            payload = msg.payload_digest()
        elif event.kind is EventKind.CHURN:
            churn = event.churn
            performative = f"provider-{churn.action.value}"
            receiver = str(churn.provider if churn.provider is not None else churn.join.agent)
        elif event.kind is EventKind.CONSUMER_START:
            receiver = str(event.request.consumer)
            conversation = event.conversation
            payload = event.request.digest()
        elif event.kind is EventKind.HOLD_EXPIRY:
            receiver = str(event.provider)
            conversation = event.conversation
        elif event.kind is EventKind.TASK_COMPLETE:
            receiver = str(self.meta[event.conversation].consumer)
            conversation = event.conversation
        if payload_suffix:
            payload = payload + payload_suffix if payload != "-" else payload_suffix.lstrip(",")
        self.trace.append(
            EventRecord(
                time=event.time,
                seq=event.seq,
                kind=kind,
                sender=sender,
                receiver=receiver,
                performative=performative,
                conversation=conversation,
                payload=payload,
            )
        )

    def sample_workloads(self) -> None:
        for bid, state in self.brokers.items():
            stat = self.workloads[bid]
            stat.peak = max(stat.peak, state.in_flight)
            stat.total += state.in_flight
            stat.samples += 1


def apply_churn(world: _World, event: ChurnEvent) -> None:
    """Apply one membership change to the registry and affected reservations."""
    if event.action is ChurnAction.LEAVE:
        pid = event.provider
        if pid not in world.registry:
            raise ScenarioError(f"churn leave targets unknown or departed provider {pid}")
        world.registry.discard(pid)
        provider = world.providers[pid]
        for conversation in sorted(provider.ledger):
            release_hold(provider, conversation)  # held reservations die with the membership
    else:
        spec = event.join
        if spec.agent in world.providers:
            raise ScenarioError(f"churn join reuses provider id {spec.agent}")
        world._add_provider(spec)


def _probe_migration(world: _World, msg: Message, source: BrokerState) -> MigrationProbe:
    """Recheck the preventive constraints from world state, not trusting the selector."""
    req: Request = msg.payload.request
    target = msg.receiver
    infos = {info.broker: info for info in world.neighbor_snapshot(source.id)}
    info = infos.get(target)
    if info is None:  # not a declared neighbor: fully inadmissible
        return MigrationProbe(msg.conversation, source.id, target, False, False, False)
    return MigrationProbe(
        conversation=msg.conversation,
        source=source.id,
        target=target,
        nonempty=info.provider_count > 0,
        covered=req.bundle.types() <= info.provider_types,
        # the hopped request already carries the sender; the target must not
        unvisited=target not in req.visited,
    )


def _run_once(world: _World, event_budget: int) -> tuple[bool, int]:
    processed = 0
    while world.queue:
        if processed >= event_budget:
            return False, processed
        _, _, event = heapq.heappop(world.queue)
        processed += 1
        now = world.now = event.time

        if event.kind is EventKind.CONSUMER_START:
            world.record(event)
            consumer = world.consumers[event.request.consumer]
            world.meta[event.conversation] = ConversationMeta(
                conversation=event.conversation,
                consumer=consumer.id,
                source=event.request.source,
                issued_at=now,
                bundle=event.request.bundle,
                start=event.request.earliest_start,
                end=event.request.deadline,
                budget=event.request.budget,
                factor=lease_factor(event.request, world.params),
                live_at_issue=tuple(sorted(world.registry)),
            )
            for msg in consumer_start(consumer):
                world.send(msg, now)

        elif event.kind is EventKind.CHURN:
            world.record(event)
            apply_churn(world, event.churn)

        elif event.kind is EventKind.HOLD_EXPIRY:
            provider = world.providers[event.provider]
            released = release_hold(provider, event.conversation)
            world.record(event, payload_suffix=f"released={'yes' if released else 'no'}")

        elif event.kind is EventKind.TASK_COMPLETE:
            meta = world.meta[event.conversation]
            world.record(event, payload_suffix=f"on_time={'yes' if meta.on_time else 'no'}")
            consumer = world.consumers[meta.consumer]
            for msg in consumer_complete(consumer, meta.on_time):
                world.send(msg, now)
            meta.status = "done"
            meta.utility = consumer.utility
            if meta.serving_provider is not None:
                finish_lease(world.providers[meta.serving_provider], event.conversation)

        elif event.kind is EventKind.DELIVER:
            msg = event.message
            target = msg.receiver

            if target.kind is AgentKind.PROVIDER and target not in world.registry:
                # never hand a message to a departed provider; bounce so the
                # sender re-enters its selection loop on its next event
                world.record(event, payload_suffix=",bounced")
                world.diagnostics.bounced += 1
                if msg.performative in (Performative.CFP, Performative.CONFIRM):
                    bounce = Message(
                        Performative.REFUSE,
                        msg.conversation,
                        sender=target,
                        receiver=msg.sender,
                        payload=RefusePayload(reason=RefuseReason.DEPARTED),
                    )
                    world.schedule(now, kind=EventKind.DELIVER, message=bounce)
                world.sample_workloads()
                continue

            world.record(event)
            out: list[Message] = []

            if target.kind is AgentKind.CONSUMER:
                consumer = world.consumers[target]
                _, out = consumer_step(consumer, msg)
                meta = world.meta[msg.conversation]
                if msg.performative is Performative.FAILURE:
                    meta.status = "failed"
                elif msg.performative is Performative.CONFIRM:
                    meta.paid = consumer.paid
                    task_start = max(now, meta.start)
                    notional_end = task_start + world.durations[msg.conversation]
                    meta.on_time = notional_end <= meta.end
                    world.schedule(
                        max(now, min(meta.end, notional_end)),
                        kind=EventKind.TASK_COMPLETE,
                        conversation=msg.conversation,
                    )

            elif target.kind is AgentKind.BROKER:
                broker = world.brokers[target]
                before = broker.in_flight
                migrated_in = (
                    msg.performative is Performative.CFP and msg.sender.kind is AgentKind.BROKER
                )
                if migrated_in:
                    req = msg.payload.request
                    if req.migrations > world.max_migrations:
                        world.diagnostics.hop_violations.append(
                            f"{msg.conversation}: arrived with {req.migrations} hops"
                        )
                    if target in req.visited:
                        world.diagnostics.hop_violations.append(
                            f"{msg.conversation}: revisited {target}"
                        )
                final_inform = (
                    msg.performative is Performative.INFORM
                    and msg.sender.kind is AgentKind.CONSUMER
                )
                if final_inform:
                    conv = broker.conversations.get(msg.conversation)
                    if conv is not None and conv.snapshot is not None:
                        world.meta[msg.conversation].snapshot = conv.snapshot
                _, out = broker_step(
                    broker,
                    msg,
                    now,
                    registry_view=world.registry_view(target),
                    neighbor_info=world.neighbor_snapshot(target),
                )
                if migrated_in:
                    probe = world.pending_migrations.pop(msg.conversation, None)
                    if probe is not None:
                        # isolate the arrival's +1 from a same-event close
                        # (the conversation may migrate onward immediately)
                        closed = msg.conversation not in broker.conversations
                        probe.dest_delta = broker.in_flight - before + (1 if closed else 0)
                opened = 1 if msg.performative is Performative.CFP else 0
                for m in out:
                    if m.performative is Performative.CFP and m.receiver.kind is AgentKind.BROKER:
                        probe = _probe_migration(world, m, broker)
                        # isolate the migration's own -1 from any open at this event
                        probe.source_delta = broker.in_flight - before - opened
                        world.diagnostics.migrations.append(probe)
                        world.pending_migrations[m.conversation] = probe
                        world.meta[m.conversation].migrations = m.payload.request.migrations
                    if m.performative is Performative.PROPOSE and m.payload.stage is ProposeStage.AGREEMENT:
                        meta = world.meta[m.conversation]
                        meta.serving_broker = target
                        meta.serving_provider = m.payload.provider

            else:  # provider
                provider = world.providers[target]
                held_before = provider.ledger.get(msg.conversation)
                _, out = provider_step(provider, msg)
                held_after = provider.ledger.get(msg.conversation)
                if held_after is not None and held_after is not held_before and held_after.status is ReservationStatus.HELD:
                    world.schedule(
                        now + world.hold_timeout,
                        kind=EventKind.HOLD_EXPIRY,
                        conversation=msg.conversation,
                        provider=target,
                    )

            for m in out:
                world.send(m, now)

        world.sample_workloads()
    return True, processed


def run(scenario: Scenario, seed: int = 0, event_budget: int | None = None) -> RunResult:
    """Simulate one scenario to quiescence (or the event budget) and trace it."""
    world = _World(scenario, seed)
    budget = event_budget if event_budget is not None else scenario.event_budget

    for spec in scenario.consumers:
        world.schedule(
            spec.issue_time,
            kind=EventKind.CONSUMER_START,
            request=spec.request(),
            conversation=conversation_id(spec.agent, 0),
        )
    for churn_spec in scenario.churn:
        world.schedule(
            churn_spec.time,
            kind=EventKind.CHURN,
            churn=ChurnEvent(
                time=churn_spec.time,
                action=churn_spec.action,
                provider=(
                    AgentId(AgentKind.PROVIDER, churn_spec.provider)
                    if churn_spec.provider is not None
                    else None
                ),
                join=churn_spec.join,
            ),
        )

    quiescent, processed = _run_once(world, budget)
    open_conversations = sorted(
        conv for conv, meta in world.meta.items() if meta.status == "open"
    )
    if quiescent:
        # queue drained: every started conversation must be terminal, every
        # broker idle, and no reservation may still be held
        for conv in open_conversations:
            raise AssertionError(f"quiescent run left conversation {conv} open")
        for broker in world.brokers.values():
            assert not broker.conversations, (
                f"quiescent run left {broker.id} with open conversations"
            )
            assert broker.in_flight == 0, f"{broker.id} in-flight count desynced"
        for provider in world.providers.values():
            for res in provider.ledger.values():
                assert res.status is not ReservationStatus.HELD, (
                    f"quiescent run left a held reservation for {res.conversation}"
                )

    return RunResult(
        seed=seed,
        trace=world.trace,
        consumers=world.consumers,
        brokers=world.brokers,
        providers=world.providers,
        registry=frozenset(world.registry),
        conversations=world.meta,
        diagnostics=world.diagnostics,
        workloads=world.workloads,
        quiescent=quiescent,
        open_conversations=open_conversations,
        events_processed=processed,
    )
