"""Scenario files: schema, loading, validation, and echo output.

A scenario is one JSON document describing the whole world: brokers with
their neighbor links and provider visibility, providers with capacities and
base prices, consumers with their requests, the churn schedule, pricing
parameters, and the delay matrix. See README for the documented schema.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import (
    AgentId,
    Money,
    Request,
    ResourceBundle,
    ScenarioError,
    ValidationError,
    broker,
    consumer,
    format_money,
    money,
    provider,
    validate_request,
)
from .pricing import LeaseMode, PricingParams
from .model import DomainError

DEFAULT_EVENT_BUDGET = 1_000_000
DEFAULT_HOLD_TIMEOUT = 50
DEFAULT_MAX_REJECTS = 3
DEFAULT_DELAY = 1


class ChurnAction(str, enum.Enum):
    JOIN = "join"
    LEAVE = "leave"


@dataclass(frozen=True)
class ProviderSpec:
    id: int
    capacity: tuple[tuple[str, int], ...]
    base_prices: tuple[tuple[str, Money], ...]
    visible_to: tuple[int, ...] = ()  # brokers that see the provider when it joins

    @property
    def agent(self) -> AgentId:
        return provider(self.id)

    def capacity_dict(self) -> dict[str, int]:
        return dict(self.capacity)

    def price_dict(self) -> dict[str, Money]:
        return dict(self.base_prices)


@dataclass(frozen=True)
class BrokerSpec:
    id: int
    neighbors: tuple[int, ...]
    visible_providers: tuple[int, ...]

    @property
    def agent(self) -> AgentId:
        return broker(self.id)


@dataclass(frozen=True)
class ConsumerSpec:
    id: int
    broker: int
    issue_time: int
    earliest_start: int
    deadline: int
    budget: Money
    bundle: tuple[tuple[str, int], ...]
    task_duration: int

    @property
    def agent(self) -> AgentId:
        return consumer(self.id)

    def request(self) -> Request:
        return Request(
            consumer=self.agent,
            bundle=ResourceBundle(self.bundle),
            earliest_start=self.earliest_start,
            deadline=self.deadline,
            budget=self.budget,
            source=broker(self.broker),
        )


@dataclass(frozen=True)
class ChurnSpec:
    time: int
    action: ChurnAction
    provider: int | None = None        # leave target
    join: ProviderSpec | None = None   # join payload


@dataclass(frozen=True)
class DelaySpec:
    a: AgentId
    b: AgentId
    delay: int


@dataclass(frozen=True)
class Scenario:
    resource_types: tuple[str, ...]
    brokers: tuple[BrokerSpec, ...]
    providers: tuple[ProviderSpec, ...]
    consumers: tuple[ConsumerSpec, ...]
    churn: tuple[ChurnSpec, ...] = ()
    delays: tuple[DelaySpec, ...] = ()
    pricing: PricingParams = PricingParams()
    criteria: tuple[str, ...] = ("workload", "delay")
    max_migrations: int | None = None  # None: broker count - 1
    max_rejects: int = DEFAULT_MAX_REJECTS
    hold_timeout: int = DEFAULT_HOLD_TIMEOUT
    event_budget: int = DEFAULT_EVENT_BUDGET
    default_delay: int = DEFAULT_DELAY

    def effective_max_migrations(self) -> int:
        if self.max_migrations is not None:
            return self.max_migrations
        return max(0, len(self.brokers) - 1)


def _require(data: dict, key: str, where: str):
    if key not in data:
        raise ScenarioError(f"{where}: missing required field {key!r}")
    return data[key]


def _int_field(data: dict, key: str, where: str, minimum: int | None = None) -> int:
    value = _require(data, key, where)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ScenarioError(f"{where}.{key}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ScenarioError(f"{where}.{key}: must be >= {minimum}, got {value}")
    return value


def _money_field(data: dict, key: str, where: str) -> Money:
    value = _require(data, key, where)
    try:
        return money(value)
    except Exception:
        raise ScenarioError(f"{where}.{key}: cannot read {value!r} as money") from None


def _quantity_map(data, where: str, types: set[str]) -> tuple[tuple[str, int], ...]:
    if not isinstance(data, dict) or not data:
        raise ScenarioError(f"{where}: expected a non-empty mapping of resource type to quantity")
    out = []
    for rtype, qty in data.items():
        if rtype not in types:
            raise ScenarioError(f"{where}: resource type {rtype!r} is not declared")
        if not isinstance(qty, int) or isinstance(qty, bool) or qty <= 0:
            raise ScenarioError(f"{where}.{rtype}: quantity must be a positive integer, got {qty!r}")
        out.append((rtype, qty))
    return tuple(sorted(out))


def _price_map(data, where: str, types: set[str]) -> tuple[tuple[str, Money], ...]:
    if not isinstance(data, dict) or not data:
        raise ScenarioError(f"{where}: expected a non-empty mapping of resource type to unit price")
    out = []
    for rtype, price in data.items():
        if rtype not in types:
            raise ScenarioError(f"{where}: resource type {rtype!r} is not declared")
        try:
            value = money(price)
        except Exception:
            raise ScenarioError(f"{where}.{rtype}: cannot read {price!r} as money") from None
        if value < 0:
            raise ScenarioError(f"{where}.{rtype}: unit price must be >= 0, got {price!r}")
        out.append((rtype, value))
    return tuple(sorted(out))


def _provider_spec(raw: dict, where: str, types: set[str], broker_ids: set[int]) -> ProviderSpec:
    pid = _int_field(raw, "id", where, minimum=0)
    cap = _quantity_map(_require(raw, "capacity", where), f"{where}.capacity", types)
    prices = _price_map(_require(raw, "base_prices", where), f"{where}.base_prices", types)
    visible_to: tuple[int, ...] = ()
    if "visible_to" in raw:
        seen = raw["visible_to"]
        if not isinstance(seen, list):
            raise ScenarioError(f"{where}.visible_to: expected a list of broker ids")
        for bid in seen:
            if bid not in broker_ids:
                raise ScenarioError(f"{where}.visible_to: broker {bid!r} is not declared")
        visible_to = tuple(sorted(set(seen)))
    return ProviderSpec(id=pid, capacity=cap, base_prices=prices, visible_to=visible_to)


def parse_scenario(data: dict, where: str = "scenario") -> Scenario:
    """Build and fully validate a Scenario from parsed JSON."""
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: expected a JSON object at the top level")

    raw_types = _require(data, "resource_types", where)
    if not isinstance(raw_types, list) or not raw_types:
        raise ScenarioError(f"{where}.resource_types: expected a non-empty list")
    types: list[str] = []
    for rtype in raw_types:
        if not isinstance(rtype, str) or not rtype:
            raise ScenarioError(f"{where}.resource_types: {rtype!r} is not a valid type name")
        if rtype in types:
            raise ScenarioError(f"{where}.resource_types: duplicate type {rtype!r}")
        types.append(rtype)
    type_set = set(types)

    pricing = PricingParams()
    if "pricing" in data:
        raw = data["pricing"]
        if not isinstance(raw, dict):
            raise ScenarioError(f"{where}.pricing: expected an object")
        try:
            pricing = PricingParams(
                demand_sensitivity=float(raw.get("demand_sensitivity", 1.0)),
                grade_smoothing=float(raw.get("grade_smoothing", 0.3)),
                cost_weight=float(raw.get("cost_weight", 0.5)),
                time_weight=float(raw.get("time_weight", 0.5)),
                lease_mode=LeaseMode(raw.get("lease_mode", "lease-duration")),
            )
        except (DomainError, ValueError) as exc:
            raise ScenarioError(f"{where}.pricing: {exc}") from None

    # brokers
    raw_brokers = _require(data, "brokers", where)
    if not isinstance(raw_brokers, list) or not raw_brokers:
        raise ScenarioError(f"{where}.brokers: expected a non-empty list")
    broker_ids: set[int] = set()
    for i, raw in enumerate(raw_brokers):
        bid = _int_field(raw, "id", f"{where}.brokers[{i}]", minimum=0)
        if bid in broker_ids:
            raise ScenarioError(f"{where}.brokers[{i}]: duplicate broker id {bid}")
        broker_ids.add(bid)

    # providers (declared up front; more may join through churn)
    raw_providers = data.get("providers", [])
    if not isinstance(raw_providers, list):
        raise ScenarioError(f"{where}.providers: expected a list")
    providers: list[ProviderSpec] = []
    provider_ids: set[int] = set()
    for i, raw in enumerate(raw_providers):
        spec = _provider_spec(raw, f"{where}.providers[{i}]", type_set, broker_ids)
        if spec.id in provider_ids:
            raise ScenarioError(f"{where}.providers[{i}]: duplicate provider id {spec.id}")
        provider_ids.add(spec.id)
        providers.append(spec)

    brokers: list[BrokerSpec] = []
    neighbor_sets: dict[int, set[int]] = {}
    for i, raw in enumerate(raw_brokers):
        loc = f"{where}.brokers[{i}]"
        bid = raw["id"]
        raw_neighbors = raw.get("neighbors", [])
        if not isinstance(raw_neighbors, list):
            raise ScenarioError(f"{loc}.neighbors: expected a list of broker ids")
        for nid in raw_neighbors:
            if nid not in broker_ids:
                raise ScenarioError(f"{loc}.neighbors: broker {nid!r} is not declared")
            if nid == bid:
                raise ScenarioError(f"{loc}.neighbors: broker {bid} cannot neighbor itself")
        raw_visible = raw.get("visible_providers", [])
        if not isinstance(raw_visible, list):
            raise ScenarioError(f"{loc}.visible_providers: expected a list of provider ids")
        for pid in raw_visible:
            if pid not in provider_ids:
                raise ScenarioError(f"{loc}.visible_providers: provider {pid!r} is not declared")
        neighbor_sets[bid] = set(raw_neighbors)
        brokers.append(
            BrokerSpec(
                id=bid,
                neighbors=tuple(sorted(set(raw_neighbors))),
                visible_providers=tuple(sorted(set(raw_visible))),
            )
        )
    for spec in brokers:
        for nid in spec.neighbors:
            if spec.id not in neighbor_sets[nid]:
                raise ScenarioError(
                    f"{where}.brokers: neighbor edge {spec.id} -> {nid} is not symmetric"
                )

    # consumers
    raw_consumers = data.get("consumers", [])
    if not isinstance(raw_consumers, list):
        raise ScenarioError(f"{where}.consumers: expected a list")
    consumers: list[ConsumerSpec] = []
    consumer_ids: set[int] = set()
    for i, raw in enumerate(raw_consumers):
        loc = f"{where}.consumers[{i}]"
        cid = _int_field(raw, "id", loc, minimum=0)
        if cid in consumer_ids:
            raise ScenarioError(f"{loc}: duplicate consumer id {cid}")
        consumer_ids.add(cid)
        home = _int_field(raw, "broker", loc)
        if home not in broker_ids:
            raise ScenarioError(f"{loc}.broker: broker {home!r} is not declared")
        spec = ConsumerSpec(
            id=cid,
            broker=home,
            issue_time=_int_field(raw, "issue_time", loc, minimum=0),
            earliest_start=_int_field(raw, "earliest_start", loc, minimum=0),
            deadline=_int_field(raw, "deadline", loc, minimum=0),
            budget=_money_field(raw, "budget", loc),
            bundle=_quantity_map(_require(raw, "bundle", loc), f"{loc}.bundle", type_set),
            task_duration=_int_field(raw, "task_duration", loc, minimum=1),
        )
        try:
            validate_request(spec.request())
        except ValidationError as exc:
            raise ScenarioError(f"{loc}: {exc.code}: {exc}") from None
        consumers.append(spec)

    # churn schedule
    raw_churn = data.get("churn", [])
    if not isinstance(raw_churn, list):
        raise ScenarioError(f"{where}.churn: expected a list")
    churn: list[ChurnSpec] = []
    live_after: set[int] = set(provider_ids)
    all_provider_ids = set(provider_ids)
    for i, raw in enumerate(sorted(raw_churn, key=lambda c: c.get("time", 0))):
        loc = f"{where}.churn[{i}]"
        when = _int_field(raw, "time", loc, minimum=0)
        action = _require(raw, "action", loc)
        if action == ChurnAction.LEAVE.value:
            target = _int_field(raw, "provider", loc, minimum=0)
            if target not in live_after:
                raise ScenarioError(f"{loc}: provider {target} is not live at time {when}")
            live_after.discard(target)
            churn.append(ChurnSpec(time=when, action=ChurnAction.LEAVE, provider=target))
        elif action == ChurnAction.JOIN.value:
            raw_spec = _require(raw, "provider", loc)
            if not isinstance(raw_spec, dict):
                raise ScenarioError(f"{loc}.provider: join needs a provider object")
            spec = _provider_spec(raw_spec, f"{loc}.provider", type_set, broker_ids)
            if spec.id in all_provider_ids:
                raise ScenarioError(f"{loc}.provider: provider id {spec.id} already used")
            all_provider_ids.add(spec.id)
            live_after.add(spec.id)
            churn.append(ChurnSpec(time=when, action=ChurnAction.JOIN, join=spec))
        else:
            raise ScenarioError(f"{loc}.action: expected 'join' or 'leave', got {action!r}")

    # delay matrix
    raw_delays = data.get("delays", [])
    if not isinstance(raw_delays, list):
        raise ScenarioError(f"{where}.delays: expected a list")
    known_agents = (
        {broker(b) for b in broker_ids}
        | {provider(p) for p in all_provider_ids}
        | {consumer(c) for c in consumer_ids}
    )
    delays: list[DelaySpec] = []
    for i, raw in enumerate(raw_delays):
        loc = f"{where}.delays[{i}]"
        try:
            a = AgentId.parse(str(_require(raw, "a", loc)))
            b = AgentId.parse(str(_require(raw, "b", loc)))
        except ValidationError as exc:
            raise ScenarioError(f"{loc}: {exc}") from None
        if a not in known_agents or b not in known_agents:
            missing = a if a not in known_agents else b
            raise ScenarioError(f"{loc}: agent {missing} is not declared")
        delays.append(DelaySpec(a=a, b=b, delay=_int_field(raw, "delay", loc, minimum=0)))

    criteria = tuple(data.get("criteria", ["workload", "delay"]))
    from .migration import CRITERIA

    for name in criteria:
        if name not in CRITERIA:
            raise ScenarioError(f"{where}.criteria: unknown criterion {name!r}")
    if not criteria:
        raise ScenarioError(f"{where}.criteria: at least one criterion is required")

    max_migrations = None
    if "max_migrations" in data:
        max_migrations = _int_field(data, "max_migrations", where, minimum=0)

    return Scenario(
        resource_types=tuple(types),
        brokers=tuple(brokers),
        providers=tuple(providers),
        consumers=tuple(consumers),
        churn=tuple(churn),
        delays=tuple(delays),
        pricing=pricing,
        criteria=criteria,
        max_migrations=max_migrations,
        max_rejects=_int_field(data, "max_rejects", where, minimum=0) if "max_rejects" in data else DEFAULT_MAX_REJECTS,
        hold_timeout=_int_field(data, "hold_timeout", where, minimum=1) if "hold_timeout" in data else DEFAULT_HOLD_TIMEOUT,
        event_budget=_int_field(data, "event_budget", where, minimum=1) if "event_budget" in data else DEFAULT_EVENT_BUDGET,
        default_delay=_int_field(data, "default_delay", where, minimum=0) if "default_delay" in data else DEFAULT_DELAY,
    )


def load_scenario(path) -> Scenario:
    """Parse and validate the scenario file at `path`."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {p}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_scenario(data, where=str(p))


def _provider_to_dict(spec: ProviderSpec, include_visibility: bool) -> dict:
    out = {
        "id": spec.id,
        "capacity": {r: q for r, q in spec.capacity},
        "base_prices": {r: format_money(price) for r, price in spec.base_prices},
    }
    if include_visibility and spec.visible_to:
        out["visible_to"] = list(spec.visible_to)
    return out


def scenario_to_dict(scn: Scenario) -> dict:
    """Echo a Scenario back to its JSON form (round-trips through parse_scenario)."""
    data = {
        "resource_types": list(scn.resource_types),
        "pricing": {
            "demand_sensitivity": scn.pricing.demand_sensitivity,
            "grade_smoothing": scn.pricing.grade_smoothing,
            "cost_weight": scn.pricing.cost_weight,
            "time_weight": scn.pricing.time_weight,
            "lease_mode": scn.pricing.lease_mode.value,
        },
        "criteria": list(scn.criteria),
        "max_rejects": scn.max_rejects,
        "hold_timeout": scn.hold_timeout,
        "event_budget": scn.event_budget,
        "default_delay": scn.default_delay,
        "brokers": [
            {
                "id": b.id,
                "neighbors": list(b.neighbors),
                "visible_providers": list(b.visible_providers),
            }
            for b in scn.brokers
        ],
        "providers": [_provider_to_dict(p, include_visibility=False) for p in scn.providers],
        "consumers": [
            {
                "id": c.id,
                "broker": c.broker,
                "issue_time": c.issue_time,
                "earliest_start": c.earliest_start,
                "deadline": c.deadline,
                "budget": format_money(c.budget),
                "bundle": {r: q for r, q in c.bundle},
                "task_duration": c.task_duration,
            }
            for c in scn.consumers
        ],
        "churn": [
            (
                {"time": ev.time, "action": "leave", "provider": ev.provider}
                if ev.action is ChurnAction.LEAVE
                else {"time": ev.time, "action": "join", "provider": _provider_to_dict(ev.join, True)}
            )
            for ev in scn.churn
        ],
        "delays": [{"a": str(d.a), "b": str(d.b), "delay": d.delay} for d in scn.delays],
    }
    if scn.max_migrations is not None:
        data["max_migrations"] = scn.max_migrations
    return data


def save_scenario(scn: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scn), indent=2, sort_keys=True) + "\n")
