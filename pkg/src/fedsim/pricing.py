"""Cost arithmetic, demand-driven pricing, consumer utility, and provider grading."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping

from .model import DomainError, Money, Request, ResourceBundle, ResourceType, money

PriceTable = Mapping[ResourceType, Money]


class MissingPriceError(DomainError):
    """A bundle names a resource type absent from the price table."""

    def __init__(self, rtype: ResourceType):
        super().__init__(f"no unit price for resource type {rtype!r}")
        self.rtype = rtype


class LeaseMode(str, enum.Enum):
    """Interpretation of the per-request cost factor applied to every unit price."""

    LEASE_DURATION = "lease-duration"  # factor = deadline - earliest_start
    CONSTANT_ONE = "constant-one"      # factor = 1, for unit tests


@dataclass(frozen=True)
class PricingParams:
    """Scenario-wide knobs for pricing, utility, and grade smoothing."""

    demand_sensitivity: float = 1.0   # >= 0, scales the demand/capacity markup
    grade_smoothing: float = 0.3      # in (0, 1], weight of fresh feedback
    cost_weight: float = 0.5          # utility weights, must sum to 1
    time_weight: float = 0.5
    lease_mode: LeaseMode = LeaseMode.LEASE_DURATION

    def __post_init__(self):
        if not isinstance(self.lease_mode, LeaseMode):
            object.__setattr__(self, "lease_mode", LeaseMode(self.lease_mode))
        if self.demand_sensitivity < 0:
            raise DomainError(f"demand_sensitivity must be >= 0, got {self.demand_sensitivity}")
        if not 0 < self.grade_smoothing <= 1:
            raise DomainError(f"grade_smoothing must be in (0, 1], got {self.grade_smoothing}")
        if self.cost_weight < 0 or self.time_weight < 0:
            raise DomainError("utility weights must be >= 0")
        if abs(self.cost_weight + self.time_weight - 1.0) > 1e-9:
            raise DomainError(
                f"utility weights must sum to 1, got {self.cost_weight + self.time_weight}"
            )


def lease_factor(req: Request, params: PricingParams) -> Decimal:
    """The factor multiplying every unit price when costing this request."""
    if params.lease_mode is LeaseMode.CONSTANT_ONE:
        return Decimal(1)
    return Decimal(req.deadline - req.earliest_start)


def total_cost(bundle: ResourceBundle, prices: PriceTable, factor) -> Money:
    """Sum of quantity x unit cost x factor over the bundle, money-rounded once."""
    f = Decimal(str(factor))
    if f <= 0:
        raise DomainError(f"cost factor must be > 0, got {factor}")
    acc = Decimal(0)
    for rtype, qty in bundle.items:
        if rtype not in prices:
            raise MissingPriceError(rtype)
        acc += Decimal(qty) * prices[rtype] * f
    return money(acc)


def expected_unit_price(base: Money, demand: float, capacity: float, sensitivity: float) -> Money:
    """Demand-adjusted unit price: base x (1 + sensitivity x demand/capacity)."""
    if capacity <= 0:
        raise DomainError(f"capacity must be > 0, got {capacity}")
    if demand < 0:
        raise DomainError(f"demand must be >= 0, got {demand}")
    if sensitivity < 0:
        raise DomainError(f"sensitivity must be >= 0, got {sensitivity}")
    markup = Decimal(str(1.0 + sensitivity * (demand / capacity)))
    return money(base * markup)


def compute_utility(budget: Money, paid: Money, on_time: bool, params: PricingParams) -> float:
    """Consumer satisfaction in [0, 1]: weighted savings share plus timeliness."""
    if budget <= 0:
        raise DomainError(f"budget must be > 0, got {budget}")
    if paid < 0:
        raise DomainError(f"paid must be >= 0, got {paid}")
    saved = max(Decimal(0), budget - paid)
    value = params.cost_weight * float(saved / budget) + params.time_weight * (1.0 if on_time else 0.0)
    return min(1.0, max(0.0, value))


def update_grade(old: float, feedback: float, smoothing: float) -> float:
    """Blend fresh feedback into a provider grade: (1-s) x old + s x feedback."""
    if not 0 <= old <= 1:
        raise DomainError(f"grade must be in [0, 1], got {old}")
    if not 0 <= feedback <= 1:
        raise DomainError(f"feedback must be in [0, 1], got {feedback}")
    if not 0 < smoothing <= 1:
        raise DomainError(f"smoothing must be in (0, 1], got {smoothing}")
    new = (1.0 - smoothing) * old + smoothing * feedback
    assert 0.0 <= new <= 1.0  # convex combination, clamping never needed
    return new
