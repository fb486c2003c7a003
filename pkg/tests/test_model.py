import pytest
from hypothesis import given, strategies as st

from fedsim.model import (
    AgentId,
    AgentKind,
    FailurePayload,
    Message,
    Performative,
    RefusePayload,
    RefuseReason,
    ValidationError,
    broker,
    consumer,
    money,
    provider,
    validate_request,
)

from helpers import bundle, request


def test_validate_request_accepts_plain_request():
    validate_request(request(start=0, end=10, budget="5.00", cpu=1))


def test_deadline_must_follow_start():
    with pytest.raises(ValidationError) as err:
        validate_request(request(start=10, end=10))
    assert err.value.code == "deadline-before-start"


def test_zero_quantity_rejected():
    with pytest.raises(ValidationError) as err:
        validate_request(request(cpu=0))
    assert err.value.code == "non-positive-quantity"


def test_negative_budget_rejected():
    with pytest.raises(ValidationError) as err:
        validate_request(request(budget="-1.00"))
    assert err.value.code == "negative-budget"


def test_empty_bundle_rejected():
    req = request()
    req = type(req)(**{**req.__dict__, "bundle": bundle()})
    with pytest.raises(ValidationError) as err:
        validate_request(req)
    assert err.value.code == "empty-bundle"


def test_migration_limit_checked_when_given():
    req = request(migrations=3)
    validate_request(req)  # no limit, fine
    with pytest.raises(ValidationError) as err:
        validate_request(req, max_migrations=2)
    assert err.value.code == "migration-limit-exceeded"


@given(
    start=st.integers(min_value=-5, max_value=20),
    end=st.integers(min_value=-5, max_value=20),
    budget=st.integers(min_value=-50, max_value=50),
    qty=st.integers(min_value=-2, max_value=5),
)
def test_fuzzed_requests_never_validate_while_invalid(start, end, budget, qty):
    req = request(start=max(start, 0), end=end, budget=f"{budget}.00", cpu=qty)
    try:
        validate_request(req)
    except ValidationError:
        return
    assert req.earliest_start < req.deadline
    assert req.budget >= 0
    assert all(q > 0 for _, q in req.bundle.items)


agent_ids = st.builds(
    AgentId,
    kind=st.sampled_from(list(AgentKind)),
    index=st.integers(min_value=0, max_value=50),
)


@given(a=agent_ids, b=agent_ids)
def test_agent_order_is_total_and_antisymmetric(a, b):
    if a == b:
        assert not a < b and not b < a
    else:
        assert (a < b) != (b < a)


@given(a=agent_ids, b=agent_ids, c=agent_ids)
def test_agent_order_is_transitive(a, b, c):
    if a < b and b < c:
        assert a < c


def test_agent_id_string_round_trip():
    for aid in (consumer(0), broker(3), provider(12)):
        assert AgentId.parse(str(aid)) == aid


def test_agent_id_parse_rejects_junk():
    with pytest.raises(ValidationError):
        AgentId.parse("nonsense")
    with pytest.raises(ValidationError):
        AgentId.parse("wizard:3")


def test_bundle_is_canonical_regardless_of_insertion_order():
    assert bundle(cpu=1, gpu=2) == bundle(gpu=2, cpu=1)
    assert bundle(cpu=1, gpu=2).digest() == "cpu:1+gpu:2"


def test_failure_is_broker_to_consumer_only():
    Message(Performative.FAILURE, "consumer:0#0", broker(0), consumer(0), FailurePayload("x"))
    with pytest.raises(ValidationError):
        Message(Performative.FAILURE, "consumer:0#0", provider(0), consumer(0), FailurePayload("x"))
    with pytest.raises(ValidationError):
        Message(Performative.FAILURE, "consumer:0#0", broker(0), broker(1), FailurePayload("x"))


def test_reject_must_carry_cost_limit():
    with pytest.raises(ValidationError):
        Message(Performative.REJECT_PROPOSAL, "consumer:0#0", consumer(0), broker(0))


def test_provider_refuse_must_carry_ratio_payload():
    with pytest.raises(ValidationError):
        Message(Performative.REFUSE, "consumer:0#0", provider(0), broker(0))
    Message(
        Performative.REFUSE,
        "consumer:0#0",
        provider(0),
        broker(0),
        RefusePayload(reason=RefuseReason.CAPACITY, ratios=(("cpu", 0.5),)),
    )


def test_money_rounds_half_even():
    assert money("2.005") == money("2.00")
    assert money("2.015") == money("2.02")
    assert str(money(2)) == "2.00"
