from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptpm.errors import IncompleteInit, IntegerOutOfBounds, TypeMismatch, UnboundVariable
from adaptpm.model import Cmp, Const, Var
from adaptpm.state import (
    Interpretation,
    RealityPair,
    apply_effects,
    apply_expected,
    apply_exogenous,
    deviations,
    eval_formula,
    same_state,
)
from adaptpm.syntax import parse_formula

LOCS = ["loc00", "loc01", "loc02", "loc03", "loc10", "loc11", "loc13", "loc20", "loc23", "loc30", "loc31", "loc32", "loc33"]


@pytest.fixture(scope="module")
def phi(case_domain, case_init):
    return Interpretation.closed_world(case_domain, case_init.values)


@pytest.fixture(scope="module")
def pair(phi):
    return RealityPair(phi, phi.relevant_part())


def f(domain, text):
    return parse_formula(text, domain)


def test_is_connected_in_appendix_state(case_domain, appendix_init):
    phi = Interpretation.closed_world(case_domain, appendix_init.values)
    assert eval_formula(f(case_domain, "isConnected[act2] == true"), phi)


def test_act1_out_of_range_is_disconnected(case_domain, phi):
    moved = phi.updated({("at", "act1"): "loc03"})
    assert not eval_formula(f(case_domain, "isConnected[act1] == true"), moved)
    assert eval_formula(f(case_domain, "isConnected[act1] == true"), phi)


def test_vacuous_and_bound_quantifiers(case_domain, phi):
    # no location is both covered and uncovered, so the universal over the filtered set is vacuous
    text = "FORALL(l:Location_type).(NOT (covered[l] == true AND covered[l] == false))"
    assert eval_formula(f(case_domain, text), phi)
    assert not eval_formula(f(case_domain, "FORALL(l:Location_type).(covered[l] == true)"), phi)
    assert eval_formula(f(case_domain, "EXISTS(l:Location_type).(covered[l] == true)"), phi)


def test_unbound_variable_and_type_mismatch(case_domain, phi):
    with pytest.raises(UnboundVariable):
        eval_formula(Cmp(Var("x"), "==", Const("loc00")), phi, {})
    with pytest.raises(TypeMismatch):
        eval_formula(Cmp(Const("loc00"), "<", Const(3)), phi, {})


def test_move_consumes_battery(case_domain, phi):
    out = apply_effects(phi, case_domain.tasks["move"], ("loc00", "loc10"), ("loc10",), True, "rb1")
    assert out[("atRobot", "rb1")] == "loc10"
    assert out[("batteryLevel", "rb1")] == 13
    without = apply_effects(phi, case_domain.tasks["move"], ("loc00", "loc10"), ("loc10",), False, "rb1")
    assert without[("batteryLevel", "rb1")] == 15


def test_chargebattery_moves_energy(case_domain, phi):
    out = apply_effects(phi, case_domain.tasks["chargebattery"], ("rb1",), (), True, "act4")
    assert out[("batteryLevel", "rb1")] == 25
    assert out[("generalBattery",)] == 20


def test_integer_out_of_bounds(case_domain, phi):
    full = phi.updated({("batteryLevel", "rb1"): 25})
    with pytest.raises(IntegerOutOfBounds):
        apply_effects(full, case_domain.tasks["chargebattery"], ("rb1",), (), True, "act4")


def test_success_matches_design_intent(case_domain, pair):
    go = case_domain.tasks["go"]
    phys = apply_effects(pair.physical, go, ("loc00", "loc33"), ("loc33",), True, "act1")
    exp = apply_expected(pair.expected, go, ("loc00", "loc33"), ("loc33",), "act1", pair.physical)
    assert same_state(RealityPair(phys, exp))


def test_go_deviation_splits_realities(case_domain, pair):
    go = case_domain.tasks["go"]
    phys = apply_effects(pair.physical, go, ("loc00", "loc33"), ("loc03",), True, "act1")
    exp = apply_expected(pair.expected, go, ("loc00", "loc33"), ("loc33",), "act1", pair.physical)
    assert phys[("at", "act1")] == "loc03"
    assert exp[("at", "act1")] == "loc33"
    after = RealityPair(phys, exp)
    assert not same_state(after)
    assert deviations(after) == [(("at", "act1"), "loc03", "loc33")]


def test_non_relevant_changes_leave_expected_alone(case_domain, pair):
    move = case_domain.tasks["move"]
    exp = apply_expected(pair.expected, move, ("loc00", "loc10"), ("loc10",), "rb1", pair.physical)
    assert exp == pair.expected
    phys = apply_effects(pair.physical, move, ("loc00", "loc10"), ("loc10",), True, "rb1")
    assert same_state(RealityPair(phys, exp))


def test_exogenous_effects(case_domain, pair):
    ev = case_domain.events
    phi = apply_exogenous(pair.physical, ev["rockSlide"], ("loc31",))
    assert phi[("status", "loc31")] == "debris"
    taken = pair.physical.updated({("photoTaken", "loc33"): True})
    assert apply_exogenous(taken, ev["photoLost"], ("loc33",))[("photoTaken", "loc33")] is False
    once = apply_exogenous(pair.physical, ev["fireRisk"], ("loc32",))
    assert apply_exogenous(once, ev["fireRisk"], ("loc32",)) == once
    assert not same_state(RealityPair(phi, pair.expected))


def test_initial_state_is_aligned(pair):
    assert same_state(pair)
    assert set(pair.expected) == set(pair.physical.domain.relevant_instances())


def test_closed_world_rules(case_domain, case_init):
    values = {k: v for k, v in case_init.values.items() if v is not False}
    assert Interpretation.closed_world(case_domain, values) == Interpretation.closed_world(case_domain, case_init.values)
    del values[("generalBattery",)]
    with pytest.raises(IncompleteInit):
        Interpretation.closed_world(case_domain, values)


def test_frame_property(case_domain, phi):
    out = apply_effects(phi, case_domain.tasks["move"], ("loc00", "loc10"), ("loc10",), True, "rb1")
    changed = {k for k in phi if phi[k] != out[k]}
    assert changed == {("atRobot", "rb1"), ("batteryLevel", "rb1")}


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(["act1", "act2", "act3", "act4"]),
    st.sampled_from(LOCS),
    st.sampled_from(LOCS),
    st.sampled_from(["rockSlide", "fireRisk", "photoLost"]),
    st.sampled_from(LOCS),
)
def test_identical_updates_preserve_alignment_and_exog_never_touches_expected(
    case_domain, pair, who, src, dst, event, where
):
    go = case_domain.tasks["go"]
    phys = apply_effects(pair.physical, go, (src, dst), (dst,), True, who)
    exp = apply_expected(pair.expected, go, (src, dst), (dst,), who, pair.physical)
    assert same_state(RealityPair(phys, exp))
    hit = apply_exogenous(phys, case_domain.events[event], (where,))
    assert exp == apply_expected(pair.expected, go, (src, dst), (dst,), who, pair.physical)
    same = same_state(RealityPair(hit, exp))
    assert same == (deviations(RealityPair(hit, exp)) == [])
    # the check is symmetric on the relevant part
    assert same == same_state(RealityPair(exp, hit.relevant_part()))
