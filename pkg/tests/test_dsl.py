from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptpm.dsl import (
    PNode,
    ProcessGraph,
    Scenario,
    check_gateways,
    graph_from_workitems,
    parse_domain,
    parse_init,
    parse_process,
    parse_scenario,
    render_dot,
    write_domain,
    write_init,
    write_process,
    write_scenario,
)
from adaptpm.errors import (
    ArityMismatch,
    BadArity,
    DslSyntaxError,
    DuplicateWorkItemId,
    GatewayArityViolation,
    ParseError,
    RecursiveComplexTerm,
    TypeMismatch,
    UnknownConstant,
    UnknownTask,
    UnknownType,
    UnknownWorkItemId,
    UnsupportedFeature,
)
from adaptpm.model import TRUE, And, WorkItem
from conftest import CASE, TPL
from helpers import micro_domain

MINIMAL = """<domain name="Mini">
  <service>s1</service>
  <capability>c</capability>
  <provides service="s1" capability="c"/>
  <term name="done" args="" result="Boolean_type" relevant="true"/>
  <task>
    <name>work</name>
    <effects><supposed>done[] = true</supposed></effects>
  </task>
  <requires task="work" capability="c"/>
</domain>
"""


def _mini(body: str, extra_terms: str = "") -> str:
    return f"""<domain name="Bad">
  <datatype name="Color" kind="enumerated">red green</datatype>
  <service>s1</service>
  <term name="color" args="" result="Color"/>
  <term name="n" args="" result="Integer_type"/>
  {extra_terms}
  {body}
</domain>"""


def test_case_study_domain_shape(case_domain):
    d = case_domain
    assert len(d.services) == 6
    assert len(d.capabilities) == 8
    assert len(d.datatypes["Location_type"].constants) == 13
    assert sorted(d.tasks) == sorted(
        ["go", "move", "takephoto", "evacuate", "updatestatus", "extinguishfire", "chargebattery", "removedebris"]
    )
    assert len(d.events) == 3
    assert sorted(d.complex_terms) == ["isConnected", "isRobotConnected"]
    assert len(d.adaptation_goals) == 4


def test_minimal_domain_task_always_executable():
    d = parse_domain(MINIMAL)
    assert d.tasks["work"].precondition == And(())


@pytest.mark.parametrize("path", [CASE / "domain.xml", TPL / "domain.xml"])
def test_domain_round_trip(path):
    d = parse_domain(path.read_text())
    again = parse_domain(write_domain(d))
    assert again == d


def test_micro_domain_round_trip():
    for seed in range(40):
        d = micro_domain(random.Random(seed))
        assert parse_domain(write_domain(d)) == d


@pytest.mark.parametrize(
    "text, exc",
    [
        (_mini("<task><name>t</name><effects><automatic>color[] += 1</automatic></effects></task>"), ArityMismatch),
        (_mini('<term name="x" args="Nope" result="Boolean_type"/>'), UnknownType),
        (_mini("<task><name>t</name><effects><supposed>color[] = blue</supposed></effects></task>"), UnknownConstant),
        (_mini("<task><name>t</name><precondition>n[] &gt;= </precondition></task>"), DslSyntaxError),
        (_mini("<task><name>t</name><precondition>color[red] == red</precondition></task>"), ArityMismatch),
        (
            _mini(
                """<complex-term name="a"><parameters/><body>b[]</body></complex-term>
                   <complex-term name="b"><parameters/><body>a[]</body></complex-term>"""
            ),
            RecursiveComplexTerm,
        ),
        ("<domain name='x'><service>s</service>", DslSyntaxError),
    ],
)
def test_domain_errors_carry_spans(text, exc):
    with pytest.raises(exc) as info:
        parse_domain(text, "bad.xml")
    assert isinstance(info.value, ParseError)
    assert info.value.span is not None
    assert info.value.span.file == "bad.xml"


def test_case_process_structure(case_process):
    g = case_process
    assert sorted(g.workitems()) == [f"id_{i}" for i in range(1, 10)]
    kinds = sorted(n.kind for n in g.nodes.values())
    assert kinds.count("ps") == 1 and kinds.count("pj") == 1
    assert len(g.out_edges(next(n.id for n in g.nodes.values() if n.kind == "ps"))) == 3
    check_gateways(g)
    assert g.workitems()["id_1"] == WorkItem("go", "id_1", ("loc00", "loc33"), ("loc33",))


def test_single_task_process(case_domain):
    g = parse_process("seq(go#a[loc00,loc33]->[loc33])", case_domain)
    assert sorted(n.kind for n in g.nodes.values()) == ["end", "start", "task"]
    assert len(g.edges) == 2
    dot = render_dot(g)
    assert dot.count("shape=") == 3
    assert render_dot(g) == dot


@pytest.mark.parametrize(
    "text, exc",
    [
        ("seq(fly#a[]->[])", UnknownTask),
        ("seq(go#a[loc00,loc33]->[loc33], go#a[loc33,loc00]->[loc00])", DuplicateWorkItemId),
        ("seq(go#a[loc00]->[loc33])", ArityMismatch),
        ("seq(go#a[loc00,loc33]->[loc33]", DslSyntaxError),
        ("xor(when at[act1] == loc00: go#a[loc00,loc33]->[loc33])", GatewayArityViolation),
        ("xor(else: go#a[loc00,loc33]->[loc33], when true: go#b[loc00,loc33]->[loc33])", GatewayArityViolation),
    ],
)
def test_process_errors_carry_spans(case_domain, text, exc):
    with pytest.raises(exc) as info:
        parse_process(text, case_domain, "p.proc")
    assert info.value.span is not None and info.value.span.file == "p.proc"


def test_xor_with_missing_guard_is_rejected_by_checker():
    wi = [WorkItem("go", f"t{i}", (), ()) for i in range(3)]
    nodes = {"start": PNode("start", "start"), "end": PNode("end", "end"), "x": PNode("x", "xs"), "j": PNode("j", "xj")}
    edges = [("start", "x")]
    for w in wi:
        nodes[w.id] = PNode(w.id, "task", w)
        edges += [("x", w.id), (w.id, "j")]
    edges.append(("j", "end"))
    guards = {1: TRUE, 3: TRUE}  # three outgoing flows, two guards
    with pytest.raises(GatewayArityViolation):
        check_gateways(ProcessGraph(nodes, edges, guards))


def test_process_round_trip_case(case_domain, case_process):
    text = write_process(case_process)
    again = parse_process(text, case_domain)
    assert write_process(again) == text
    assert again.workitems() == case_process.workitems()


def test_non_block_structured_graph_has_no_dsl_form():
    a, b, c, d = (WorkItem("go", x, (), ()) for x in "abcd")
    nodes = {n: PNode(n, k) for n, k in [("start", "start"), ("end", "end"), ("s1", "ps"), ("s2", "ps"), ("j1", "pj"), ("j2", "pj")]}
    for w in (a, b, c, d):
        nodes[w.id] = PNode(w.id, "task", w)
    # a and b both feed c, b also feeds d: a crossing that blocks cannot express
    edges = [
        ("start", "s1"), ("s1", "a"), ("s1", "b"), ("b", "s2"), ("a", "j1"), ("s2", "j1"),
        ("j1", "c"), ("s2", "d"), ("c", "j2"), ("d", "j2"), ("j2", "end"),
    ]
    g = ProcessGraph(nodes, edges, {})
    check_gateways(g)
    with pytest.raises(UnsupportedFeature):
        write_process(g)


_GO = ["go#{}[loc00,loc33]->[loc33]", "takephoto#{}[loc33]->[true]", "updatestatus#{}[loc32]->[ok]"]


@st.composite
def process_texts(draw, depth=0):
    counter = draw(st.shared(st.builds(lambda: [0]), key="ids"))

    def leaf():
        counter[0] += 1
        return draw(st.sampled_from(_GO)).format(f"id_{counter[0]}")

    kind = draw(st.sampled_from(["task", "seq", "par", "xor"] if depth < 2 else ["task"]))
    if kind == "task":
        return leaf()
    kids = [draw(process_texts(depth + 1)) for _ in range(draw(st.integers(2, 3)))]
    if kind == "xor":
        guards = ["photoTaken[loc33] == true", "evacuated[loc32] == false"]
        parts = [f"when {guards[i % 2]}: {k}" for i, k in enumerate(kids[:-1])] + [f"else: {kids[-1]}"]
        return "xor(" + ", ".join(parts) + ")"
    return f"{kind}(" + ", ".join(kids) + ")"


@settings(max_examples=80, deadline=None)
@given(process_texts())
def test_process_write_parse_is_stable(case_domain, text):
    g = parse_process(text, case_domain)
    check_gateways(g)
    out = write_process(g)
    g2 = parse_process(out, case_domain)
    check_gateways(g2)
    assert write_process(g2) == out
    assert g2.workitems() == g.workitems()
    assert render_dot(g2) == render_dot(parse_process(out, case_domain))


def test_scenario_parsing(case_domain, case_process, deviation):
    assert deviation.outcomes == {"id_1": ("loc03",)}
    sc = parse_scenario("seed 4\nexog rockSlide(loc31) at-step 4\n# c\n", case_process, case_domain)
    assert sc.seed == 4
    assert [(d.step, d.name, d.args) for d in sc.exogenous] == [(4, "rockSlide", ("loc31",))]
    assert parse_scenario("", case_process, case_domain) == Scenario()
    again = parse_scenario(write_scenario(sc), case_process, case_domain)
    assert again == sc


@pytest.mark.parametrize(
    "text, exc",
    [
        ("outcome id_99 loc03", UnknownWorkItemId),
        ("outcome id_1 loc03,loc02", BadArity),
        ("exog rockSlide(loc31,loc32) at-step 2", BadArity),
        ("exog meteor(loc31) at-step 2", UnknownConstant),
        ("launch id_1", DslSyntaxError),
        ("outcome id_2 maybe", TypeMismatch),
    ],
)
def test_scenario_errors(case_domain, case_process, text, exc):
    with pytest.raises(exc) as info:
        parse_scenario(text, case_process, case_domain, "s.scn")
    assert info.value.span is not None


def test_init_round_trip(case_domain, case_init):
    text = write_init(case_init.values, case_init.free)
    again = parse_init(text, case_domain)
    assert again.free == case_init.free
    assert {k: v for k, v in again.values.items() if v is not False} == {
        k: v for k, v in case_init.values.items() if v is not False
    }


def test_workitem_graph_helper_is_sequential():
    items = [WorkItem("go", f"id_{i}", (), ()) for i in range(3)]
    g = graph_from_workitems(items)
    check_gateways(g)
    assert [n.id for n in g.task_nodes()] == ["id_0", "id_1", "id_2"]
