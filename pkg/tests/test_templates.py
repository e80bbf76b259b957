from __future__ import annotations

import random
from dataclasses import replace

import networkx as nx
import pytest

from adaptpm.dsl import check_gateways
from adaptpm.errors import MissingIntegerInit, NegativePreconditionRejected, UnsupportedForTemplates
from adaptpm.model import Cmp, Const, Not, TermRef, make_and
from adaptpm.planner import NoPlan
from adaptpm.state import Interpretation, apply_effects, eval_formula, task_bindings
from adaptpm.templates import (
    A0,
    AINF,
    Library,
    PartialPlan,
    StripsAction,
    build_pt,
    calc_wp,
    concurrent_pairs,
    direct_relations,
    find_prec_next,
    graph_orders,
    linearizations,
    pc2pr,
    pop_plan,
    synthesize,
    wp_interpretation,
)
from conftest import tpl_init
from helpers import goal_reachable, random_dag, run_order


def _dummy(i: int) -> StripsAction:
    return StripsAction("go", "act1", (f"n{i}",), (), frozenset(), frozenset(), frozenset())


def _plan(n: int, orderings, links=()) -> PartialPlan:
    """Partial plan with real steps 2..n+1 and the given orderings among them."""
    steps = (None, None) + tuple(_dummy(i) for i in range(n))
    base = {(A0, AINF)} | {(A0, s) for s in range(2, n + 2)} | {(s, AINF) for s in range(2, n + 2)}
    return PartialPlan(steps, frozenset(base | set(orderings)), frozenset(links))


# --------------------------------------------------------------- find_prec_next


def test_direct_relations_examples():
    prec, nxt = direct_relations("abc", [("a", "b"), ("b", "c"), ("a", "c")])
    assert nxt["a"] == {"b"} and nxt["b"] == {"c"} and prec["c"] == {"b"}
    prec, _ = direct_relations("abc", [("a", "c"), ("b", "c")])
    assert prec["c"] == {"a", "b"}


def test_lonely_step_links_to_dummies():
    prec, nxt = find_prec_next(_plan(1, []))
    assert prec[2] == {A0} and nxt[2] == {AINF}
    assert nxt[A0] == {2} and prec[AINF] == {2}


def test_find_prec_next_equals_transitive_reduction():
    rng = random.Random(5)
    for _ in range(150):
        n, edges = random_dag(rng)
        prec, nxt = find_prec_next(_plan(n, edges))
        g = nx.DiGraph()
        g.add_nodes_from(range(2, n + 2))
        g.add_edges_from(edges)
        red = nx.transitive_reduction(g)
        for v in g.nodes:
            want_next = set(red.successors(v)) or {AINF}
            want_prec = set(red.predecessors(v)) or {A0}
            assert nxt[v] == want_next
            assert prec[v] == want_prec


# --------------------------------------------------------------- build_pt


def test_build_pt_single_action():
    p = _plan(1, [])
    g = build_pt(p, *find_prec_next(p))
    assert sorted(g.edges) == [("id_1", "end"), ("start", "id_1")]


def test_build_pt_split_and_join():
    p = _plan(4, [(2, 3), (2, 4), (3, 5), (4, 5)])
    g = build_pt(p, *find_prec_next(p))
    kinds = sorted(n.kind for n in g.nodes.values())
    assert kinds.count("ps") == 1 and kinds.count("pj") == 1
    split = next(n.id for n in g.nodes.values() if n.kind == "ps")
    join = next(n.id for n in g.nodes.values() if n.kind == "pj")
    assert ("id_1", split) in g.edges and (join, "id_4") in g.edges


def test_build_pt_many_to_many_inserts_split_join_edge():
    p = _plan(4, [(2, 4), (2, 5), (3, 4), (3, 5)])
    g = build_pt(p, *find_prec_next(p))
    ps = {n.id for n in g.nodes.values() if n.kind == "ps"}
    pj = {n.id for n in g.nodes.values() if n.kind == "pj"}
    assert any(a in ps and b in pj for a, b in g.edges)


def test_build_pt_preserves_plan_orderings():
    rng = random.Random(9)
    for _ in range(120):
        n, edges = random_dag(rng)
        p = _plan(n, edges)
        prec, nxt = find_prec_next(p)
        g = build_pt(p, prec, nxt)
        check_gateways(g)
        names = {w.workitem.inputs[0]: w.id for w in g.task_nodes()}
        closure = nx.transitive_closure_dag(nx.DiGraph(edges)) if edges else nx.DiGraph()
        want = {names[f"n{a - 2}"]: set() for a in range(2, n + 2)}
        for a, b in closure.edges:
            want[names[f"n{a - 2}"]].add(names[f"n{b - 2}"])
        assert graph_orders(g) == want


# --------------------------------------------------------------- wp


def test_calc_wp_rule():
    links = [(A0, "f1", 2), (2, "f2", 3), (A0, "f3", 3)]
    assert calc_wp(_plan(2, [(2, 3)], links)) == {"f1", "f3"}
    assert calc_wp(_plan(2, [(2, 3)], [(2, "f2", 3)])) == frozenset()


# --------------------------------------------------------------- PC2PR and POP


def test_pc2pr_goal_and_closed_world(tpl_domain, tpl_goal):
    cd, pb = pc2pr(tpl_domain, tpl_init(tpl_domain, "c2"), tpl_goal)
    assert sorted(pb.goal) == [("debris_free", "loc33"), ("evacuated", "loc32"), ("fire_free", "loc31")]
    assert not any("act3" in f or "rb2" in f for f in pb.init if f[0] != "provides")


def test_missing_integer_is_rejected(tpl_domain, tpl_goal):
    values = dict(tpl_init(tpl_domain, "c2"))
    del values[("batteryLevel", "rb1")]
    with pytest.raises(MissingIntegerInit):
        pc2pr(tpl_domain, values, tpl_goal)


def test_negative_preconditions_and_complex_terms_are_rejected(tpl_domain, tpl_goal, case_domain, case_init):
    go = tpl_domain.tasks["go"]
    neg = replace(go, precondition=make_and([go.precondition, Not(Cmp(TermRef("at", (Const("act1"),)), "==", Const("loc33")))]))
    bad = replace(tpl_domain, tasks={**tpl_domain.tasks, "go": neg})
    with pytest.raises(NegativePreconditionRejected):
        pc2pr(bad, tpl_init(tpl_domain, "c2"), tpl_goal)
    with pytest.raises(UnsupportedForTemplates):
        pc2pr(case_domain, case_init.values, Cmp(TermRef("at", (Const("act1"),)), "==", Const("loc33")))


def test_single_achiever_plan_structure(tpl_domain):
    values = {("at", "act1"): "loc00", ("batteryLevel", "act1"): 0}
    goal = Cmp(TermRef("fire_free", (Const("loc00"),)), "==", Const(True))
    cd, pb = pc2pr(tpl_domain, values, goal)
    p = pop_plan(cd, pb)
    assert p.real_steps() == [2]
    a = p.steps[2]
    assert a.text() == "extinguishfire(act1,loc00)"
    assert p.links == {(A0, f, 2) for f in a.pre} | {(2, ("fire_free", "loc00"), AINF)}


def test_goal_already_true_gives_empty_template(tpl_domain):
    values = {("fire_free", "loc31"): True}
    goal = Cmp(TermRef("fire_free", (Const("loc31"),)), "==", Const(True))
    res = synthesize(tpl_domain, values, goal)
    assert res.template.graph.task_nodes() == []
    assert res.template.wp == {("fire_free", "loc31")}


def test_c1_has_no_template_and_oracle_agrees(tpl_domain, tpl_goal):
    values = tpl_init(tpl_domain, "c1")
    res = synthesize(tpl_domain, values, tpl_goal)
    assert isinstance(res, NoPlan)
    init = Interpretation.closed_world(tpl_domain, values, unassigned_ok=True)
    assert goal_reachable(tpl_domain, init, tpl_goal) is False


# --------------------------------------------------------------- produced templates


@pytest.mark.parametrize("case", ["c2", "c3"])
def test_every_linearization_reaches_goal_from_wp(tpl_domain, tpl_goal, tpl_templates, case):
    pt = tpl_templates[case]
    orders = list(linearizations(pt.graph))
    assert orders
    starts = [
        wp_interpretation(tpl_domain, pt.wp),
        Interpretation.closed_world(tpl_domain, tpl_init(tpl_domain, case), unassigned_ok=True),
    ]
    for start in starts:
        for order in orders:
            final = run_order(tpl_domain, start, pt.graph, pt.services, order)
            assert final is not None, order
            assert eval_formula(tpl_goal, final, {})


def test_templates_are_concurrent(tpl_templates):
    assert all(len(concurrent_pairs(pt.graph)) >= 2 for pt in tpl_templates.values())


@pytest.mark.parametrize("case", ["c2", "c3"])
def test_concurrent_tasks_are_independent(tpl_domain, tpl_templates, case):
    pt = tpl_templates[case]
    g, dom = pt.graph, tpl_domain
    # every (state, tasks done) pair met along some linearization prefix
    reached = set()
    for order in linearizations(g):
        s = wp_interpretation(dom, pt.wp)
        reached.add((s, frozenset()))
        for k in range(len(order)):
            s = run_order(dom, s, g, pt.services, order[k : k + 1])
            reached.add((s, frozenset(order[: k + 1])))

    def pre(nid, s):
        wi = g.nodes[nid].workitem
        task = dom.tasks[wi.task]
        return eval_formula(task.precondition, s, task_bindings(task, wi.inputs, pt.services[nid]))

    def eff(nid, s):
        wi = g.nodes[nid].workitem
        return apply_effects(s, dom.tasks[wi.task], wi.inputs, wi.expected, True, pt.services[nid])

    checked = 0
    for t1, t2 in concurrent_pairs(g):
        for s, done in reached:
            if t1 in done or t2 in done:
                continue
            if pre(t1, s) and pre(t2, s):
                checked += 1
                assert pre(t2, eff(t1, s)) and pre(t1, eff(t2, s)), (t1, t2)
                assert eff(t2, eff(t1, s)) == eff(t1, eff(t2, s))
    assert checked > 0


def test_wp_mentions_only_planned_actors(tpl_templates):
    c2_actors = {f[1] for f in tpl_templates["c2"].wp if f[0] in ("at", "batteryLevel", "provides")}
    assert c2_actors == {"act1", "act2", "act4", "rb1"}
    c3_actors = {f[1] for f in tpl_templates["c3"].wp if f[0] in ("at", "batteryLevel", "provides")}
    assert not c3_actors & {"act3", "act4"}
    for pt in tpl_templates.values():
        assert set(pt.services.values()) == {f[1] for f in pt.wp if f[0] == "provides"}


@pytest.mark.parametrize("case", ["c2", "c3"])
def test_every_wp_fact_is_needed(tpl_domain, tpl_templates, case):
    pt = tpl_templates[case]
    orders = list(linearizations(pt.graph))
    for f in pt.wp:
        if f[0] == "provides":
            dom = replace(tpl_domain, provides=tpl_domain.provides - {f[1:]})
            start = wp_interpretation(dom, pt.wp - {f})
        else:
            dom = tpl_domain
            start = wp_interpretation(dom, pt.wp - {f})
        assert any(run_order(dom, start, pt.graph, pt.services, o) is None for o in orders), f


def test_library_hit_and_misses(tmp_path, tpl_domain, tpl_goal, tpl_templates):
    lib = Library(tmp_path / "lib")
    first = synthesize(tpl_domain, tpl_init(tpl_domain, "c3"), tpl_goal, lib)
    assert not first.from_library
    entry = next((tmp_path / "lib").iterdir())
    assert (entry / "entry.json").exists() and (entry / "template.dot").exists()
    again = synthesize(tpl_domain, tpl_init(tpl_domain, "c3"), tpl_goal, lib)
    assert again.from_library
    assert again.template.wp == first.template.wp
    assert again.template.services == first.template.services

    # a template stored for the smaller team is reused once the team grows
    pt1 = tpl_templates["c2"]
    lib2 = Library(tmp_path / "lib2")
    lib2.put(pt1.fingerprint, pt1.goal, pt1)
    cd, pb = pc2pr(tpl_domain, tpl_init(tpl_domain, "c3"), tpl_goal)
    hit = lib2.get(cd.fingerprint, pb.goal, pb.init)
    assert hit is not None and hit.wp == pt1.wp
    assert graph_orders(hit.graph) == graph_orders(pt1.graph)
    assert lib2.get(cd.fingerprint, pb.goal[:2], pb.init) is None
    assert lib2.get(cd.fingerprint, pb.goal, pb.init - {("at", "act4", "loc00")}) is None
    assert lib2.get("other", pb.goal, pb.init) is None
