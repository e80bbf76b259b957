"""Operational interpreter for process instances.

One call to :func:`step` performs exactly one of, in priority order: intake of
due exogenous events, a run of the deviation monitor, or one life-cycle
action (assign, readyToStart, start, finishedTask, ackCompl, release).
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Protocol

from .dsl import ProcessGraph, Scenario
from .errors import IncompleteInit
from .model import DomainTheory, Value, WorkItem, capable, format_value
from .state import (
    Interpretation,
    RealityPair,
    apply_effects,
    apply_exogenous,
    apply_expected,
    eval_formula,
    instance_text,
    same_state,
    task_bindings,
)

RUNNING, ADAPTING, WAITING, FINISHED, STUCK = "Running", "Adapting", "Waiting", "Finished", "Stuck"
ASSIGNED, RESERVED, STARTED, COMPLETED = "Assigned", "Reserved", "Started", "Completed"
IN_FLIGHT = (ASSIGNED, RESERVED, STARTED, COMPLETED)


@dataclass(frozen=True)
class Record:
    workitem: WorkItem
    service: str
    phase: str
    outputs: tuple[Value, ...] | None = None
    acked: bool = False
    recovery: bool = False


@dataclass(frozen=True)
class RecoveryItem:
    workitem: WorkItem
    service: str


@dataclass
class RecoveryBranch:
    items: tuple[RecoveryItem, ...]
    snapshot: Interpretation
    cursor: int = 0
    clean: bool = True  # no exogenous event, override or nested adaptation since the splice


@dataclass(frozen=True)
class TraceEntry:
    step: int
    text: str


@dataclass
class InstanceState:
    domain: DomainTheory
    graph: ProcessGraph
    realities: RealityPair
    records: dict[str, Record]
    tokens: dict[int, int]
    unavailable: frozenset[str]
    mode: str = RUNNING
    step_counter: int = 0
    reality_changed: bool = False
    last_fired: int = -1
    recovery: list[RecoveryBranch] = field(default_factory=list)
    trace: list[TraceEntry] = field(default_factory=list)
    snapshot: Interpretation | None = None
    adaptations: int = 0
    adapt_counter: int = 0
    exog_index: int = 0
    released: frozenset[str] = frozenset()
    check_preconditions: bool = False
    interleaving: str = "rrobin"  # or "random"
    seed: int = 0
    resume_log: list[tuple[bool, bool]] = field(default_factory=list)  # (clean, psi == snapshot)

    def clone(self) -> "InstanceState":
        return replace(
            self,
            records=dict(self.records),
            tokens=dict(self.tokens),
            recovery=[replace(b) for b in self.recovery],
            trace=list(self.trace),
            resume_log=list(self.resume_log),
        )

    @property
    def physical(self) -> Interpretation:
        return self.realities.physical

    @property
    def expected(self) -> Interpretation:
        return self.realities.expected

    def busy(self) -> set[str]:
        return {r.service for r in self.records.values() if r.phase in IN_FLIGHT}

    def free_services(self) -> frozenset[str]:
        busy = self.busy()
        return frozenset(s for s in self.domain.services if s not in busy and s not in self.unavailable)

    def log(self, text: str) -> None:
        self.trace.append(TraceEntry(self.step_counter, text))

    def trace_text(self) -> str:
        return format_trace(self)


# ------------------------------------------------------------------ setup

def instantiate(
    domain: DomainTheory,
    process: ProcessGraph,
    init: Interpretation | Mapping,
    free: Mapping[str, bool] | None = None,
    *,
    check_preconditions: bool = False,
    interleaving: str = "rrobin",
    seed: int = 0,
) -> InstanceState:
    if not isinstance(init, Interpretation):
        init = Interpretation.closed_world(domain, init)
    missing = [instance_text(k) for k in domain.ground_instances() if k not in init]
    if missing:
        raise IncompleteInit(missing)
    unavailable = frozenset(s for s, f in (free or {}).items() if not f)
    tokens = {i: 1 for i in process.out_edges("start")}
    inst = InstanceState(
        domain=domain,
        graph=process,
        realities=RealityPair(init, init.relevant_part()),
        records={},
        tokens=tokens,
        unavailable=unavailable,
        check_preconditions=check_preconditions,
        interleaving=interleaving,
        seed=seed,
    )
    _propagate(inst)
    if _complete(inst):
        inst.mode = FINISHED
        inst.log("finish()")
    return inst


# ------------------------------------------------------------------ tokens

def _propagate(inst: InstanceState) -> None:
    """Fire gateways eagerly until nothing changes."""
    g = inst.graph
    changed = True
    while changed:
        changed = False
        for node in g.nodes.values():
            if node.kind not in ("ps", "pj", "xs", "xj"):
                continue
            ins = g.in_edges(node.id)
            outs = g.out_edges(node.id)
            if node.kind == "pj":
                if all(inst.tokens.get(e, 0) > 0 for e in ins):
                    for e in ins:
                        _take(inst, e)
                    _put(inst, outs[0])
                    changed = True
                continue
            for e in ins:
                while inst.tokens.get(e, 0) > 0:
                    _take(inst, e)
                    if node.kind == "ps":
                        for o in outs:
                            _put(inst, o)
                    elif node.kind == "xj":
                        _put(inst, outs[0])
                    else:
                        _put(inst, _choose_branch(inst, outs))
                    changed = True


def _choose_branch(inst: InstanceState, outs: list[int]) -> int:
    else_edge = None
    for e in outs:
        guard = inst.graph.guards.get(e)
        if guard is None:
            else_edge = e
        elif eval_formula(guard, inst.physical, {}):
            return e
    assert else_edge is not None
    return else_edge


def _take(inst: InstanceState, e: int) -> None:
    inst.tokens[e] -= 1
    if inst.tokens[e] == 0:
        del inst.tokens[e]


def _put(inst: InstanceState, e: int) -> None:
    inst.tokens[e] = inst.tokens.get(e, 0) + 1


def _complete(inst: InstanceState) -> bool:
    end_in = inst.graph.in_edges("end")
    return (
        all(inst.tokens.get(e, 0) > 0 for e in end_in)
        and sum(inst.tokens.values()) == len(end_in)
        and not inst.records
        and not inst.recovery
    )


# -------------------------------------------------------------- life-cycle

def _vec(vals) -> str:
    return "[" + ",".join(format_value(v) for v in vals) + "]"


@dataclass(frozen=True)
class _Candidate:
    wid: str
    ordinal: int
    action: Callable[[InstanceState, Scenario], None]


def _enabled(inst: InstanceState, wi: WorkItem, pinned: str | None, recovery: bool, ordinal: int) -> _Candidate | None:
    rec = inst.records.get(wi.id)
    if rec is None:
        svc = _pick_service(inst, wi, pinned)
        if svc is None:
            return None
        return _Candidate(wi.id, ordinal, lambda s, sc: _assign(s, wi, svc, recovery))
    if rec.phase == ASSIGNED:
        return _Candidate(wi.id, ordinal, lambda s, sc: _ready(s, wi.id))
    if rec.phase == RESERVED:
        return _Candidate(wi.id, ordinal, lambda s, sc: _start(s, wi.id))
    if rec.phase == STARTED:
        return _Candidate(wi.id, ordinal, lambda s, sc: _finished(s, wi.id, sc))
    if rec.phase == COMPLETED and not rec.acked:
        return _Candidate(wi.id, ordinal, lambda s, sc: _ack(s, wi.id))
    return _Candidate(wi.id, ordinal, lambda s, sc: _release(s, wi.id))


def _pick_service(inst: InstanceState, wi: WorkItem, pinned: str | None) -> str | None:
    free = inst.free_services()
    if pinned is not None:
        return pinned if pinned in free else None
    task = inst.domain.tasks[wi.task]
    for svc in sorted(free):
        if not capable(inst.domain, svc, wi.task):
            continue
        if inst.check_preconditions and not eval_formula(
            task.precondition, inst.physical, task_bindings(task, wi.inputs, svc)
        ):
            continue
        return svc
    return None


def _assign(inst: InstanceState, wi: WorkItem, svc: str, recovery: bool) -> None:
    inst.records[wi.id] = Record(wi, svc, ASSIGNED, recovery=recovery)
    inst.log(f"assign({svc},{wi.id},{wi.task},{_vec(wi.inputs)},{_vec(wi.expected)})")


def _ready(inst: InstanceState, wid: str) -> None:
    r = inst.records[wid]
    inst.records[wid] = replace(r, phase=RESERVED)
    inst.log(f"readyToStart({r.service},{wid},{r.workitem.task})")


def _start(inst: InstanceState, wid: str) -> None:
    r = inst.records[wid]
    inst.records[wid] = replace(r, phase=STARTED)
    inst.log(f"start({r.service},{wid},{r.workitem.task})")


def _finished(inst: InstanceState, wid: str, scenario: Scenario) -> None:
    r = inst.records[wid]
    outs = scenario.outcomes.get(wid, r.workitem.expected)
    if r.recovery and wid in scenario.outcomes and inst.recovery:
        inst.recovery[-1].clean = False
    inst.records[wid] = replace(r, phase=COMPLETED, outputs=tuple(outs))
    inst.log(f"finishedTask({r.service},{wid},{r.workitem.task},{_vec(outs)})")


def _ack(inst: InstanceState, wid: str) -> None:
    r = inst.records[wid]
    inst.records[wid] = replace(r, acked=True)
    inst.log(f"ackCompl({r.service},{wid},{r.workitem.task})")


def _release(inst: InstanceState, wid: str, raise_change: bool = True) -> None:
    r = inst.records.pop(wid)
    wi = r.workitem
    task = inst.domain.tasks[wi.task]
    outs = r.outputs if r.outputs is not None else wi.expected
    phi = apply_effects(inst.physical, task, wi.inputs, outs, True, r.service)
    psi = apply_expected(inst.expected, task, wi.inputs, wi.expected, r.service, inst.physical)
    inst.realities = RealityPair(phi, psi)
    inst.released = inst.released | {wid}
    inst.log(f"release({r.service},{wid},{wi.task},{_vec(wi.inputs)},{_vec(wi.expected)},{_vec(outs)})")
    if raise_change:
        inst.reality_changed = True
    if r.recovery:
        _advance_recovery(inst, wid)
    else:
        node_edges = inst.graph.in_edges(wid)
        _take(inst, node_edges[0])
        _put(inst, inst.graph.out_edges(wid)[0])
        _propagate(inst)


def _advance_recovery(inst: InstanceState, wid: str) -> None:
    for depth in range(len(inst.recovery) - 1, -1, -1):
        br = inst.recovery[depth]
        if br.cursor < len(br.items) and br.items[br.cursor].workitem.id == wid:
            br.cursor += 1
            if br.cursor == len(br.items) and depth == len(inst.recovery) - 1:
                _pop_finished(inst)
            return


def _pop_finished(inst: InstanceState) -> None:
    while inst.recovery and inst.recovery[-1].cursor >= len(inst.recovery[-1].items):
        br = inst.recovery.pop()
        inst.resume_log.append((br.clean, inst.expected == br.snapshot))


def _candidates(inst: InstanceState) -> list[_Candidate]:
    if inst.recovery:
        br = inst.recovery[-1]
        item = br.items[br.cursor]
        c = _enabled(inst, item.workitem, item.service, True, -1)
        return [c] if c is not None else []
    out = []
    g = inst.graph
    for ordinal, node in enumerate(g.task_nodes()):
        ins = g.in_edges(node.id)
        if node.id not in inst.records and not any(inst.tokens.get(e, 0) for e in ins):
            continue
        c = _enabled(inst, node.workitem, None, False, ordinal)  # type: ignore[arg-type]
        if c is not None:
            out.append(c)
    return out


# ------------------------------------------------------------------- step

def check_relevant(inst: InstanceState) -> bool:
    """Run the monitor: True (and mode Adapting) iff the realities diverge."""
    relevant = not same_state(inst.realities)
    inst.reality_changed = False
    inst.log(f"monitor({'true' if relevant else 'false'})")
    if relevant:
        inst.mode = ADAPTING
        inst.snapshot = inst.expected
    return relevant


def step(inst: InstanceState, scenario: Scenario) -> InstanceState:
    if inst.mode not in (RUNNING, WAITING):
        raise ValueError(f"cannot step an instance in mode {inst.mode}")
    s = inst.clone()
    s.step_counter += 1
    done_steps = s.step_counter - 1

    # (1) exogenous events that are due
    exo = scenario.exogenous
    due = []
    while s.exog_index < len(exo) and exo[s.exog_index].step <= done_steps:
        due.append(exo[s.exog_index])
        s.exog_index += 1
    if due:
        for d in due:
            ev = s.domain.events[d.name]
            s.realities = RealityPair(apply_exogenous(s.physical, ev, d.args), s.expected)
            s.log(f"exog({d.name},{_vec(d.args)})")
        for br in s.recovery:
            br.clean = False
        s.reality_changed = True
        s.mode = RUNNING
        return s

    # (2) the monitor
    if s.reality_changed:
        check_relevant(s)
        if s.mode != ADAPTING:
            s.mode = RUNNING
        return s

    # (3) one life-cycle action
    if _complete(s):
        s.mode = FINISHED
        s.log("finish()")
        return s
    cands = _candidates(s)
    if not cands:
        s.step_counter -= 1
        s.mode = WAITING
        return s
    if s.interleaving == "random":
        rng = random.Random(s.seed * 1_000_003 + s.step_counter)
        chosen = rng.choice(cands)
    else:
        after = [c for c in cands if c.ordinal > s.last_fired]
        chosen = after[0] if after else cands[0]
    if chosen.ordinal >= 0:
        s.last_fired = chosen.ordinal
    chosen.action(s, scenario)
    s.mode = RUNNING
    return s


# ------------------------------------------------------ adaptation support

def drain(inst: InstanceState, scenario: Scenario) -> None:
    """Complete and release every started task (in place).

    Tasks are atomic in this simulator, so work already started is allowed to
    finish before planning; its outcome is folded into both realities.
    Assigned and Reserved records stay frozen and keep their services busy.
    """
    order = [wid for wid, r in inst.records.items() if r.phase in (STARTED, COMPLETED)]
    for wid in order:
        r = inst.records[wid]
        if r.phase == STARTED:
            _finished(inst, wid, scenario)
            r = inst.records[wid]
        if not r.acked:
            _ack(inst, wid)
        _release(inst, wid, raise_change=False)


def splice_recovery(inst: InstanceState, recovery: list[tuple[str, str, tuple, tuple]]) -> InstanceState:
    """Push a sequential recovery branch; original branches wait for it."""
    if inst.mode != ADAPTING:
        raise ValueError("splice_recovery needs an adapting instance")
    s = inst.clone()
    items = []
    for task, svc, inputs, expected in recovery:
        s.adapt_counter += 1
        items.append(RecoveryItem(WorkItem(task, f"id_adapt_{s.adapt_counter}", tuple(inputs), tuple(expected)), svc))
    for br in s.recovery:
        br.clean = False
    snapshot = s.snapshot if s.snapshot is not None else s.expected
    phys = s.physical
    s.realities = RealityPair(phys, s.expected.updated({k: phys[k] for k in s.expected}))
    s.adaptations += 1
    s.log(f"adapt({len(items)})")
    if items:
        s.recovery.append(RecoveryBranch(tuple(items), snapshot))
    s.mode = RUNNING
    s.snapshot = None
    return s


class Adapter(Protocol):
    def adapt(self, inst: InstanceState, scenario: Scenario): ...


def run(
    inst: InstanceState,
    scenario: Scenario,
    adapter: Adapter | None = None,
    max_steps: int = 10_000,
) -> tuple[InstanceState, list[TraceEntry]]:
    s = inst
    while s.mode in (RUNNING, WAITING, ADAPTING) and s.step_counter < max_steps:
        if s.mode == ADAPTING:
            nxt = adapter.adapt(s, scenario) if adapter is not None else None
            if nxt is None or not isinstance(nxt, InstanceState):
                s = s.clone()
                s.step_counter += 1
                s.log("escalate()")
                s.mode = STUCK
                break
            s = nxt
            continue
        before = s.step_counter
        s = step(s, scenario)
        if s.mode == WAITING:
            if s.exog_index >= len(scenario.exogenous):
                s.mode = STUCK
                break
            # let time pass until the next exogenous event is due
            s.step_counter = max(s.step_counter, before) + 1
    return s, s.trace


# ------------------------------------------------------------------ traces

def format_trace(inst: InstanceState, footer: bool = True) -> str:
    lines = [f"{e.step} {e.text}" for e in inst.trace]
    if footer:
        lines.append(f"# mode {inst.mode}")
        lines.append(f"# adaptations {inst.adaptations}")
        lines.append(f"# same_state {'true' if same_state(inst.realities) else 'false'}")
        for k in inst.domain.relevant_instances():
            lines.append(f"# final {instance_text(k)} = {format_value(inst.physical[k])}")
    return "\n".join(lines) + "\n"


_LINE = re.compile(r"^(\d+)\s+(\w+)\((.*)\)$")


def _split_args(text: str) -> list:
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    if cur or out:
        out.append(cur)
    return [_parse_arg(a.strip()) for a in out]


def _parse_arg(a: str):
    if a.startswith("["):
        inner = a[1:-1]
        return [_atom(x.strip()) for x in inner.split(",") if x.strip()]
    return _atom(a)


def _atom(a: str):
    if a == "true":
        return True
    if a == "false":
        return False
    if re.fullmatch(r"-?\d+", a):
        return int(a)
    return a


def parse_trace(text: str) -> list[tuple[int, str, list]]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _LINE.match(line)
        if not m:
            raise ValueError(f"bad trace line {line!r}")
        out.append((int(m.group(1)), m.group(2), _split_args(m.group(3))))
    return out


def replay_trace(domain: DomainTheory, init: Interpretation, text: str) -> Interpretation:
    """Rebuild the final physical state from the release and exog lines of a trace."""
    phi = init
    for _, action, args in parse_trace(text):
        if action == "release":
            svc, _wid, task, inputs, _expected, outputs = args
            phi = apply_effects(phi, domain.tasks[task], tuple(inputs), tuple(outputs), True, svc)
        elif action == "exog":
            name, ev_args = args
            phi = apply_exogenous(phi, domain.events[name], tuple(ev_args))
    return phi
