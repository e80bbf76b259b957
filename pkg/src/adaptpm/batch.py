"""Randomized effectiveness simulation over generated domains and processes.

Each instance is drawn from a seed that does not depend on the coverage or
failure percentage, so runs under different percentages are paired: a higher
coverage only adds capabilities, and a higher failure rate only adds failing
work items.
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass

from .dsl import Scenario, graph_from_branches
from .engine import FINISHED, InstanceState, instantiate, run
from .model import (
    BOOLEAN,
    BOOLEAN_TYPE,
    CAPABILITY,
    INTEGER,
    INTEGER_TYPE,
    PARTICIPANT,
    AtomicTerm,
    Cmp,
    Const,
    DataType,
    DomainTheory,
    Effect,
    TaskDef,
    TermRef,
    WorkItem,
    make_and,
)
from .recovery import PlanBased
from .state import Interpretation

N_FLUENTS = 50
MAX_PRE = 5
MAX_EFFECTS = 5
NOMINAL_BIAS = 0.95
DEFAULT_FLOWS = (5, 8, 10, 12, 14, 15, 18, 20, 22, 25)
SHAPES = {"seq": 1, "par3": 3, "par5": 5}
WRONG_OUTCOMES = ("uniform", "flip")
CSV_HEADER = ["repo_size", "shape", "failure_pct", "coverage_pct", "flow_size", "runs", "successes", "effectiveness"]


@dataclass(frozen=True)
class RepoTask:
    name: str
    pre: tuple[tuple[int, bool], ...]
    effects: tuple[tuple[int, bool], ...]


@dataclass(frozen=True)
class SimInstance:
    """Everything random about one run except the two percentages."""

    repo: tuple[RepoTask, ...]
    services: tuple[str, ...]
    permutations: tuple[tuple[int, ...], ...]  # per service, task indices in coverage order
    flow: tuple[tuple[int, ...], ...]  # branches of repository task indices
    init: tuple[bool, ...]
    failure_rank: tuple[int, ...]  # flow positions, most likely to fail first
    wrong: tuple[tuple[bool, ...], ...]  # wrong outcome per flow position


def _rng(seed: int, *parts) -> random.Random:
    return random.Random(":".join(map(str, (seed, *parts))))


def generate_instance(
    repo_size: int,
    n_services: int,
    shape: str,
    flow_size: int,
    seed: int,
    bias: float = NOMINAL_BIAS,
    wrong_outcome: str = "uniform",
) -> SimInstance:
    """Draw one instance.

    ``wrong_outcome`` is ``uniform`` (any outcome vector other than the expected
    one) or ``flip`` (exactly one outcome negated).
    """
    if wrong_outcome not in WRONG_OUTCOMES:
        raise ValueError(f"unknown wrong-outcome distribution {wrong_outcome!r}")
    branches = SHAPES[shape]
    if flow_size < branches:
        raise ValueError(f"a {shape} flow needs at least {branches} tasks")
    rng = _rng(seed, "instance", repo_size, n_services, shape, flow_size)
    # literals lean towards a per-fluent nominal value, which is also the initial state
    nominal = tuple(rng.random() < 0.5 for _ in range(N_FLUENTS))

    def literal(v: int) -> tuple[int, bool]:
        return (v, nominal[v] if rng.random() < bias else not nominal[v])

    repo = []
    for i in range(repo_size):
        pre_vars = rng.sample(range(N_FLUENTS), rng.randint(0, MAX_PRE))
        eff_vars = rng.sample(range(N_FLUENTS), rng.randint(1, MAX_EFFECTS))
        repo.append(
            RepoTask(f"t{i}", tuple(literal(v) for v in sorted(pre_vars)), tuple(literal(v) for v in sorted(eff_vars)))
        )
    services = tuple(f"s{i}" for i in range(n_services))
    perms = []
    for _ in services:
        p = list(range(repo_size))
        rng.shuffle(p)
        perms.append(tuple(p))
    # flow tasks come from the smallest coverage level, so every task has a capable service
    low = sorted({t for p in perms for t in p[: _covered(repo_size, 30)]})
    picks = [rng.choice(low) for _ in range(flow_size)]
    flow = [[] for _ in range(branches)]
    for k, t in enumerate(picks):
        flow[k % branches].append(t)
    rank = list(range(flow_size))
    rng.shuffle(rank)
    wrong = []
    for t in (t for b in flow for t in b):
        expected = tuple(v for _, v in repo[t].effects)
        if wrong_outcome == "flip":
            k = 1 << rng.randrange(len(expected))
        else:  # uniform over the outcome vectors that differ from the expected one
            k = rng.randrange(1, 2 ** len(expected))
        wrong.append(tuple(v != bool(k >> j & 1) for j, v in enumerate(expected)))
    return SimInstance(tuple(repo), services, tuple(perms), tuple(tuple(b) for b in flow), nominal, tuple(rank), tuple(wrong))


def _covered(repo_size: int, pct: int) -> int:
    return max(1, math.ceil(repo_size * pct / 100))


def build_domain(inst: SimInstance, coverage_pct: int) -> DomainTheory:
    n = len(inst.repo)
    caps = tuple(f"cap_{t.name}" for t in inst.repo)
    k = _covered(n, coverage_pct)
    provides = frozenset((s, caps[t]) for s, p in zip(inst.services, inst.permutations) for t in p[:k])
    terms = {f"f{i}": AtomicTerm(f"f{i}", (), BOOLEAN, True) for i in range(N_FLUENTS)}
    tasks = {}
    for t in inst.repo:
        pre = make_and([Cmp(TermRef(f"f{v}", ()), "==", Const(b)) for v, b in t.pre])
        effs = tuple(Effect(TermRef(f"f{v}", ()), "=", Const(b), "supposed") for v, b in t.effects)
        tasks[t.name] = TaskDef(t.name, (), pre, effs)
    datatypes = {
        BOOLEAN: BOOLEAN_TYPE,
        INTEGER: INTEGER_TYPE,
        PARTICIPANT: DataType(PARTICIPANT, "enumerated", constants=inst.services),
        CAPABILITY: DataType(CAPABILITY, "enumerated", constants=caps),
    }
    return DomainTheory(
        name="Sim",
        datatypes=datatypes,
        services=inst.services,
        capabilities=caps,
        provides=provides,
        requires=frozenset((t.name, caps[i]) for i, t in enumerate(inst.repo)),
        terms=terms,
        complex_terms={},
        tasks=tasks,
        events={},
    )


def simulate_instance(
    inst: SimInstance,
    coverage_pct: int,
    failure_pct: int,
    budget: int = 5_000,
    interleaving: str = "rrobin",
    seed: int = 0,
) -> InstanceState:
    """Run one generated instance with the plan-based adapter and return its final state."""
    domain = build_domain(inst, coverage_pct)
    items: list[list[WorkItem]] = []
    k = 0
    for branch in inst.flow:
        row = []
        for t in branch:
            k += 1
            task = inst.repo[t]
            row.append(WorkItem(task.name, f"id_{k}", (), tuple(v for _, v in task.effects)))
        items.append(row)
    graph = graph_from_branches(items)
    flat = [w for row in items for w in row]
    n_fail = math.ceil(len(flat) * failure_pct / 100)
    outcomes = {flat[pos].id: inst.wrong[pos] for pos in inst.failure_rank[:n_fail]}
    init = Interpretation(domain, {(f"f{i}",): v for i, v in enumerate(inst.init)})
    state = instantiate(domain, graph, init, interleaving=interleaving, seed=seed)
    final, _ = run(state, Scenario(outcomes=outcomes), PlanBased("greedy", budget=budget), max_steps=20_000)
    return final


def run_instance(inst: SimInstance, coverage_pct: int, failure_pct: int, budget: int = 5_000) -> bool:
    """True iff the instance finishes without designer intervention."""
    return simulate_instance(inst, coverage_pct, failure_pct, budget).mode == FINISHED


@dataclass(frozen=True)
class BatchConfig:
    repo_size: int = 25
    services: int = 5
    failure_pct: int = 30
    coverage_pct: int = 70
    flows: tuple[int, ...] = DEFAULT_FLOWS
    shape: str = "seq"
    seed: int = 0
    runs: int = 100
    budget: int = 5_000
    bias: float = NOMINAL_BIAS
    wrong_outcome: str = "uniform"


def batch_sim(cfg: BatchConfig) -> list[dict]:
    """One row per flow size plus an aggregate row (flow_size ``all``)."""
    per_size: dict[int, list[bool]] = {n: [] for n in cfg.flows}
    for i in range(cfg.runs):
        size = cfg.flows[i % len(cfg.flows)]
        inst = generate_instance(
            cfg.repo_size, cfg.services, cfg.shape, size, cfg.seed * 100_003 + i, cfg.bias, cfg.wrong_outcome
        )
        per_size[size].append(run_instance(inst, cfg.coverage_pct, cfg.failure_pct, cfg.budget))
    rows = []
    total = []
    for size in cfg.flows:
        res = per_size[size]
        total.extend(res)
        if res:
            rows.append(_row(cfg, size, res))
    rows.append(_row(cfg, "all", total))
    return rows


def _row(cfg: BatchConfig, size, res: list[bool]) -> dict:
    return {
        "repo_size": cfg.repo_size,
        "shape": cfg.shape,
        "failure_pct": cfg.failure_pct,
        "coverage_pct": cfg.coverage_pct,
        "flow_size": size,
        "runs": len(res),
        "successes": sum(res),
        "effectiveness": f"{(sum(res) / len(res)) if res else 1.0:.4f}",
    }


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
