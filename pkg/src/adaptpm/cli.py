"""Command-line entry point.

Exit codes: 0 success (process finished), 2 stuck or no plan found,
1 malformed input or usage error.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import click

from . import __version__
from .batch import CSV_HEADER, DEFAULT_FLOWS, NOMINAL_BIAS, SHAPES, WRONG_OUTCOMES, BatchConfig, batch_sim, to_csv
from .dsl import InitSpec, Scenario, parse_domain, parse_init, parse_process, parse_scenario, render_dot, write_process
from .engine import ADAPTING, FINISHED, RUNNING, WAITING, drain, format_trace, instantiate, replay_trace, run, step
from .errors import ArtifactError, UnsupportedFeature
from .model import format_value
from .pddl import export_domain, export_problem
from .planner import NoPlan
from .recovery import BuiltIn, PlanBased, build_problem, deviation_report
from .state import Interpretation, RealityPair, instance_text, same_state
from .syntax import parse_formula
from .templates import Library, fact_text, synthesize

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_STUCK = 2


class Stuck(Exception):
    """Raised inside a command to leave with exit code 2."""


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise click.UsageError(f"cannot read {path}: {e.strerror}") from e


def _load_domain(path: str):
    return parse_domain(_read(path), path)


def _load_init(path: str, domain) -> InitSpec:
    return parse_init(_read(path), domain, path)


@click.group()
@click.version_option(__version__, prog_name="adaptpm")
def cli() -> None:
    """Adaptive process management toolkit."""


@cli.command()
@click.argument("domain_file")
@click.argument("process_file", required=False)
@click.option("--init", "init_file", help="Also check a starting condition.")
def validate(domain_file: str, process_file: str | None, init_file: str | None) -> None:
    """Parse and cross-check a domain, and optionally a process and an init."""
    domain = _load_domain(domain_file)
    click.echo(
        f"domain {domain.name}: {len(domain.tasks)} tasks, {len(domain.events)} events, "
        f"{len(domain.terms)} atomic terms, {len(domain.complex_terms)} complex terms"
    )
    if process_file:
        g = parse_process(_read(process_file), domain, process_file)
        click.echo(f"process: {len(g.workitems())} work items")
    if init_file:
        spec = _load_init(init_file, domain)
        Interpretation.closed_world(domain, spec.values)
        click.echo(f"init: {len(spec.values)} assignments")
    click.echo("OK")


def _adapter(kind: str, planner: str, bound: int, budget: int):
    if kind == "none":
        return None
    if kind == "builtin":
        return BuiltIn(bound=bound)
    return PlanBased(mode=planner, bound=bound, budget=budget)


@cli.command("run")
@click.argument("domain_file")
@click.argument("process_file")
@click.argument("init_file")
@click.argument("scenario_file", required=False)
@click.option("--adapter", type=click.Choice(["plan", "builtin", "none"]), default="plan", show_default=True)
@click.option("--planner", type=click.Choice(["iddfs", "greedy"]), default="iddfs", show_default=True)
@click.option("--bound", type=int, default=10, show_default=True, help="Maximum recovery plan length.")
@click.option("--budget", type=int, default=200_000, show_default=True, help="Node budget of the greedy planner.")
@click.option("--seed", type=int, default=None, help="Seed for random interleaving (overrides the scenario).")
@click.option("--interleaving", type=click.Choice(["rrobin", "random"]), default="rrobin", show_default=True)
@click.option("--check-preconditions", is_flag=True, help="Block work items whose preconditions do not hold.")
@click.option("--trace-out", type=click.Path(dir_okay=False), help="Write the trace here instead of stdout.")
@click.option("--dot-out", type=click.Path(dir_okay=False), help="Write the process graph as DOT.")
@click.option("--max-steps", type=int, default=10_000, show_default=True)
def run_cmd(
    domain_file, process_file, init_file, scenario_file, adapter, planner, bound, budget,
    seed, interleaving, check_preconditions, trace_out, dot_out, max_steps,
) -> None:
    """Execute a process instance under a scenario."""
    domain = _load_domain(domain_file)
    graph = parse_process(_read(process_file), domain, process_file)
    spec = _load_init(init_file, domain)
    scenario = parse_scenario(_read(scenario_file), graph, domain, scenario_file) if scenario_file else Scenario()
    if seed is None:
        seed = scenario.seed if scenario.seed is not None else 0
    inst = instantiate(
        domain, graph, spec.values, spec.free,
        check_preconditions=check_preconditions, interleaving=interleaving, seed=seed,
    )
    if dot_out:
        Path(dot_out).write_text(render_dot(graph))
    t0 = time.perf_counter()
    final, _ = run(inst, scenario, _adapter(adapter, planner, bound, budget), max_steps=max_steps)
    text = format_trace(final)
    if trace_out:
        Path(trace_out).write_text(text)
        click.echo(f"mode {final.mode}, {final.adaptations} adaptation(s), {time.perf_counter() - t0:.2f}s")
    else:
        click.echo(text, nl=False)
    if final.mode != FINISHED:
        raise Stuck(f"instance {final.mode}: control passes back to the process designer")


def _parse_snapshot(text: str, domain, file: str) -> tuple[RealityPair, list[str]]:
    """Two init-format sections, ``[physical]`` then ``[expected]``."""
    sections: dict[str, list[str]] = {"physical": [], "expected": []}
    current = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line in ("[physical]", "[expected]"):
            current = line[1:-1]
        elif line:
            if current is None:
                raise click.UsageError(f"{file}: expected a [physical] or [expected] header before {line!r}")
            sections[current].append(line)
    phys = parse_init("\n".join(sections["physical"]), domain, file)
    exp = parse_init("\n".join(sections["expected"]), domain, file)
    physical = Interpretation.closed_world(domain, phys.values)
    relevant = domain.relevant_instances()
    expected = physical.relevant_part().updated({k: v for k, v in exp.values.items() if k in relevant})
    free = [s for s in domain.services if phys.free.get(s, True)]
    return RealityPair(physical, expected), free


def _first_deviation(domain, graph, spec: InitSpec, scenario: Scenario, max_steps: int = 10_000):
    inst = instantiate(domain, graph, spec.values, spec.free)
    while inst.mode in (RUNNING, WAITING) and inst.step_counter < max_steps:
        before = inst.step_counter
        inst = step(inst, scenario)
        if inst.mode == WAITING:
            if inst.exog_index >= len(scenario.exogenous):
                break
            inst.step_counter = max(inst.step_counter, before) + 1
            inst.mode = RUNNING
    if inst.mode != ADAPTING:
        return None
    s = inst.clone()
    drain(s, scenario)
    return s


@cli.command("export-pddl")
@click.argument("domain_file")
@click.option("--snapshot", "snapshot_file", help="Reality pair file with [physical] and [expected] sections.")
@click.option("--process", "process_file", help="Run this process up to its first deviation and export that problem.")
@click.option("--init", "init_file", help="Starting condition used with --process.")
@click.option("--scenario", "scenario_file", help="Scenario used with --process.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--problem-name", default="EM1", show_default=True)
def export_pddl(domain_file, snapshot_file, process_file, init_file, scenario_file, out_dir, problem_name) -> None:
    """Write domain.pddl, and problem.pddl when a deviated state is given."""
    domain = _load_domain(domain_file)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "domain.pddl").write_text(export_domain(domain))
    click.echo(f"wrote {out / 'domain.pddl'}")
    pair = free = None
    if snapshot_file:
        pair, free = _parse_snapshot(_read(snapshot_file), domain, snapshot_file)
    elif process_file:
        if not init_file:
            raise click.UsageError("--process needs --init")
        graph = parse_process(_read(process_file), domain, process_file)
        spec = _load_init(init_file, domain)
        scenario = parse_scenario(_read(scenario_file), graph, domain, scenario_file) if scenario_file else Scenario()
        s = _first_deviation(domain, graph, spec, scenario)
        if s is None:
            raise click.UsageError("the run never deviates, so there is no adaptation problem to export")
        pair, free = s.realities, s.free_services()
        report = deviation_report(s)
        for k, p, e in report.failing:
            click.echo(f"deviation {instance_text(k)}: physical {format_value(p)}, expected {format_value(e)}")
    if pair is None:
        return
    if same_state(pair):
        raise click.UsageError("the snapshot is not deviated: physical and expected realities agree")
    problem = build_problem(pair, domain, free)
    (out / "problem.pddl").write_text(export_problem(problem, domain, problem_name))
    click.echo(f"wrote {out / 'problem.pddl'}")


@cli.command("synth-template")
@click.argument("domain_file")
@click.argument("init_file")
@click.argument("goal_file")
@click.option("--lib", "lib_dir", type=click.Path(file_okay=False), help="Template library directory.")
@click.option("--out-dir", type=click.Path(file_okay=False), help="Write template.proc/template.dot here.")
@click.option("--budget", type=int, default=200_000, show_default=True, help="Partial-order planner node budget.")
def synth_template(domain_file, init_file, goal_file, lib_dir, out_dir, budget) -> None:
    """Synthesize (or retrieve) a concurrent process template for a goal."""
    domain = _load_domain(domain_file)
    spec = _load_init(init_file, domain)
    goal = parse_formula(_read(goal_file), domain)
    library = Library(lib_dir) if lib_dir else None
    res = synthesize(domain, spec.values, goal, library, budget)
    if isinstance(res, NoPlan):
        raise Stuck(
            f"no template: {res.reason}; refine the starting condition by adding information "
            "about further actors, their positions or capabilities"
        )
    pt = res.template
    click.echo("source: library" if res.from_library else "source: planner")
    try:
        proc = write_process(pt.graph)
    except UnsupportedFeature:  # not block structured
        proc = None
    click.echo(proc if proc is not None else render_dot(pt.graph, "template"), nl=False)
    if pt.services:
        click.echo("services:")
        for nid in sorted(pt.services):
            click.echo(f"  {nid} {pt.services[nid]}")
    click.echo("wp:")
    for f in sorted(pt.wp, key=repr):
        click.echo(f"  {fact_text(domain, f)}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "template.dot").write_text(render_dot(pt.graph, "template"))
        if proc is not None:
            (out / "template.proc").write_text(proc)


def _int_list(ctx, param, value: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in value.split(",") if x.strip())
    except ValueError as e:
        raise click.BadParameter("expected a comma-separated list of integers") from e


@cli.command("batch-sim")
@click.option("--repo-size", type=int, default=25, show_default=True)
@click.option("--services", type=int, default=5, show_default=True)
@click.option("--failure-pct", type=click.IntRange(0, 100), default=30, show_default=True)
@click.option("--coverage-pct", type=click.IntRange(1, 100), default=70, show_default=True)
@click.option("--flows", default=",".join(map(str, DEFAULT_FLOWS)), callback=_int_list, show_default=True)
@click.option("--shape", type=click.Choice(sorted(SHAPES)), default="seq", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--runs", type=int, default=100, show_default=True)
@click.option("--budget", type=int, default=5_000, show_default=True, help="Greedy planner node budget per adaptation.")
@click.option(
    "--wrong-outcome",
    type=click.Choice(WRONG_OUTCOMES),
    default="uniform",
    show_default=True,
    help="How a failing work item's outcome is drawn: any other vector, or one flipped outcome.",
)
@click.option(
    "--nominal-bias",
    type=click.FloatRange(0.5, 1.0),
    default=NOMINAL_BIAS,
    show_default=True,
    help="Probability that a generated literal takes its fluent's nominal value.",
)
@click.option("--out", "out_file", type=click.Path(dir_okay=False), help="Write the CSV report here instead of stdout.")
def batch_sim_cmd(
    repo_size, services, failure_pct, coverage_pct, flows, shape, seed, runs, budget, wrong_outcome, nominal_bias, out_file
) -> None:
    """Estimate adaptation effectiveness on random domains and processes."""
    if not flows or min(flows) < SHAPES[shape]:
        raise click.BadParameter(f"flow sizes must be at least {SHAPES[shape]} for shape {shape}", param_hint="--flows")
    cfg = BatchConfig(
        repo_size, services, failure_pct, coverage_pct, flows, shape, seed, runs, budget, nominal_bias, wrong_outcome
    )
    text = to_csv(batch_sim(cfg))
    assert text.startswith(",".join(CSV_HEADER))
    if out_file:
        Path(out_file).write_text(text)
        total = text.strip().splitlines()[-1].split(",")
        click.echo(f"effectiveness {total[-1]} over {total[-3]} runs")
    else:
        click.echo(text, nl=False)


@cli.command()
@click.argument("domain_file")
@click.argument("init_file")
@click.argument("trace_file")
def replay(domain_file, init_file, trace_file) -> None:
    """Recompute the final physical state of a trace and compare it with its footer."""
    domain = _load_domain(domain_file)
    spec = _load_init(init_file, domain)
    text = _read(trace_file)
    phi = replay_trace(domain, Interpretation.closed_world(domain, spec.values), text)
    mismatches = 0
    for line in text.splitlines():
        if line.startswith("# final "):
            name, _, value = line[len("# final "):].partition(" = ")
            got = next((format_value(phi[k]) for k in phi if instance_text(k) == name), None)
            if got != value:
                mismatches += 1
                click.echo(f"mismatch {name}: trace {value}, replay {got}")
    if mismatches:
        raise Stuck(f"{mismatches} final value(s) differ")
    click.echo("replay OK")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="adaptpm", standalone_mode=False)
    except Stuck as e:
        click.echo(f"stuck: {e}", err=True)
        return EXIT_STUCK
    except (ArtifactError, click.ClickException) as e:
        msg = e.format_message() if isinstance(e, click.ClickException) else str(e)
        click.echo(f"error: {type(e).__name__}: {msg}", err=True)
        return EXIT_BAD_INPUT
    except click.exceptions.Abort:
        return EXIT_BAD_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
