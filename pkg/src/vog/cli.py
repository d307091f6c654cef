"""Command-line entry points: build-graph, ground, simulate, eval, trace-report."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .agents import OracleAgent, RemoteAgent, ScriptedAgent
from .bench import SyntheticSpec, evaluate, simulate, trace_from_dict
from .errors import VogError
from .graph import BuildParams, build_graph, load_graph, save_graph
from .scene import load_bundle
from .traversal import RunConfig, load_trace_dict, run_grounding


@click.group()
def main():
    """View-on-graph grounding: build layered scene graphs and ground queries."""


@main.command("build-graph")
@click.argument("bundle_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--r", "radius", default=0.5, show_default=True, help="Object-object connection radius (m).")
@click.option("--tau-low", default=0.2, show_default=True, help="Set-IoU below this: complementary view pair.")
@click.option("--tau-high", default=0.8, show_default=True, help="Set-IoU at or above this: no view-view edge.")
@click.option("--views", default=16, show_default=True, help="Representative views kept after clustering.")
@click.option("--seed", default=0, show_default=True, help="Clustering seed.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output path (default: <bundle>/graph.json).")
def build_graph_cmd(bundle_dir, radius, tau_low, tau_high, views, seed, out):
    """Build the layered scene graph for a scene bundle."""
    try:
        bundle = load_bundle(bundle_dir)
        params = BuildParams(
            radius_r=radius, tau_low=tau_low, tau_high=tau_high,
            view_count_m=views, kmeans_seed=seed,
        )
        graph = build_graph(bundle, params)
        out_path = Path(out) if out else Path(bundle_dir) / "graph.json"
        save_graph(graph, out_path)
    except VogError as exc:
        raise click.ClickException(str(exc))
    click.echo(
        f"{out_path}: {len(graph.views)} views, {len(graph.objects)} objects, "
        f"{len(graph.edges_oo)} oo / {len(graph.edges_vo)} vo / {len(graph.edges_vv)} vv edges"
    )


def _make_agent(kind, graph, script, gt_object):
    if kind == "scripted":
        if not script:
            raise click.ClickException("--agent scripted requires --script \"1,2,...\"")
        return ScriptedAgent([int(x) for x in script.split(",") if x.strip()])
    if kind == "oracle":
        if not gt_object:
            raise click.ClickException("--agent oracle requires --gt-object")
        return OracleAgent(gt_object, graph)
    return RemoteAgent.from_env()


@main.command("ground")
@click.argument("graph_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--query", required=True, help="Natural-language query to ground.")
@click.option("--agent", "agent_kind", type=click.Choice(["scripted", "oracle", "remote"]), default="remote", show_default=True)
@click.option("--dmax", default=4, show_default=True, help="Maximum reasoning rounds.")
@click.option("--seed", default=0, show_default=True, help="Start-view seed.")
@click.option("--grid", default=3, show_default=True, help="Grid side length S.")
@click.option("--script", default=None, help="Comma-separated action script (scripted agent).")
@click.option("--gt-object", default=None, help="Ground-truth object id (oracle agent).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Trace output path.")
@click.option("--render-grids", is_flag=True, help="Render grid PNGs even for non-visual agents.")
@click.option("--prompt-dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Directory with system.txt / user.txt / relations.txt template overrides.")
def ground_cmd(graph_path, query, agent_kind, dmax, seed, grid, script, gt_object, out,
               render_grids, prompt_dir):
    """Ground one query against a built graph."""
    from .agents import PromptTemplates

    try:
        graph = load_graph(graph_path)
        agent = _make_agent(agent_kind, graph, script, gt_object)
        config = RunConfig(
            d_max=dmax,
            seed=seed,
            grid_size=grid,
            render_grids=True if render_grids else None,
            grid_dir=Path(out).parent / "grids" if out and render_grids else None,
            prompt_templates=PromptTemplates.from_dir(prompt_dir) if prompt_dir else None,
        )
        trace = run_grounding(graph, query, agent, config)
    except VogError as exc:
        raise click.ClickException(str(exc))
    if out:
        trace.save(out)
        click.echo(f"trace written to {out}")
    click.echo(
        f"{trace.termination_reason}: {trace.final_object_id or 'NONE'} "
        f"({trace.agent_call_count} agent calls, {len(trace.rounds)} rounds)"
    )
    if trace.termination_reason == "agent_failure":
        sys.exit(1)


@main.command("simulate")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True, help="SyntheticSpec JSON file.")
@click.option("--agent", "agent_kind", type=click.Choice(["oracle"]), default="oracle", show_default=True)
@click.option("--scenes", default=10, show_default=True, help="Number of scenes to generate.")
@click.option("--dmax", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True, help="Base run seed.")
@click.option("--workers", default=4, show_default=True, help="Concurrent query workers.")
@click.option("--out", type=click.Path(file_okay=False), default="sim_out", show_default=True)
def simulate_cmd(spec_path, agent_kind, scenes, dmax, seed, workers, out):
    """Generate synthetic scenes and ground every query with the oracle agent."""
    try:
        spec = SyntheticSpec.from_dict(json.loads(Path(spec_path).read_text()))
        result = simulate(spec, scene_count=scenes, d_max=dmax, base_seed=seed, workers=workers)
        out_dir = Path(out)
        for trace in result.traces:
            trace.save(out_dir / "traces" / trace.scene_id / f"{trace.query_id}.json")
        (out_dir / "gt.json").write_text(json.dumps(result.ground_truth, indent=2) + "\n")
        summary = evaluate(result.traces, result.ground_truth)
    except VogError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"{len(result.traces)} traces -> {out_dir / 'traces'}")
    click.echo(summary.table())


@main.command("eval")
@click.option("--traces", "traces_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--json-out", type=click.Path(dir_okay=False), default=None, help="Also write the summary as JSON.")
def eval_cmd(traces_dir, gt_path, json_out):
    """Score a directory of traces against a ground-truth file."""
    try:
        ground_truth = json.loads(Path(gt_path).read_text())
        traces = [
            trace_from_dict(load_trace_dict(p))
            for p in sorted(Path(traces_dir).rglob("*.json"))
        ]
        summary = evaluate(traces, ground_truth)
    except VogError as exc:
        raise click.ClickException(str(exc))
    click.echo(summary.table())
    if json_out:
        Path(json_out).write_text(json.dumps(summary.to_dict(), indent=2) + "\n")


@main.command("trace-report")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
def trace_report_cmd(trace_path):
    """Human-readable round-by-round dump of a trace."""
    try:
        payload = load_trace_dict(trace_path)
    except VogError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"scene {payload['scene_id']}  query {payload['query_id']}")
    click.echo(f"query text: {payload['query']}")
    click.echo(f"parsed: target={payload['parsed']['target']} anchors={payload['parsed']['anchors']}")
    click.echo(f"start view: {payload['start_view']}  seed {payload['seed']}  d_max {payload['d_max']}")
    for r in payload["rounds"]:
        tag = "forced-global" if r["forced_global"] else f"round {r['round_index']}"
        click.echo(f"\n== {tag} ==")
        for action in r["menu"]["actions"]:
            if action["kind"] == "switch_view":
                line = f"  [{action['index']}] switch -> frame {action['frame_index']} ({action['edge_kind']})"
            else:
                bbox = ", ".join(f"{x:.2f}" for x in action["bbox"])
                line = f"  [{action['index']}] select {action['object_id']} ({bbox})"
            if action["index"] == r["action"]:
                line += "   <= chosen"
            click.echo(line)
        for fact in r["menu"]["relation_facts"]:
            click.echo(f"  fact: {fact}")
        click.echo(f"  reply: {r['replies'][-1] if r['replies'] else '(none)'}")
        click.echo(f"  pool: {', '.join(r['pool_after']) or '(empty)'}")
    click.echo(
        f"\nresult: {payload['termination_reason']} -> {payload['final_object_id'] or 'NONE'} "
        f"({payload['agent_call_count']} agent calls)"
    )


if __name__ == "__main__":
    main()
