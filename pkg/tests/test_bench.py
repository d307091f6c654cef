"""Synthetic scene generation, evaluation metrics, and the CLI surface."""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest
from click.testing import CliRunner

from vog.bench import (
    SyntheticSpec,
    evaluate,
    generate_scene,
    replay_trace,
    simulate,
    trace_from_dict,
)
from vog.cli import main
from vog.errors import MissingGroundTruth, PlacementFailure
from vog.geometry import classify_relation
from vog.scene import load_bundle, save_bundle
from vog.traversal import GroundingTrace


def tiny_spec(**overrides):
    base = SyntheticSpec(
        seed=7,
        objects=(("chair", 2), ("table", 1)),
        camera_count=5,
        points_per_object=128,
        image_size=(96, 72),
        focal=72.0,
    )
    return replace(base, **overrides)


# --- generation -----------------------------------------------------------------


def test_single_candidate_queries_hold_by_relation_check():
    bundle, queries = generate_scene(tiny_spec(objects=(("chair", 1), ("table", 1))))
    chair = bundle.object_by_id("chair_0")
    table = bundle.object_by_id("table_0")
    for text, gt in queries:
        assert gt == "chair_0" or gt == "table_0"
        if text == "the chair left of the table":
            assert classify_relation(table.bbox, chair.bbox).value == "left"


def test_generation_is_deterministic():
    a, qa = generate_scene(tiny_spec())
    b, qb = generate_scene(tiny_spec())
    assert qa == qb
    for oa, ob in zip(a.objects, b.objects):
        assert np.array_equal(oa.points, ob.points)
        assert np.array_equal(oa.bbox, ob.bbox)
    for va, vb in zip(a.views, b.views):
        assert np.array_equal(va.extrinsics, vb.extrinsics)
    assert a.images["view_0"].tobytes() == b.images["view_0"].tobytes()


def test_generated_queries_are_unique_by_exhaustive_check():
    for seed in range(20):
        bundle, queries = generate_scene(tiny_spec(seed=seed))
        by_class = {}
        for obj in bundle.objects:
            by_class.setdefault(obj.class_label, []).append(obj)
        for text, gt in queries:
            target_class = bundle.object_by_id(gt).class_label
            words = text.split()
            anchor_class = words[-1]
            phrase = " ".join(words[2:-2])
            from vog.bench import RELATION_PHRASES

            relation = next(r for r, p in RELATION_PHRASES.items() if p == phrase)
            satisfiers = [
                c.object_id
                for c in by_class[target_class]
                if any(
                    classify_relation(a.bbox, c.bbox) == relation
                    for a in by_class[anchor_class]
                )
            ]
            assert satisfiers == [gt]


def test_generated_bundle_survives_save_and_load(tmp_path):
    bundle, _ = generate_scene(tiny_spec())
    save_bundle(bundle, tmp_path / "bundle")
    loaded = load_bundle(tmp_path / "bundle")
    assert len(loaded.views) == 5
    assert len(loaded.objects) == 3


def test_impossible_spec_fails_placement():
    spec = tiny_spec(
        objects=(("sofa", 30),), spread_radius=0.4, max_placement_attempts=30
    )
    with pytest.raises(PlacementFailure):
        generate_scene(spec)


# --- evaluation ------------------------------------------------------------------


def fake_trace(query_id, final_id, bbox, count=2, calls=3, reason="selected"):
    return GroundingTrace(
        scene_id="s",
        query_id=query_id,
        query_text="q",
        parsed={"target": "chair", "anchors": []},
        seed=0,
        d_max=4,
        grid_size=3,
        start_view="v0",
        target_class_count=count,
        rounds=[],
        path=[],
        final_object_id=final_id,
        final_bbox=bbox,
        agent_call_count=calls,
        termination_reason=reason,
    )


GT_BOX = (0, 0, 0.5, 1, 1, 1)


def test_exact_prediction_hits_both_thresholds():
    trace = fake_trace("q0", "chair_0", GT_BOX)
    summary = evaluate([trace], {"q0": {"object_id": "chair_0", "bbox": list(GT_BOX)}})
    record = summary.records[0]
    assert record.iou == 1.0
    assert record.hit_at_25 and record.hit_at_50
    assert record.selected_correct


def test_agent_failure_counts_as_miss():
    trace = fake_trace("q0", None, None, reason="agent_failure")
    summary = evaluate([trace], {"q0": {"object_id": "chair_0", "bbox": list(GT_BOX)}})
    record = summary.records[0]
    assert record.iou == 0.0
    assert not record.hit_at_25 and not record.hit_at_50
    assert not record.selected_correct


def test_accuracy_arithmetic_70_50():
    traces = []
    ground_truth = {}
    for i in range(10):
        qid = f"q{i}"
        ground_truth[qid] = {"object_id": "chair_0", "bbox": list(GT_BOX)}
        if i < 5:
            bbox = GT_BOX  # iou 1.0: hits both
        elif i < 7:
            bbox = (0.25, 0, 0.5, 1, 1, 1)  # iou 0.6: hits 0.25 and 0.5
            assert 0.5 < 3 / 5
        else:
            bbox = (10, 0, 0.5, 1, 1, 1)  # disjoint: miss
        traces.append(fake_trace(qid, "chair_0" if i < 7 else "chair_1", bbox))
    summary = evaluate(traces, ground_truth)
    stats = summary.to_dict()["overall"]
    assert stats["acc_at_25"] == 70.0
    assert stats["acc_at_50"] == 70.0
    # push two mid cases below the 0.5 bar to split the thresholds
    traces[5] = fake_trace("q5", "chair_0", (0.5, 0, 0.5, 1, 1, 1))  # iou = 1/3
    traces[6] = fake_trace("q6", "chair_0", (0.5, 0, 0.5, 1, 1, 1))
    summary = evaluate(traces, ground_truth)
    stats = summary.to_dict()["overall"]
    assert stats["acc_at_25"] == 70.0
    assert stats["acc_at_50"] == 50.0


def test_unique_multiple_split_uses_target_class_count():
    traces = [
        fake_trace("q0", "chair_0", GT_BOX, count=1),
        fake_trace("q1", "chair_0", GT_BOX, count=3),
    ]
    gt = {qid: {"object_id": "chair_0", "bbox": list(GT_BOX)} for qid in ("q0", "q1")}
    stats = evaluate(traces, gt).to_dict()
    assert stats["unique"]["n"] == 1
    assert stats["multiple"]["n"] == 1


def test_missing_ground_truth_is_an_error():
    with pytest.raises(MissingGroundTruth):
        evaluate([fake_trace("q9", "chair_0", GT_BOX)], {})


def test_hit_implication_guard():
    with pytest.raises(ValueError):
        from vog.bench import EvalRecord

        EvalRecord(
            query_id="q",
            predicted_object_id="x",
            iou=0.6,
            hit_at_25=False,
            hit_at_50=True,
            subset="unique",
            agent_call_count=1,
            selected_correct=True,
            termination_reason="selected",
        )


# --- simulation and replay -----------------------------------------------------------


def test_simulation_traces_replay_identically():
    result = simulate(tiny_spec(), scene_count=3, workers=1)
    assert result.traces
    for trace in result.traces:
        if trace.termination_reason == "agent_failure":
            continue
        replayed = replay_trace(result.graphs[trace.scene_id], trace)
        assert replayed.final_object_id == trace.final_object_id
        assert replayed.to_dict() == trace.to_dict()


def test_trace_file_round_trip(tmp_path):
    result = simulate(tiny_spec(), scene_count=1, workers=1)
    trace = result.traces[0]
    path = tmp_path / "trace.json"
    trace.save(path)
    from vog.traversal import load_trace_dict

    restored = trace_from_dict(load_trace_dict(path))
    assert restored.to_dict() == trace.to_dict()


def test_workers_do_not_change_results():
    serial = simulate(tiny_spec(), scene_count=2, workers=1)
    threaded = simulate(tiny_spec(), scene_count=2, workers=4)
    by_id = {t.query_id: t for t in threaded.traces}
    for trace in serial.traces:
        assert by_id[trace.query_id].to_dict() == trace.to_dict()


# --- CLI --------------------------------------------------------------------------


def test_cli_help_shows_documented_defaults():
    runner = CliRunner()
    result = runner.invoke(main, ["build-graph", "--help"])
    assert result.exit_code == 0
    assert "0.5" in result.output  # radius default
    assert "16" in result.output  # view count default
    result = runner.invoke(main, ["ground", "--help"])
    assert result.exit_code == 0
    assert "4" in result.output  # d_max default
    assert "3" in result.output  # grid default


def test_cli_end_to_end_flow(tmp_path):
    runner = CliRunner()
    bundle, queries = generate_scene(tiny_spec())
    bundle_dir = tmp_path / "bundle"
    save_bundle(bundle, bundle_dir)

    result = runner.invoke(main, ["build-graph", str(bundle_dir)])
    assert result.exit_code == 0, result.output
    graph_path = bundle_dir / "graph.json"
    assert graph_path.exists()

    text, gt = queries[0]
    result = runner.invoke(
        main,
        [
            "ground",
            str(graph_path),
            "--query",
            text,
            "--agent",
            "oracle",
            "--gt-object",
            gt,
            "--out",
            str(tmp_path / "trace.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "selected" in result.output or "forced_global" in result.output

    result = runner.invoke(main, ["trace-report", str(tmp_path / "trace.json")])
    assert result.exit_code == 0, result.output
    assert "round 1" in result.output


def test_cli_simulate_and_eval(tmp_path):
    runner = CliRunner()
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(tiny_spec().to_dict()))
    out_dir = tmp_path / "sim"
    result = runner.invoke(
        main,
        ["simulate", "--spec", str(spec_path), "--scenes", "2", "--out", str(out_dir)],
    )
    assert result.exit_code == 0, result.output
    assert (out_dir / "gt.json").exists()

    result = runner.invoke(
        main,
        ["eval", "--traces", str(out_dir / "traces"), "--gt", str(out_dir / "gt.json")],
    )
    assert result.exit_code == 0, result.output
    assert "unique" in result.output
    assert "multiple" in result.output
    assert "overall" in result.output


def test_cli_scripted_agent(tmp_path):
    runner = CliRunner()
    bundle, queries = generate_scene(tiny_spec())
    bundle_dir = tmp_path / "bundle"
    save_bundle(bundle, bundle_dir)
    runner.invoke(main, ["build-graph", str(bundle_dir)])
    result = runner.invoke(
        main,
        [
            "ground",
            str(bundle_dir / "graph.json"),
            "--query",
            queries[0][0],
            "--agent",
            "scripted",
            "--script",
            "1,1,1,1,1",
        ],
    )
    assert result.exit_code == 0, result.output
