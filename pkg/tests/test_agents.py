"""Prompt rendering, action parsing, and the scripted/oracle agent policies."""

from __future__ import annotations

import json

import numpy as np
import pytest

from vog.agents import (
    AgentRequest,
    OracleAgent,
    ScriptedAgent,
    parse_action,
    render_prompt,
    reply_from_text,
)
from vog.errors import MalformedReply, OutOfRange, ScriptExhausted
from vog.graph import build_graph
from vog.menu import ActionKind, CandidateMenu, MenuAction

from .conftest import box, in_memory_bundle, make_object, make_view


def switch(index, view_id="v_1", frame=1, kind="adjacent"):
    return MenuAction(
        index=index,
        kind=ActionKind.SWITCH_VIEW,
        view_id=view_id,
        frame_index=frame,
        edge_kind=kind,
    )


def select(index, object_id="chair_5", bbox=(0.38, 0.50, 0.41, 3.96, 2.62, 0.67)):
    return MenuAction(
        index=index, kind=ActionKind.SELECT_OBJECT, object_id=object_id, bbox=bbox
    )


def sample_menu():
    return CandidateMenu(
        actions=[switch(1, "v_1", 7), switch(2, "v_2", 12, "complementary"), select(3)],
        relation_facts=["chair_5-left-chair_0", "chair_4-front-chair_0"],
    )


# --- prompt rendering -------------------------------------------------------------


def test_prompt_carries_box_metadata_verbatim():
    _, user = render_prompt(sample_menu(), "the black chair", 1, 4)
    assert "(0.38, 0.50, 0.41, 3.96, 2.62, 0.67)" in user


def test_prompt_carries_relation_facts():
    _, user = render_prompt(sample_menu(), "the black chair", 1, 4)
    assert "chair_5-left-chair_0" in user
    assert "chair_4-front-chair_0" in user


def test_relations_section_omitted_when_empty():
    menu = CandidateMenu(actions=[switch(1), select(2)])
    _, user = render_prompt(menu, "the black chair", 1, 4)
    assert "Spatial relations" not in user


def test_action_lines_use_triple_bracket_indices():
    _, user = render_prompt(sample_menu(), "q", 2, 4)
    assert "[[[1]]] Switch to frame 7 (adjacent view)" in user
    assert "[[[2]]] Switch to frame 12 (complementary view)" in user
    assert "[[[3]]] Select object chair_5" in user


def test_prompt_names_round_and_limit():
    system, user = render_prompt(sample_menu(), "q", 2, 4)
    assert "at most 4 reasoning rounds" in system
    assert "Round 2 of 4" in user


def test_rendering_is_deterministic():
    menu = sample_menu()
    assert render_prompt(menu, "q", 1, 4) == render_prompt(menu, "q", 1, 4)


def test_prompt_templates_can_be_overridden(tmp_path):
    from vog.agents import PromptTemplates

    (tmp_path / "system.txt").write_text("custom role, limit {d_max}")
    templates = PromptTemplates.from_dir(tmp_path)
    system, user = render_prompt(sample_menu(), "q", 1, 4, templates)
    assert system == "custom role, limit 4"
    # user template falls back to the stock one
    assert "Candidate actions:" in user


# --- reply parsing ----------------------------------------------------------------


def test_plain_action_object_parses():
    assert parse_action('{"NextAction": 2}', sample_menu()) == 2


def test_action_extracted_from_prose():
    assert parse_action('I think the answer is {"NextAction": 3}', sample_menu()) == 3


def test_action_extracted_from_code_fence():
    raw = 'Reasoning...\n```json\n{"NextAction": 1}\n```\n'
    assert parse_action(raw, sample_menu()) == 1


def test_last_action_object_wins():
    raw = '{"NextAction": 1} hmm, actually {"NextAction": 2}'
    assert parse_action(raw, sample_menu()) == 2


def test_zero_is_out_of_range():
    with pytest.raises(OutOfRange):
        parse_action('{"NextAction": 0}', sample_menu())


def test_index_beyond_menu_is_out_of_range():
    with pytest.raises(OutOfRange):
        parse_action('{"NextAction": 99}', sample_menu())


def test_no_object_is_malformed():
    with pytest.raises(MalformedReply):
        parse_action("I would pick action 2", sample_menu())


def test_parse_render_closure():
    menu = sample_menu()
    for action in menu.actions:
        raw = json.dumps({"NextAction": action.index})
        assert parse_action(raw, menu) == action.index


def test_reply_prevalidation_requires_exactly_one_object():
    assert reply_from_text('{"NextAction": 2}').parsed_action == 2
    assert reply_from_text('{"NextAction": 1} {"NextAction": 2}').parsed_action is None
    assert reply_from_text("none").parsed_action is None


# --- scripted agent -----------------------------------------------------------------


def request_with(menu, round_index=1):
    system, user = render_prompt(menu, "q", round_index, 4)
    return AgentRequest(
        system_prompt=system,
        user_prompt=user,
        grid_image=None,
        round_index=round_index,
        menu=menu,
    )


def test_scripted_agent_replays_in_order():
    agent = ScriptedAgent([2, 3])
    menu = sample_menu()
    assert parse_action(agent.decide(request_with(menu)).raw_text, menu) == 2
    assert parse_action(agent.decide(request_with(menu, 2)).raw_text, menu) == 3


def test_empty_script_exhausts_immediately():
    with pytest.raises(ScriptExhausted):
        ScriptedAgent([]).decide(request_with(sample_menu()))


def test_script_exhausts_after_use():
    agent = ScriptedAgent([1])
    agent.decide(request_with(sample_menu()))
    with pytest.raises(ScriptExhausted):
        agent.decide(request_with(sample_menu(), 2))


# --- oracle agent ----------------------------------------------------------------------


def _line_graph():
    """Views in a row: v0 - v1 - v2; only v2 sees the target."""
    from vog.bench import camera_pose

    target = make_object("prize_0", box(8.0, 0, 0.3, 0.5, 0.5, 0.5), seed=1)
    decoys = [
        make_object("decoy_0", box(0.0, 0, 0.3, 0.5, 0.5, 0.5), seed=2),
        make_object("decoy_1", box(4.0, 0, 0.3, 0.5, 0.5, 0.5), seed=3),
    ]
    views = []
    for i, x in enumerate([0.0, 4.0, 8.0]):
        eye = np.array([x, -2.5, 1.2])
        views.append(
            make_view(
                f"v_{i}",
                i,
                fx=40,
                fy=40,
                cx=32,
                cy=24,
                size=(64, 48),
                pose=camera_pose(eye, np.array([x, 0, 0.3])),
            )
        )
    bundle = in_memory_bundle(views=views, objects=[target] + decoys)
    from vog.graph import BuildParams

    # generous occlusion tolerance: the boxes carry volumetric point samples
    return build_graph(
        bundle,
        BuildParams(
            min_pixel_count=3, tau_low=0.2, tau_high=0.95, occlusion_tolerance=0.6
        ),
    )


def test_oracle_selects_ground_truth_when_offered():
    graph = _line_graph()
    agent = OracleAgent("prize_0", graph)
    menu = CandidateMenu(
        actions=[switch(1, "v_1", 1), select(2, "prize_0", graph.bbox_of("prize_0"))]
    )
    reply = agent.decide(request_with(menu))
    assert parse_action(reply.raw_text, menu) == 2


def test_oracle_moves_toward_ground_truth():
    graph = _line_graph()
    agent = OracleAgent("prize_0", graph)
    # from v0 the oracle should prefer the view closest to one that sees prize_0
    distances = agent._distance
    menu = CandidateMenu(
        actions=[
            switch(1, "v_1", 1),
            select(2, "decoy_0", graph.bbox_of("decoy_0")),
        ]
    )
    reply = agent.decide(request_with(menu))
    choice = parse_action(reply.raw_text, menu)
    assert choice == 1
    assert distances["v_2"] == 0


def test_oracle_falls_back_to_first_action():
    graph = _line_graph()
    agent = OracleAgent("prize_0", graph)
    menu = CandidateMenu(actions=[select(1, "decoy_0", graph.bbox_of("decoy_0"))])
    reply = agent.decide(request_with(menu))
    assert parse_action(reply.raw_text, menu) == 1


def test_oracle_requires_known_object():
    graph = _line_graph()
    with pytest.raises(KeyError):
        OracleAgent("ghost_9", graph)
