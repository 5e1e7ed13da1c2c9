import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otcloak.errors import ConstraintViolation, InvalidParams, NodeNotFound
from otcloak.graph import (DirectedSocialGraph, EdgeEdit, Label, apply_edits, degree_stats, ego_neighborhood,
                           inverse_edits, reset_to_baseline)

from conftest import make_graph, random_graphs


def test_degree_stats_isolated():
    g = make_graph(1, [])
    assert degree_stats(g, 0) == (0, 0)


def test_degree_stats_counts_directions():
    # a=1 -> v=0, v -> b=2, v -> c=3
    g = make_graph(4, [(1, 0), (0, 2), (0, 3)])
    assert degree_stats(g, 0) == (1, 2)


def test_degree_stats_three_cycle():
    g = make_graph(3, [(0, 1), (1, 2), (2, 0)])
    assert [degree_stats(g, v) for v in range(3)] == [(1, 1)] * 3


def test_degree_stats_counts_every_relation():
    g = make_graph(2, [(0, 1, 0), (0, 1, 1)])
    assert degree_stats(g, 0) == (0, 2)
    assert degree_stats(g, 1) == (2, 0)


def test_degree_stats_unknown_node():
    with pytest.raises(NodeNotFound):
        degree_stats(make_graph(1, []), 7)


def test_ego_isolated():
    assert ego_neighborhood(make_graph(2, []), 0) == []


def test_ego_mutual_pair_dedup():
    g = make_graph(2, [(0, 1), (1, 0)])
    assert ego_neighborhood(g, 0) == [1]


def test_ego_path():
    # a=2 -> v=0 -> b=1
    g = make_graph(3, [(2, 0), (0, 1)])
    assert ego_neighborhood(g, 0) == [1, 2]


def test_ego_two_hops_ignores_direction():
    g = make_graph(4, [(0, 1), (2, 1), (3, 2)])
    assert ego_neighborhood(g, 0, 2) == [1, 2]
    assert ego_neighborhood(g, 0, 3) == [1, 2, 3]


def test_ego_rejects_bad_k_and_unknown_node():
    g = make_graph(2, [])
    with pytest.raises(InvalidParams):
        ego_neighborhood(g, 0, 0)
    with pytest.raises(NodeNotFound):
        ego_neighborhood(g, 5)


def test_apply_edits_existing_add_is_noop():
    g = make_graph(3, [(0, 1)])
    res = apply_edits(g, [EdgeEdit("add", 0, 1), EdgeEdit("add", 0, 2)], target=0)
    assert (res.applied, res.noops) == (1, 1)
    assert res.effective == (EdgeEdit("add", 0, 2),)


def test_apply_edits_absent_delete_is_noop():
    g = make_graph(3, [])
    res = apply_edits(g, [EdgeEdit("delete", 1, 0)], target=0)
    assert (res.applied, res.noops) == (0, 1)
    assert g.n_edges == 0


def test_apply_edits_rejects_non_incident_batch_atomically():
    g = make_graph(3, [])
    g.snapshot()
    with pytest.raises(ConstraintViolation):
        apply_edits(g, [EdgeEdit("add", 0, 1), EdgeEdit("add", 1, 2)], target=0)
    assert g.n_edges == 0 and not g.dirty


def test_apply_edits_rejects_edit_touching_target_twice():
    g = make_graph(2, [])
    with pytest.raises(ConstraintViolation):
        apply_edits(g, [EdgeEdit("add", 1, 0)], target=2)


def test_add_then_reset_restores_baseline():
    g = make_graph(3, [(1, 2)])
    g.snapshot()
    apply_edits(g, [EdgeEdit("add", 0, 1)], target=0)
    assert g.has_edge(0, 1)
    reset_to_baseline(g)
    assert not g.has_edge(0, 1) and g.matches_baseline()


def test_reset_without_edits_is_identity():
    g = make_graph(3, [(0, 1)])
    g.snapshot()
    v = g.version
    g.reset()
    assert g.matches_baseline() and g.version == v


def test_reset_after_add_and_delete():
    g = make_graph(3, [(0, 1)])
    g.snapshot()
    apply_edits(g, [EdgeEdit("delete", 0, 1), EdgeEdit("add", 2, 0)], target=0)
    g.reset()
    assert g.edges() == [(0, 1, 0)]
    assert g.matches_baseline()


def test_reset_removes_injected_node_and_restores_records():
    g = make_graph(3, [(0, 1)], content_dim=2)
    g.snapshot()
    new = g.add_node(label=Label.BOT, age_norm=0.05)
    g.add_edge(new, 1)
    g.set_record(0, age_norm=0.9, content=[1.0, 2.0])
    g.remove_node(2)
    assert new == 3
    g.reset()
    assert g.nodes() == [0, 1, 2]
    assert g.matches_baseline()


def test_reset_requires_snapshot():
    with pytest.raises(InvalidParams):
        make_graph(1, []).reset()


def test_graph_rejects_self_loops_and_bad_records():
    g = make_graph(2, [], content_dim=2)
    with pytest.raises(InvalidParams):
        g.add_edge(1, 1)
    with pytest.raises(InvalidParams):
        g.add_node(5, age_norm=1.5, content=[0, 0])
    with pytest.raises(InvalidParams):
        g.add_node(5, content=[0.0])
    with pytest.raises(InvalidParams):
        g.add_node(0, content=[0, 0])


def test_duplicate_triples_are_ignored_but_tags_distinct():
    g = make_graph(2, [])
    assert g.add_edge(0, 1)
    assert not g.add_edge(0, 1)
    assert g.add_edge(0, 1, 1)
    assert g.edges() == [(0, 1, 0), (0, 1, 1)]


def test_matches_baseline_is_bit_exact():
    g = make_graph(2, [], content_dim=1)
    g.snapshot()
    g.set_record(0, content=[np.nextafter(0.0, 1.0)])
    assert not g.matches_baseline()
    g.reset()
    assert g.matches_baseline()


def test_copy_is_independent():
    g = make_graph(3, [(0, 1)])
    g.snapshot()
    h = g.copy()
    h.add_edge(1, 2)
    assert not g.has_edge(1, 2)
    assert h.has_baseline


def test_label_parse_and_str():
    assert Label.parse("Bot") is Label.BOT
    assert Label.parse(0) is Label.HUMAN
    assert str(Label.HUMAN) == "human"
    with pytest.raises(ValueError):
        Label.parse("robot")


@given(random_graphs())
def test_degree_sums_match_edge_count(g):
    ins = sum(degree_stats(g, v)[0] for v in g.nodes())
    outs = sum(degree_stats(g, v)[1] for v in g.nodes())
    assert ins == outs == g.n_edges
    g.check_invariants()


@given(random_graphs())
def test_ego_matches_set_union(g):
    for v in g.nodes():
        assert set(ego_neighborhood(g, v)) == set(g.in_neighbors(v)) | set(g.out_neighbors(v))
        assert ego_neighborhood(g, v) == sorted(ego_neighborhood(g, v))


@given(random_graphs(), st.data())
def test_inverse_edits_restore_adjacency(g, data):
    t = data.draw(st.sampled_from(g.nodes()))
    others = [x for x in g.nodes() if x != t]
    edit = st.builds(lambda op, x, out: EdgeEdit(op, t, x) if out else EdgeEdit(op, x, t),
                     st.sampled_from(["add", "delete"]), st.sampled_from(others), st.booleans())
    edits = data.draw(st.lists(edit, max_size=8))
    before = g.edges()
    res = apply_edits(g, edits, t)
    apply_edits(g, inverse_edits(res.effective), t)
    assert g.edges() == before
    g.check_invariants()


@given(random_graphs(), st.data())
def test_reset_restores_any_mutation_sequence(g, data):
    g.snapshot()
    nodes = g.nodes()
    for _ in range(data.draw(st.integers(0, 10))):
        kind = data.draw(st.sampled_from(["add", "del", "rec", "node", "rmnode"]))
        live = g.nodes()
        u, v = data.draw(st.sampled_from(live)), data.draw(st.sampled_from(live))
        if kind == "add" and u != v:
            g.add_edge(u, v)
        elif kind == "del":
            g.remove_edge(u, v)
        elif kind == "rec":
            g.set_record(u, age_norm=data.draw(st.floats(0, 1)))
        elif kind == "node":
            g.add_node(label=Label.BOT, content=np.zeros(g.content_dim))
        elif kind == "rmnode" and len(live) > 1:
            g.remove_node(u)
    g.reset()
    assert g.nodes() == nodes
    assert g.matches_baseline()
    g.check_invariants()


def test_version_bumps_on_mutation():
    g = DirectedSocialGraph(0)
    v0 = g.version
    g.add_node(0)
    g.add_node(1)
    g.add_edge(0, 1)
    assert g.version > v0
