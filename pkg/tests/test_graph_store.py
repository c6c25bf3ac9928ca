"""Graph model semantics: merge-only updates, dedup, orphans, persistence."""

from __future__ import annotations

import copy
import random

import pytest

from graphaudit.errors import TargetMismatch, UnknownNode
from graphaudit.graph_store import (
    GraphRecord,
    StoredCard,
    annotate_node,
    apply_update,
    apply_update_on_disk,
    load_all_graphs,
    load_card_store,
    load_graph,
    orphan_nodes,
    referenced_cards,
    save_graph,
    write_card_store,
    write_summary,
)
from graphaudit.schemas import EdgeSpec, GraphUpdate, NodeSpec, NodeUpdate

from conftest import as_update, graph_update_payload, random_graph


def _seed_graph(name="G") -> GraphRecord:
    g = GraphRecord(name=name, focus="demo")
    apply_update(g, as_update(graph_update_payload(
        name,
        nodes=[("A", "function", "a()"), ("B", "function", "b()")],
    )), known_cards=set())
    return g


def test_duplicate_edge_merges_evidence():
    g = _seed_graph()
    known = {"c1", "c2"}
    first = GraphUpdate(target_graph="G", new_edges=[EdgeSpec("calls", "A", "B", ["c1"])])
    again = GraphUpdate(target_graph="G", new_edges=[EdgeSpec("calls", "A", "B", ["c2"])])
    s1 = apply_update(g, first, known)
    s2 = apply_update(g, again, known)
    assert s1.edges_added == 1 and s2.edges_added == 0
    assert len(g.edges) == 1
    assert g.edges[0].evidence == ["c1", "c2"]


def test_empty_update_is_identity():
    g = _seed_graph()
    before = copy.deepcopy(g.to_payload())
    stats = apply_update(g, GraphUpdate(target_graph="G"), set())
    assert (stats.nodes_added, stats.edges_added, stats.nodes_updated) == (0, 0, 0)
    assert stats.rejected == []
    after = g.to_payload()
    before["stats"].pop("updated_at"), after["stats"].pop("updated_at")
    assert after == before


def test_refine_only_rejects_detached_nodes():
    g = _seed_graph()
    update = GraphUpdate(
        target_graph="G",
        new_nodes=[NodeSpec("X", "function", "x"), NodeSpec("Y", "function", "y"),
                   NodeSpec("Z", "function", "z")],
    )
    stats = apply_update(g, update, set(), refine_only=True)
    assert stats.nodes_added == 0
    assert sorted(r.value for r in stats.rejected) == ["X", "Y", "Z"]
    assert set(g.nodes) == {"A", "B"}


def test_refine_only_admits_attached_nodes_up_to_cap():
    g = _seed_graph()
    new_nodes = [NodeSpec(f"N{i}", "function", f"n{i}") for i in range(4)]
    edges = [EdgeSpec("calls", "A", f"N{i}") for i in range(4)]
    update = GraphUpdate(target_graph="G", new_nodes=new_nodes, new_edges=edges)
    stats = apply_update(g, update, set(), refine_only=True, max_refine_nodes=2)
    assert stats.nodes_added == 2
    assert {"N0", "N1"} <= set(g.nodes)
    assert {r.value for r in stats.rejected if r.kind == "node"} == {"N2", "N3"}
    # reapplying the capped update admits nothing new
    again = apply_update(g, update, set(), refine_only=True, max_refine_nodes=2)
    assert again.nodes_added == 0
    assert set(g.nodes) == {"A", "B", "N0", "N1"}


def test_unknown_refs_dropped_and_reported():
    g = _seed_graph()
    update = GraphUpdate(
        target_graph="G",
        new_nodes=[NodeSpec("C", "storage", "c", refs=["real", "fake"])],
    )
    stats = apply_update(g, update, known_cards={"real"})
    assert g.nodes["C"].source_refs == ["real"]
    assert any(r.kind == "ref" and r.value == "fake" for r in stats.rejected)


def test_edge_naming_unknown_node_is_rejected():
    g = _seed_graph()
    update = GraphUpdate(target_graph="G",
                         new_edges=[EdgeSpec("calls", "A", "GHOST")])
    stats = apply_update(g, update, set())
    assert stats.edges_added == 0
    assert g.edges == []
    assert any(r.kind == "edge" and "GHOST" in r.reason for r in stats.rejected)


def test_duplicate_node_id_merges_refs_keeps_identity():
    g = _seed_graph()
    update = GraphUpdate(
        target_graph="G",
        new_nodes=[NodeSpec("A", "role", "other label", refs=["c9"])],
    )
    stats = apply_update(g, update, known_cards={"c9"})
    assert stats.nodes_added == 0
    assert g.nodes["A"].node_type == "function"  # merge never overwrites
    assert g.nodes["A"].label == "a()"
    assert g.nodes["A"].source_refs == ["c9"]


def test_node_updates_merge_and_append():
    g = _seed_graph()
    update = GraphUpdate(
        target_graph="G",
        node_updates=[NodeUpdate(
            id="A", description="entry point", properties={"visibility": "public"},
            new_observations=["obs1"], new_assumptions=["asm1"],
        )],
    )
    stats = apply_update(g, update, set())
    assert stats.nodes_updated == 1
    node = g.nodes["A"]
    assert node.description == "entry point"
    assert node.properties == {"visibility": "public"}
    # shallow key-level overwrite on properties, append-dedup on annotations
    apply_update(g, GraphUpdate(target_graph="G", node_updates=[NodeUpdate(
        id="A", properties={"visibility": "internal"},
        new_observations=["obs1", "obs2"])]), set())
    assert node.properties == {"visibility": "internal"}
    assert node.observations == ["obs1", "obs2"]


def test_target_mismatch():
    g = _seed_graph("G")
    with pytest.raises(TargetMismatch):
        apply_update(g, GraphUpdate(target_graph="Other"), set())


def test_annotate_node_dedup_and_errors():
    g = _seed_graph()
    annotate_node(g, "A", observations=["X"])
    annotate_node(g, "A", observations=["X"], assumptions=["Y"])
    assert g.nodes["A"].observations == ["X"]
    assert g.nodes["A"].assumptions == ["Y"]
    payload_before = g.nodes["A"].to_payload()
    annotate_node(g, "A")  # empty append is a no-op
    assert g.nodes["A"].to_payload() == payload_before
    with pytest.raises(UnknownNode):
        annotate_node(g, "missing", observations=["o"])


def test_orphans_examples():
    g = _seed_graph()
    apply_update(g, GraphUpdate(target_graph="G",
                                new_edges=[EdgeSpec("calls", "A", "B")]), set())
    assert orphan_nodes(g) == []
    apply_update(g, GraphUpdate(target_graph="G",
                                new_nodes=[NodeSpec("C", "role", "c")]), set())
    assert orphan_nodes(g) == ["C"]


def test_orphans_match_brute_force_on_random_graphs():
    rng = random.Random(42)
    for _ in range(20):
        g = random_graph(rng, n_nodes=50, n_edges=rng.randrange(0, 80))
        incident = {nid: 0 for nid in g.nodes}
        for e in g.edges:
            incident[e.src] += 1
            incident[e.dst] += 1
        expected = sorted(nid for nid, count in incident.items() if count == 0)
        assert orphan_nodes(g) == expected


def test_referenced_cards_examples_and_oracle():
    g = _seed_graph()
    assert referenced_cards([g]) == set()
    apply_update(g, GraphUpdate(
        target_graph="G",
        new_nodes=[NodeSpec("C", "role", "c", refs=["c1"])],
        new_edges=[EdgeSpec("calls", "A", "C", refs=["c1", "c2"])],
    ), known_cards={"c1", "c2"})
    assert referenced_cards([g]) == {"c1", "c2"}

    rng = random.Random(5)
    pool = [f"card{i}" for i in range(30)]
    graphs = [random_graph(rng, card_pool=pool) for _ in range(4)]
    brute = set()
    for gg in graphs:
        for n in gg.nodes.values():
            brute |= set(n.source_refs)
        for e in gg.edges:
            brute |= set(e.evidence)
    assert referenced_cards(graphs) == brute


def _random_update(rng: random.Random, graph: GraphRecord, pool: list[str]) -> GraphUpdate:
    node_ids = list(graph.nodes) + [f"x{rng.randrange(30)}" for _ in range(3)]
    return GraphUpdate(
        target_graph=graph.name,
        new_nodes=[NodeSpec(rng.choice(node_ids), "function", "L",
                            refs=rng.sample(pool, k=rng.randrange(3)))
                   for _ in range(rng.randrange(4))],
        new_edges=[EdgeSpec(rng.choice(["calls", "writes"]), rng.choice(node_ids),
                            rng.choice(node_ids), refs=rng.sample(pool, k=rng.randrange(2)))
                   for _ in range(rng.randrange(5))],
        node_updates=[NodeUpdate(id=rng.choice(node_ids),
                                 new_observations=[f"o{rng.randrange(5)}"])
                      for _ in range(rng.randrange(3))],
    )


def _strip_timestamps(payload: dict) -> dict:
    payload = copy.deepcopy(payload)
    payload["stats"].pop("updated_at")
    return payload


def test_update_sequences_idempotent_monotone_unique():
    rng = random.Random(99)
    pool = [f"c{i}" for i in range(10)]
    known = set(pool)
    for _ in range(60):
        g = random_graph(rng, n_nodes=6, n_edges=6, card_pool=pool)
        for _ in range(rng.randrange(1, 5)):
            update = _random_update(rng, g, pool)
            refine = rng.random() < 0.3
            before = g.to_payload()
            apply_update(g, update, known, refine_only=refine)
            once = _strip_timestamps(g.to_payload())
            apply_update(g, update, known, refine_only=refine)
            twice = _strip_timestamps(g.to_payload())
            assert once == twice
            # monotone: nothing disappears
            assert set(before["nodes"]) <= set(once["nodes"])
            for nid, np in before["nodes"].items():
                assert set(np["source_refs"]) <= set(once["nodes"][nid]["source_refs"])
                assert np["observations"] == once["nodes"][nid][
                    "observations"][:len(np["observations"])]
            # edge key uniqueness by full scan
            keys = [(e["src"], e["dst"], e["edge_type"]) for e in once["edges"]]
            assert len(keys) == len(set(keys))


def test_persistence_round_trip_and_summary(project):
    g = _seed_graph("SystemArchitecture")
    apply_update(g, GraphUpdate(target_graph="SystemArchitecture",
                                new_edges=[EdgeSpec("calls", "A", "B")]), set())
    save_graph(project, g)
    loaded = load_graph(project, "SystemArchitecture")
    assert loaded.to_payload() == g.to_payload()
    assert load_all_graphs(project)["SystemArchitecture"].to_payload() == g.to_payload()

    summary = write_summary(project, [g])
    assert summary["graphs"]["SystemArchitecture"]["node_count"] == 2
    assert summary["graphs"]["SystemArchitecture"]["edge_count"] == 1
    assert summary["totals"] == {"graph_count": 1, "node_count": 2, "edge_count": 1}


def test_apply_update_on_disk_serializes_via_file(project):
    g = _seed_graph("G")
    save_graph(project, g)
    update = GraphUpdate(target_graph="G", new_nodes=[NodeSpec("C", "role", "c")],
                         new_edges=[EdgeSpec("calls", "A", "C")])
    _, stats = apply_update_on_disk(project, update, set())
    assert (stats.nodes_added, stats.edges_added) == (1, 1)
    assert set(load_graph(project, "G").nodes) == {"A", "B", "C"}


def test_card_store_round_trips_arbitrary_bytes(tmp_path):
    path = tmp_path / "card_store.jsonl"
    store = {
        "card_1": StoredCard("card_1", "a.bin", 0, 4, b"\x00\xff\xfe0"),
        "card_2": StoredCard("card_2", "b.py", 2, 9, "uniçode".encode()),
    }
    write_card_store(path, store)
    assert load_card_store(path) == store
