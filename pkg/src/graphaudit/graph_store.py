"""Typed multi-graphs over code cards: nodes, edges, annotations, and updates.

Nodes and edges carry card-id references (``source_refs`` / ``evidence``)
that anchor every structural claim to exact code slices.  Updates are
merge-only: nodes are added once (duplicate ids merge refs), edges are
deduplicated by ``(src, dst, type)`` while merging evidence, and annotations
are append-only.  Confidence never lives on nodes; it belongs to hypotheses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from . import storage
from .errors import TargetMismatch, UnknownGraph, UnknownNode
from .ingest import Card, Manifest, card_content
from .project import ProjectLayout
from .schemas import GraphUpdate

DEFAULT_MAX_REFINE_NODES = 5


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _merge_refs(existing: list[str], new: Iterable[str]) -> list[str]:
    return sorted(set(existing) | set(new))


def _append_unique(target: list[str], items: Iterable[str]) -> int:
    added = 0
    for item in items:
        if item not in target:
            target.append(item)
            added += 1
    return added


@dataclass
class NodeRecord:
    id: str
    node_type: str
    label: str
    description: str | None = None
    properties: dict[str, str] = field(default_factory=dict)
    observations: list[str] = field(default_factory=list)
    assumptions: list[str] = field(default_factory=list)
    source_refs: list[str] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "id": self.id,
            "node_type": self.node_type,
            "label": self.label,
            "description": self.description,
            "properties": dict(self.properties),
            "observations": list(self.observations),
            "assumptions": list(self.assumptions),
            "source_refs": sorted(self.source_refs),
        }

    @classmethod
    def from_payload(cls, p: dict) -> "NodeRecord":
        return cls(
            id=p["id"], node_type=p["node_type"], label=p["label"],
            description=p.get("description"),
            properties=dict(p.get("properties", {})),
            observations=list(p.get("observations", [])),
            assumptions=list(p.get("assumptions", [])),
            source_refs=list(p.get("source_refs", [])),
        )


@dataclass
class EdgeRecord:
    edge_type: str
    src: str
    dst: str
    evidence: list[str] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.edge_type)

    def to_payload(self) -> dict:
        return {
            "edge_type": self.edge_type,
            "src": self.src,
            "dst": self.dst,
            "evidence": sorted(self.evidence),
        }

    @classmethod
    def from_payload(cls, p: dict) -> "EdgeRecord":
        return cls(edge_type=p["edge_type"], src=p["src"], dst=p["dst"],
                   evidence=list(p.get("evidence", [])))


@dataclass
class GraphRecord:
    name: str
    focus: str = ""
    nodes: dict[str, NodeRecord] = field(default_factory=dict)
    edges: list[EdgeRecord] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)
    updated_at: str = ""

    def edge_index(self) -> dict[tuple[str, str, str], EdgeRecord]:
        return {e.key: e for e in self.edges}

    def to_payload(self) -> dict:
        return {
            "name": self.name,
            "focus": self.focus,
            "nodes": {nid: n.to_payload() for nid, n in self.nodes.items()},
            "edges": [e.to_payload() for e in self.edges],
            "stats": {
                "node_count": len(self.nodes),
                "edge_count": len(self.edges),
                "updated_at": self.updated_at,
            },
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_payload(cls, p: dict) -> "GraphRecord":
        return cls(
            name=p["name"], focus=p.get("focus", ""),
            nodes={nid: NodeRecord.from_payload(np) for nid, np in p.get("nodes", {}).items()},
            edges=[EdgeRecord.from_payload(ep) for ep in p.get("edges", [])],
            metadata=dict(p.get("metadata", {})),
            updated_at=p.get("stats", {}).get("updated_at", ""),
        )


@dataclass(frozen=True)
class Rejection:
    kind: str   # "ref" | "node" | "edge" | "node_update"
    value: str
    reason: str


@dataclass
class ApplyStats:
    nodes_added: int = 0
    edges_added: int = 0
    nodes_updated: int = 0
    rejected: list[Rejection] = field(default_factory=list)

    @property
    def delta(self) -> int:
        return self.nodes_added + self.edges_added


def apply_update(
    graph: GraphRecord,
    update: GraphUpdate,
    known_cards: set[str],
    refine_only: bool = False,
    max_refine_nodes: int = DEFAULT_MAX_REFINE_NODES,
) -> ApplyStats:
    """Merge *update* into *graph* in place and report what changed.

    Refs that are not known card ids are dropped and noted in ``rejected``;
    edges naming unknown nodes are rejected.  Under *refine_only*, new nodes
    are admitted only when a proposed edge attaches them to a node that
    existed before this update, capped at *max_refine_nodes*.

    The operation is idempotent and monotone: reapplying the same update
    changes nothing, and nothing is ever removed.
    """
    if update.target_graph != graph.name:
        raise TargetMismatch(
            f"update targets {update.target_graph!r}, graph is {graph.name!r}"
        )
    stats = ApplyStats()

    def usable_refs(refs: list[str], owner: str) -> list[str]:
        kept = []
        for r in refs:
            if r in known_cards:
                kept.append(r)
            else:
                stats.rejected.append(Rejection("ref", r, f"unknown card (on {owner})"))
        return kept

    pre_existing = set(graph.nodes)

    admitted: set[str] = set()
    if refine_only:
        attached = set()
        for e in update.new_edges:
            if e.src in pre_existing:
                attached.add(e.dst)
            if e.dst in pre_existing:
                attached.add(e.src)
        budget = max_refine_nodes
        for spec in update.new_nodes:
            if spec.id in pre_existing:
                # A merge still consumes a refine slot so that reapplying the
                # same update admits exactly the same node set (idempotence).
                budget -= 1
                continue
            if spec.id not in attached:
                stats.rejected.append(Rejection(
                    "node", spec.id, "refine-only: not attached to an existing node"))
            elif budget <= 0:
                stats.rejected.append(Rejection(
                    "node", spec.id, f"refine-only: over cap of {max_refine_nodes} new nodes"))
            else:
                admitted.add(spec.id)
                budget -= 1

    for spec in update.new_nodes:
        refs = usable_refs(spec.refs, f"node {spec.id}")
        existing = graph.nodes.get(spec.id)
        if existing is not None:
            # Added once: keep the existing label/type, merge refs only.
            existing.source_refs = _merge_refs(existing.source_refs, refs)
            continue
        if refine_only and spec.id not in admitted:
            continue
        graph.nodes[spec.id] = NodeRecord(
            id=spec.id, node_type=spec.type, label=spec.label,
            source_refs=sorted(set(refs)),
        )
        stats.nodes_added += 1

    index = graph.edge_index()
    for espec in update.new_edges:
        refs = usable_refs(espec.refs, f"edge {espec.src}->{espec.dst}")
        missing = [n for n in (espec.src, espec.dst) if n not in graph.nodes]
        if missing:
            stats.rejected.append(Rejection(
                "edge", f"{espec.src}-[{espec.type}]->{espec.dst}",
                f"unknown node(s): {', '.join(missing)}"))
            continue
        key = (espec.src, espec.dst, espec.type)
        existing_edge = index.get(key)
        if existing_edge is not None:
            existing_edge.evidence = _merge_refs(existing_edge.evidence, refs)
            continue
        edge = EdgeRecord(edge_type=espec.type, src=espec.src, dst=espec.dst,
                          evidence=sorted(set(refs)))
        graph.edges.append(edge)
        index[key] = edge
        stats.edges_added += 1

    for nu in update.node_updates:
        node = graph.nodes.get(nu.id)
        if node is None:
            stats.rejected.append(Rejection("node_update", nu.id, "unknown node"))
            continue
        if nu.description is not None:
            node.description = nu.description
        if nu.properties:
            node.properties.update(nu.properties)
        _append_unique(node.observations, nu.new_observations)
        _append_unique(node.assumptions, nu.new_assumptions)
        stats.nodes_updated += 1

    graph.updated_at = _now()
    return stats


def annotate_node(
    graph: GraphRecord,
    node_id: str,
    observations: list[str] | None = None,
    assumptions: list[str] | None = None,
) -> NodeRecord:
    """Append annotations to a node; exact-duplicate strings are skipped."""
    node = graph.nodes.get(node_id)
    if node is None:
        raise UnknownNode([node_id])
    _append_unique(node.observations, observations or [])
    _append_unique(node.assumptions, assumptions or [])
    return node


def orphan_nodes(graph: GraphRecord) -> list[str]:
    """Node ids with zero incident edges, sorted lexicographically."""
    touched = set()
    for e in graph.edges:
        touched.add(e.src)
        touched.add(e.dst)
    return sorted(nid for nid in graph.nodes if nid not in touched)


def referenced_cards(graphs: Iterable[GraphRecord]) -> set[str]:
    """Union of all node source_refs and edge evidence across *graphs*."""
    out: set[str] = set()
    for g in graphs:
        for n in g.nodes.values():
            out.update(n.source_refs)
        for e in g.edges:
            out.update(e.evidence)
    return out


# --- persistence --------------------------------------------------------------


def save_graph(layout: ProjectLayout, graph: GraphRecord) -> None:
    graph.updated_at = _now()
    storage.atomic_update(layout.graph_path(graph.name),
                          lambda _cur: graph.to_payload(), default=None)


def load_graph(layout: ProjectLayout, name: str) -> GraphRecord:
    payload = storage.read_store(layout.graph_path(name), None)
    if payload is None:
        raise UnknownGraph(name)
    return GraphRecord.from_payload(payload)


def load_all_graphs(layout: ProjectLayout) -> dict[str, GraphRecord]:
    graphs: dict[str, GraphRecord] = {}
    if not layout.graphs_dir.exists():
        return graphs
    for path in sorted(layout.graphs_dir.glob("*.json")):
        if path.name == "summary.json":
            continue
        g = GraphRecord.from_payload(storage.read_store(path, {}))
        graphs[g.name] = g
    return graphs


def apply_update_on_disk(
    layout: ProjectLayout,
    update: GraphUpdate,
    known_cards: set[str],
    refine_only: bool = False,
    max_refine_nodes: int = DEFAULT_MAX_REFINE_NODES,
) -> tuple[GraphRecord, ApplyStats]:
    """Read-apply-write a graph update inside the graph file's lock."""
    out: dict = {}

    def xf(payload):
        if payload is None:
            raise UnknownGraph(update.target_graph)
        g = GraphRecord.from_payload(payload)
        out["stats"] = apply_update(g, update, known_cards, refine_only, max_refine_nodes)
        out["graph"] = g
        return g.to_payload()

    storage.atomic_update(layout.graph_path(update.target_graph), xf, default=None)
    return out["graph"], out["stats"]


def annotate_node_on_disk(
    layout: ProjectLayout,
    graph_name: str,
    node_id: str,
    observations: list[str] | None = None,
    assumptions: list[str] | None = None,
) -> NodeRecord:
    out: dict = {}

    def xf(payload):
        if payload is None:
            raise UnknownGraph(graph_name)
        g = GraphRecord.from_payload(payload)
        out["node"] = annotate_node(g, node_id, observations, assumptions)
        g.updated_at = _now()
        return g.to_payload()

    storage.atomic_update(layout.graph_path(graph_name), xf, default=None)
    return out["node"]


def write_summary(layout: ProjectLayout, graphs: Iterable[GraphRecord]) -> dict:
    """Record per-graph node/edge totals in ``graphs/summary.json``."""
    ordered = sorted(graphs, key=lambda g: g.name)
    payload = {
        "graphs": {
            g.name: {"focus": g.focus, "node_count": len(g.nodes), "edge_count": len(g.edges)}
            for g in ordered
        },
        "totals": {
            "graph_count": len(ordered),
            "node_count": sum(len(g.nodes) for g in ordered),
            "edge_count": sum(len(g.edges) for g in ordered),
        },
    }
    storage.atomic_update(layout.graphs_summary_path, lambda _cur: payload, default=None)
    return payload


# --- referenced-card store ------------------------------------------------------

@dataclass(frozen=True)
class StoredCard:
    id: str
    relpath: str
    char_start: int
    char_end: int
    content: bytes

    @property
    def card(self) -> Card:
        return Card(self.id, self.relpath, self.char_start, self.char_end)


def _stored_card_line(sc: StoredCard) -> str:
    payload = {
        "id": sc.id, "relpath": sc.relpath,
        "char_start": sc.char_start, "char_end": sc.char_end,
        "content": sc.content.decode("utf-8", errors="surrogateescape"),
    }
    # ensure_ascii keeps surrogate escapes (arbitrary bytes) representable
    return json.dumps(payload, sort_keys=True, ensure_ascii=True)


def load_card_store(path: Path) -> dict[str, StoredCard]:
    path = Path(path)
    store: dict[str, StoredCard] = {}
    if not path.exists():
        return store
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        p = json.loads(line)
        store[p["id"]] = StoredCard(
            id=p["id"], relpath=p["relpath"],
            char_start=p["char_start"], char_end=p["char_end"],
            content=p["content"].encode("utf-8", errors="surrogateescape"),
        )
    return store


def write_card_store(path: Path, store: dict[str, StoredCard]) -> None:
    lines = "".join(_stored_card_line(store[cid]) + "\n" for cid in sorted(store))
    storage.write_bytes_atomic(Path(path), lines.encode("utf-8"))


def update_card_store(
    layout: ProjectLayout,
    graphs: Iterable[GraphRecord],
    cards_by_id: dict[str, Card],
    repo_root: Path,
    manifest: Manifest,
) -> dict[str, StoredCard]:
    """Retain exactly the cards referenced by any graph, content included."""
    store = load_card_store(layout.card_store_path)
    wanted = referenced_cards(graphs)
    changed = False
    for cid in wanted:
        if cid in store or cid not in cards_by_id:
            continue
        card = cards_by_id[cid]
        store[cid] = StoredCard(
            id=card.id, relpath=card.relpath,
            char_start=card.char_start, char_end=card.char_end,
            content=card_content(card, repo_root, manifest),
        )
        changed = True
    if changed or not layout.card_store_path.exists():
        write_card_store(layout.card_store_path, store)
    return store
