"""Reference-driven exact retrieval.

Resolving nodes to code never involves similarity search: the only cards
returned are those referenced by the requested nodes' ``source_refs`` or by
the ``evidence`` of edges incident (either endpoint) to a requested node,
ordered deterministically by file and offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import MissingCard, UnknownNode
from .graph_store import GraphRecord, StoredCard
from .ingest import Card


@dataclass(frozen=True)
class ContextEntry:
    card: Card
    content: bytes
    origins: tuple[str, ...]  # "node:<id>" and/or "edge:<src>-[<type>]-><dst>"


@dataclass
class CodeContext:
    entries: list[ContextEntry] = field(default_factory=list)

    def card_ids(self) -> list[str]:
        return [e.card.id for e in self.entries]


def _sort_key(entry: ContextEntry) -> tuple:
    c = entry.card
    return (c.relpath, c.char_start, c.char_end, c.id)


def resolve_node_cards(
    graph: GraphRecord,
    node_ids: list[str],
    card_store: dict[str, StoredCard],
) -> CodeContext:
    """Collect the evidence cards for *node_ids* plus their incident edges.

    Raises UnknownNode listing every id absent from the graph, and
    MissingCard when a referenced card is not in the store.
    """
    unknown = [nid for nid in node_ids if nid not in graph.nodes]
    if unknown:
        raise UnknownNode(unknown)

    requested = set(node_ids)
    origins_by_card: dict[str, set[str]] = {}
    for nid in node_ids:
        for ref in graph.nodes[nid].source_refs:
            origins_by_card.setdefault(ref, set()).add(f"node:{nid}")
    for edge in graph.edges:
        if edge.src in requested or edge.dst in requested:
            tag = f"edge:{edge.src}-[{edge.edge_type}]->{edge.dst}"
            for ref in edge.evidence:
                origins_by_card.setdefault(ref, set()).add(tag)

    entries = []
    for card_id, origins in origins_by_card.items():
        stored = card_store.get(card_id)
        if stored is None:
            raise MissingCard(f"card {card_id} not present in the card store")
        entries.append(ContextEntry(card=stored.card, content=stored.content,
                                    origins=tuple(sorted(origins))))
    entries.sort(key=_sort_key)
    return CodeContext(entries=entries)


def render_context(ctx: CodeContext) -> str:
    """One fenced block per card, headed ``relpath:[cs,ce)``; pure in *ctx*."""
    blocks = []
    for entry in ctx.entries:
        c = entry.card
        text = entry.content.decode("utf-8", errors="replace")
        blocks.append(f"{c.relpath}:[{c.char_start},{c.char_end})\n```\n{text}\n```")
    return "\n\n".join(blocks)
