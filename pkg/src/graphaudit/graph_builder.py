"""Model-driven graph construction.

Discovery asks for exactly k graph specs (the first is always forced to the
SystemArchitecture graph, or skipped entirely when a spec is forced by the
caller); iterative refinement then cycles round-robin over the graphs, one
strictly typed update per iteration, persisting after every applied update
and stopping early once a warm-up round has finished and a configurable
window of consecutive iterations adds neither nodes nor edges.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import graph_store, ingest, storage
from .errors import (
    ContextOverflow,
    ProviderSchemaError,
    SchemaValidationError,
    UnknownFile,
    UnknownGraph,
)
from .ingest import Card, Manifest
from .project import ProjectLayout
from .provider import (
    ModelProfile,
    Provider,
    StructuredRequest,
    complete_structured,
    estimate_tokens,
)
from .schemas import SYSTEM_GRAPH_NAME, GraphSpec, GraphUpdate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BuildConfig:
    k: int = 2
    max_iterations: int = 12
    early_stop_window: int = 2
    context_budget_tokens: int = 24_000
    refine_only: bool = False
    forced_spec: GraphSpec | None = None
    max_refine_nodes: int = graph_store.DEFAULT_MAX_REFINE_NODES

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.early_stop_window < 1:
            raise ValueError("early_stop_window must be >= 1")


def default_card_token_estimator(card: Card) -> int:
    # Token cost follows span size; no file read needed.
    return max(1, estimate_tokens(b"\0" * card.span_bytes))


def sample_cards_for_context(
    cards: list[Card],
    budget_tokens: int,
    estimator: Callable[[Card], int] = default_card_token_estimator,
) -> list[Card]:
    """Pick cards whose estimated tokens fit *budget_tokens*, spread by file.

    Files are visited round-robin (sorted by relpath, cards in offset order
    within a file) and sampling stops at the first card that would overflow
    the budget, so per-file counts never differ by more than one slot.
    Fully deterministic for a given input order.
    """
    if budget_tokens <= 0:
        raise ValueError("budget_tokens must be > 0")
    by_file: dict[str, list[Card]] = {}
    for card in cards:
        by_file.setdefault(card.relpath, []).append(card)
    queues = [list(by_file[rel]) for rel in sorted(by_file)]

    picked: list[Card] = []
    total = 0
    cursor = 0
    while queues:
        if cursor >= len(queues):
            cursor = 0
        queue = queues[cursor]
        if not queue:
            queues.pop(cursor)
            continue
        card = queue.pop(0)
        cost = estimator(card)
        if total + cost > budget_tokens:
            break
        picked.append(card)
        total += cost
        cursor += 1
    picked.sort(key=lambda c: (c.relpath, c.char_start))
    return picked


def _render_card_sample(sample: list[Card], manifest: Manifest) -> str:
    root = Path(manifest.repo_root)
    blocks = []
    for card in sample:
        content = ingest.card_content(card, root, manifest).decode("utf-8", errors="replace")
        blocks.append(
            f"card {card.id} {card.relpath}:[{card.char_start},{card.char_end})\n"
            f"```\n{content}\n```"
        )
    return "\n\n".join(blocks) if blocks else "(no card sample fit the budget)"


def discover_graphs(
    manifest: Manifest,
    cards: list[Card],
    config: BuildConfig,
    provider: Provider,
    profile: ModelProfile,
) -> list[GraphSpec]:
    """Choose the graphs to build.

    A forced spec short-circuits discovery with zero provider calls.
    Otherwise the provider is asked for exactly k specs over a card sample
    sized to the context budget, and the first spec is coerced to the
    system-architecture graph if the model deviated.
    """
    if config.forced_spec is not None:
        return [config.forced_spec]
    if not cards:
        raise ValueError("discovery needs a non-empty card set")

    sample = sample_cards_for_context(cards, config.context_budget_tokens)
    file_listing = "\n".join(f"- {e.relpath} ({e.byte_len} bytes)" for e in manifest.files)
    sections = (
        "You are mapping a codebase for a security audit. Design the knowledge "
        "graphs to build: reply with one GraphDiscovery JSON object "
        "{\"graphs_needed\": [{name, focus}], \"suggested_node_types\": [..], "
        "\"suggested_edge_types\": [..]}.",
        f"Request: exactly {config.k} graphs. The first must be named "
        f"{SYSTEM_GRAPH_NAME} (overall component/architecture view); the rest "
        "should cover distinct aspects worth auditing (authorization, value "
        "flow, state mutation, ...).",
        "Repository files:\n" + file_listing,
        "Code sample:\n" + _render_card_sample(sample, manifest),
    )

    def check_count(discovery) -> None:
        if len(discovery.graphs_needed) != config.k:
            raise SchemaValidationError(
                f"expected exactly {config.k} graphs_needed, got {len(discovery.graphs_needed)}"
            )

    response = complete_structured(
        StructuredRequest("GraphDiscovery", sections, profile),
        provider, validator=check_count,
    )
    specs = list(response.data.graphs_needed)
    if specs[0].name != SYSTEM_GRAPH_NAME:
        log.info("coercing first graph %r to %s", specs[0].name, SYSTEM_GRAPH_NAME)
        specs[0] = GraphSpec(name=SYSTEM_GRAPH_NAME, focus=specs[0].focus)
    return specs


def build(
    project: ProjectLayout,
    config: BuildConfig,
    provider: Provider,
    profile: ModelProfile,
) -> list[graph_store.GraphRecord]:
    """Discover graphs and refine them iteratively; returns the final records.

    Graphs are persisted after every applied update, together with the
    summary and the referenced-card store, so the on-disk state always
    matches memory.  Holds the project build lock for the whole run.
    """
    manifest = ingest.load_manifest(project)
    cards = ingest.load_cards(project)
    if not cards:
        raise UnknownFile("no ingest cards found; run ingest first")
    cards_by_id = {c.id: c for c in cards}
    known_cards = set(cards_by_id)
    repo_root = Path(manifest.repo_root)

    with storage.locked(project.build_lock_path, timeout=5.0):
        specs = discover_graphs(manifest, cards, config, provider, profile)
        graphs: dict[str, graph_store.GraphRecord] = {}
        for spec in specs:
            try:
                graphs[spec.name] = graph_store.load_graph(project, spec.name)
            except UnknownGraph:
                graphs[spec.name] = graph_store.GraphRecord(name=spec.name, focus=spec.focus)
                graph_store.save_graph(project, graphs[spec.name])
        graph_store.write_summary(project, graphs.values())

        order = [s.name for s in specs]
        warmup = len(order)
        zero_streak = 0
        for iteration in range(config.max_iterations):
            target = graphs[order[iteration % len(order)]]
            delta = _run_iteration(
                project, target, manifest, cards, cards_by_id, known_cards,
                repo_root, config, provider, profile, graphs,
            )
            if iteration + 1 <= warmup:
                continue  # never stop inside the warm-up round
            zero_streak = zero_streak + 1 if delta == 0 else 0
            if zero_streak >= config.early_stop_window:
                log.info("early stop after %d iterations (%d quiet)", iteration + 1, zero_streak)
                break
    return [graphs[name] for name in order]


def _run_iteration(
    project: ProjectLayout,
    target: graph_store.GraphRecord,
    manifest: Manifest,
    cards: list[Card],
    cards_by_id: dict[str, Card],
    known_cards: set[str],
    repo_root: Path,
    config: BuildConfig,
    provider: Provider,
    profile: ModelProfile,
    graphs: dict[str, graph_store.GraphRecord],
) -> int:
    sample = sample_cards_for_context(cards, config.context_budget_tokens)
    mode = ("Refine-only: new nodes must attach to existing nodes via your "
            f"proposed edges (max {config.max_refine_nodes} new nodes)."
            if config.refine_only else
            "Add the most important missing nodes/edges and annotate existing ones.")
    sections = (
        "You are refining one knowledge graph of a code audit. Reply with one "
        "GraphUpdate JSON object {\"target_graph\", \"new_nodes\": [{id, type, "
        "label, refs}], \"new_edges\": [{type, src, dst, refs}], \"node_updates\": "
        "[{id, description?, properties?, new_observations?, new_assumptions?}]}. "
        "refs must be card ids from the sample.",
        f"Target graph: {target.name} (focus: {target.focus or 'general'}). {mode}",
        "Current graph state:\n" + _compact_graph(target),
        "Code sample:\n" + _render_card_sample(sample, manifest),
    )

    def check_target(update: GraphUpdate) -> None:
        if update.target_graph != target.name:
            raise SchemaValidationError(
                f"target_graph must be {target.name!r}, got {update.target_graph!r}"
            )

    try:
        response = complete_structured(
            StructuredRequest("GraphUpdate", sections, profile),
            provider, validator=check_target,
        )
    except (ProviderSchemaError, ContextOverflow) as exc:
        log.warning("iteration skipped, provider output unusable: %s", exc)
        return 0

    stats = graph_store.apply_update(
        target, response.data, known_cards,
        refine_only=config.refine_only, max_refine_nodes=config.max_refine_nodes,
    )
    # Persist incrementally: graph file, summary, and referenced cards.
    graph_store.save_graph(project, target)
    graph_store.write_summary(project, graphs.values())
    graph_store.update_card_store(project, graphs.values(), cards_by_id, repo_root, manifest)
    if stats.rejected:
        log.info("update to %s rejected %d items", target.name, len(stats.rejected))
    orphans = graph_store.orphan_nodes(target)
    if orphans:
        log.info("graph %s has %d orphan node(s): %s",
                 target.name, len(orphans), ", ".join(orphans[:10]))
    return stats.delta


def _compact_graph(graph: graph_store.GraphRecord) -> str:
    if not graph.nodes:
        return "(empty graph)"
    lines = []
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        lines.append(f"- {nid} [{node.node_type}] {node.label}")
    for e in graph.edges:
        lines.append(f"- {e.src} -[{e.edge_type}]-> {e.dst}")
    return "\n".join(lines)
