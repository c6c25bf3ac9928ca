"""The execution loop: schema-validated actions over the shared stores.

A scout step asks the model for exactly one action (load_graph, load_nodes,
update_node, form_hypothesis, update_hypothesis, complete), validates it,
executes it, and appends the result (including execution errors, which do
not kill the loop) to the rolling action history.  Context is rebuilt from
the stores every step, like an auditor's notebook; when it outgrows the
budget, older actions are folded into a memory note while the last few stay
verbatim.

Investigations end on an explicit complete action, a decisive hypothesis, an
exhausted step budget, or preemption by an unconsumed steering note.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import retrieval, storage
from .beliefs import HypothesisStore
from .errors import (
    AuditError,
    ContextOverflow,
    Finalized,
    MissingCard,
    ProviderSchemaError,
    RangeError,
    UnknownGraph,
    UnknownHypothesis,
    UnknownNode,
)
from .graph_store import (
    GraphRecord,
    StoredCard,
    annotate_node_on_disk,
    load_all_graphs,
    load_card_store,
)
from .ingest import Card, Manifest, load_cards, load_manifest
from .planning import (
    CoverageConfig,
    CoverageStore,
    PlanFrame,
    PlanLedger,
    PlanStore,
    coverage,
    normalize_frame,
    per_graph_visited_fraction,
)
from .project import ProjectLayout
from .provider import ModelProfile, Provider, StructuredRequest, complete_structured, estimate_tokens
from .schemas import SYSTEM_GRAPH_NAME, AgentAction, Investigation

log = logging.getLogger(__name__)

OUTCOME_COMPLETED = "completed"
OUTCOME_DECISIVE = "decisive_hypothesis"
OUTCOME_BUDGET = "budget_exhausted"
OUTCOME_PREEMPTED = "preempted"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# --- store bundle -------------------------------------------------------------


@dataclass
class AuditStores:
    """Everything one session needs, opened over a project directory."""

    project: ProjectLayout
    manifest: Manifest
    cards_by_id: dict[str, Card]
    graphs: dict[str, GraphRecord]
    card_store: dict[str, StoredCard]
    hypotheses: HypothesisStore
    coverage: CoverageStore
    plan_store: PlanStore
    ledger: PlanLedger
    session_id: str

    @classmethod
    def open(cls, project: ProjectLayout, session_id: str) -> "AuditStores":
        manifest = load_manifest(project)
        return cls(
            project=project,
            manifest=manifest,
            cards_by_id={c.id: c for c in load_cards(project)},
            graphs=load_all_graphs(project),
            card_store=load_card_store(project.card_store_path),
            hypotheses=HypothesisStore(project.hypotheses_path),
            coverage=CoverageStore(project.coverage_path),
            plan_store=PlanStore(project.plan_store_path(session_id)),
            ledger=PlanLedger(project.plan_ledger_path),
            session_id=session_id,
        )

    @property
    def total_nodes(self) -> int:
        return sum(len(g.nodes) for g in self.graphs.values())

    @property
    def total_cards(self) -> int:
        return len(self.cards_by_id)


# --- steering inbox -----------------------------------------------------------


@dataclass
class SteeringNote:
    path: Path
    text: str
    created_at: str
    consumed: bool


def add_steering_note(project: ProjectLayout, text: str) -> Path:
    """Drop a note into the project inbox; the runner consumes it preemptively."""
    if not text.strip():
        raise ValueError("steering note text must be non-empty")
    project.inbox_dir.mkdir(parents=True, exist_ok=True)
    seq = 1
    while True:
        path = project.inbox_dir / f"note_{seq:04d}.json"
        try:
            with open(path, "x", encoding="utf-8") as fh:
                fh.write(storage.dump_json({
                    "text": text, "created_at": _now(),
                    "consumed": False, "consumed_at": None,
                }))
            return path
        except FileExistsError:
            seq += 1


def list_notes(project: ProjectLayout) -> list[SteeringNote]:
    notes = []
    if not project.inbox_dir.exists():
        return notes
    for path in sorted(project.inbox_dir.glob("note_*.json")):
        payload = storage.read_store(path, {})
        notes.append(SteeringNote(
            path=path, text=payload.get("text", ""),
            created_at=payload.get("created_at", ""),
            consumed=payload.get("consumed", False),
        ))
    return notes


def unconsumed_notes(project: ProjectLayout) -> list[SteeringNote]:
    return [n for n in list_notes(project) if not n.consumed]


def consume_note(path: Path) -> dict:
    """Flip consumed false -> true exactly once (re-consume is a no-op)."""

    def xf(payload: dict) -> dict:
        payload = dict(payload or {})
        if not payload.get("consumed"):
            payload["consumed"] = True
            payload["consumed_at"] = _now()
        return payload

    return storage.atomic_update(Path(path), xf, default={})


# --- context ------------------------------------------------------------------


@dataclass
class ContextState:
    goal: str
    steering_notes: list[str] = field(default_factory=list)
    available_graphs: list[str] = field(default_factory=list)
    memory_notes: list[str] = field(default_factory=list)
    system_architecture_compact: str = ""
    loaded_graphs: dict[str, str] = field(default_factory=dict)
    cached_node_ids: dict[str, list[str]] = field(default_factory=dict)
    recent_actions: list[str] = field(default_factory=list)
    hypotheses_summary: str = ""
    token_estimate: int = 0
    step_count: int = 0
    steps_compressed: int = 0


def _compact_graph_text(graph: GraphRecord) -> str:
    lines = [f"{graph.name} (focus: {graph.focus or 'general'})"]
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        lines.append(f"- {nid} [{node.node_type}] {node.label}")
    for e in graph.edges:
        lines.append(f"- {e.src} -[{e.edge_type}]-> {e.dst}")
    return "\n".join(lines)


def build_context(state: ContextState, stores: AuditStores) -> tuple[str, int]:
    """Render the scout's notebook in fixed section order; pure in its inputs."""
    state.available_graphs = sorted(stores.graphs)
    state.hypotheses_summary = stores.hypotheses.summarize_for_context()
    sys_graph = stores.graphs.get(SYSTEM_GRAPH_NAME)
    state.system_architecture_compact = _compact_graph_text(sys_graph) if sys_graph else ""

    sections: list[str] = [f"# Investigation goal\n{state.goal}"]
    if state.steering_notes:
        sections.append("# Steering notes\n" + "\n".join(f"- {t}" for t in state.steering_notes))
    sections.append("# Available graphs\n" + "\n".join(f"- {g}" for g in state.available_graphs))
    if state.memory_notes:
        sections.append("# Memory notes\n" + "\n".join(state.memory_notes))
    if state.system_architecture_compact:
        sections.append("# System architecture (compact)\n" + state.system_architecture_compact)
    if state.loaded_graphs:
        parts = [f"## {name}\n{text}" for name, text in sorted(state.loaded_graphs.items())]
        sections.append("# Loaded graphs\n" + "\n".join(parts))
    if state.cached_node_ids:
        parts = [f"- {g}: {', '.join(ids)}" for g, ids in sorted(state.cached_node_ids.items())]
        sections.append("# Cached node ids\n" + "\n".join(parts))
    if state.recent_actions:
        sections.append("# Recent actions\n" + "\n\n".join(state.recent_actions))
    if state.hypotheses_summary and state.hypotheses_summary != "(no hypotheses)":
        sections.append("# Hypotheses\n" + state.hypotheses_summary)

    text = "\n\n".join(sections)
    state.token_estimate = estimate_tokens(text)
    return text, state.token_estimate


# --- one action step ----------------------------------------------------------


@dataclass
class ActionResult:
    ok: bool
    detail: str
    terminal: bool = False
    hypothesis_id: str | None = None


_ACTION_INSTRUCTIONS = (
    "Choose exactly one next action and reply with one AgentAction JSON object "
    "{\"kind\", \"params\"}. Kinds: load_graph {graph}; load_nodes {graph, "
    "node_ids}; update_node {graph, node_id, observations?, assumptions?}; "
    "form_hypothesis {candidate: {title, vuln_type, severity, confidence, "
    "node_ids, reasoning}}; update_hypothesis {id, q_new? evidence? "
    "{card_id, note, stance}}; complete {summary}."
)


def step(
    state: ContextState,
    provider: Provider,
    stores: AuditStores,
    profile: ModelProfile,
    frame_key: str | None = None,
) -> tuple[AgentAction, ActionResult]:
    """Request, validate, and execute one action.

    Execution-level failures (unknown graph, unknown node ids, finalized
    hypothesis, ...) come back as error results and are recorded in the
    action history; the loop carries on.  Only provider-level schema
    exhaustion propagates.
    """
    context_text, _ = build_context(state, stores)
    request = StructuredRequest(
        "AgentAction", (context_text, _ACTION_INSTRUCTIONS), profile
    )
    action: AgentAction = complete_structured(request, provider).data
    result = _execute(action, state, stores, profile, frame_key)

    state.step_count += 1
    summary = result.detail if result.ok else f"ERROR: {result.detail}"
    state.recent_actions.append(
        f"step {state.step_count}: {action.kind}({_short_params(action)}) -> {summary}"
    )
    return action, result


def _short_params(action: AgentAction) -> str:
    parts = []
    for key, value in sorted(action.params.items()):
        text = str(value)
        parts.append(f"{key}={text[:80]}")
    return ", ".join(parts)


def _execute(
    action: AgentAction,
    state: ContextState,
    stores: AuditStores,
    profile: ModelProfile,
    frame_key: str | None,
) -> ActionResult:
    params = action.params
    try:
        if action.kind == "load_graph":
            graph = stores.graphs.get(params["graph"])
            if graph is None:
                raise UnknownGraph(params["graph"])
            state.loaded_graphs[graph.name] = _compact_graph_text(graph)
            state.cached_node_ids[graph.name] = sorted(graph.nodes)
            return ActionResult(True, f"loaded graph {graph.name} "
                                      f"({len(graph.nodes)} nodes, {len(graph.edges)} edges)")

        if action.kind == "load_nodes":
            graph = stores.graphs.get(params["graph"])
            if graph is None:
                raise UnknownGraph(params["graph"])
            ctx = retrieval.resolve_node_cards(graph, params["node_ids"], stores.card_store)
            stores.coverage.record_visit(graph.name, params["node_ids"], ctx.card_ids())
            cached = state.cached_node_ids.setdefault(graph.name, [])
            for nid in params["node_ids"]:
                if nid not in cached:
                    cached.append(nid)
            rendered = retrieval.render_context(ctx)
            return ActionResult(True, f"loaded {len(ctx.entries)} card(s) for "
                                      f"{len(params['node_ids'])} node(s)\n{rendered}")

        if action.kind == "update_node":
            node = annotate_node_on_disk(
                stores.project, params["graph"], params["node_id"],
                params["observations"], params["assumptions"],
            )
            graph = stores.graphs.get(params["graph"])
            if graph is not None:
                graph.nodes[node.id] = node
            return ActionResult(True, f"annotated node {node.id} "
                                      f"({len(node.observations)} obs, {len(node.assumptions)} asm)")

        if action.kind == "form_hypothesis":
            hyp_id, created = stores.hypotheses.propose(
                params["candidate"],
                created_by=profile.name,
                session_id=stores.session_id,
                graphs=list(stores.graphs.values()),
                cards_by_id=stores.cards_by_id,
                frame_key=frame_key,
            )
            if created:
                return ActionResult(True, f"hypothesis {hyp_id} created", hypothesis_id=hyp_id)
            return ActionResult(True, f"duplicate title; merged into existing {hyp_id}",
                                hypothesis_id=hyp_id)

        if action.kind == "update_hypothesis":
            hyp_id = params["id"]
            if params.get("q_new") is not None:
                stores.hypotheses.adjust_confidence(hyp_id, params["q_new"])
            if params.get("evidence") is not None:
                ev = params["evidence"]
                stores.hypotheses.add_evidence(hyp_id, ev.card_id, ev.note, ev.stance)
            h = stores.hypotheses.get(hyp_id)
            return ActionResult(True, f"hypothesis {hyp_id} now status={h.status}, "
                                      f"q={h.confidence:.2f}", hypothesis_id=hyp_id)

        # complete
        return ActionResult(True, f"complete: {params['summary']}", terminal=True)

    except (UnknownGraph, UnknownNode, MissingCard, UnknownHypothesis,
            Finalized, RangeError, AuditError) as exc:
        return ActionResult(False, f"{type(exc).__name__}: {exc}")


# --- working-memory compression -------------------------------------------------


def compress_memory(
    state: ContextState,
    tau: float,
    budget: int,
    kappa: int,
    provider: Provider,
    stores: AuditStores,
    profile: ModelProfile,
) -> ContextState:
    """Fold old actions into one memory note once context passes tau * budget.

    The last *kappa* actions stay verbatim.  If the summarizer call fails,
    the old actions are still dropped, under a plain "history truncated"
    note, so the context is guaranteed to shrink.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if budget <= 0:
        raise ValueError("budget must be > 0")
    if kappa < 0:
        raise ValueError("kappa must be >= 0")

    build_context(state, stores)
    if state.token_estimate <= tau * budget:
        return state
    older = state.recent_actions[:-kappa] if kappa else list(state.recent_actions)
    if not older:
        return state
    keep = state.recent_actions[len(older):]

    first = state.steps_compressed + 1
    last = state.steps_compressed + len(older)
    try:
        request = StructuredRequest(
            "MemoryNote",
            ("Compress this action history into one short memory note that keeps "
             "every fact a code auditor would still need. Reply with one "
             "MemoryNote JSON object {\"note\": ...}.",
             "\n\n".join(older)),
            profile,
        )
        note = complete_structured(request, provider).data.note
    except ProviderSchemaError:
        note = "history truncated"
    state.memory_notes.append(f"[steps {first}-{last}] {note}")
    state.steps_compressed = last
    state.recent_actions = keep
    build_context(state, stores)
    return state


# --- investigation runner --------------------------------------------------------


@dataclass(frozen=True)
class RunBudgets:
    max_steps: int = 30
    q_star: float = 0.85
    tau: float = 0.75
    kappa: int = 5


def _write_status(
    stores: AuditStores,
    goal: str,
    phase: str | None,
    state: ContextState,
    cfg: CoverageConfig,
    outcome: str | None,
) -> None:
    idx = stores.coverage.read()
    try:
        p = coverage(idx, stores.total_nodes, stores.total_cards, cfg)
    except AuditError:
        p = 0.0
    payload = {
        "session_id": stores.session_id,
        "goal": goal,
        "phase": phase or "",
        "step_count": state.step_count,
        "outcome": outcome,
        "coverage_p": p,
        "per_graph_visited": per_graph_visited_fraction(idx, stores.graphs.values()),
        "recent_actions": state.recent_actions[-10:],
        "updated_at": _now(),
    }
    storage.atomic_update(
        stores.project.session_status_path(stores.session_id),
        lambda _cur: payload, default=None,
    )


def _decisive_hypothesis(stores: AuditStores, frame_key: str, q_star: float) -> str | None:
    for h in stores.hypotheses.all():
        if h.properties.get("frame_key") == frame_key and h.confidence > q_star:
            return h.id
    return None


def run_investigation(
    inv: Investigation,
    budgets: RunBudgets,
    stores: AuditStores,
    provider: Provider,
    profile: ModelProfile,
    phase: str | None = None,
    cfg: CoverageConfig | None = None,
) -> str:
    """Drive the scout loop for one investigation; returns the outcome.

    Stops on: an explicit complete action (frame -> done); a hypothesis tied
    to this frame exceeding q_star (frame -> done); an unconsumed steering
    note at the top of a step (frame -> superseeded, note consumed, outcome
    preempted so the caller replans); or the step budget (frame -> dropped).
    """
    cfg = cfg or CoverageConfig()
    frame = PlanFrame.from_investigation(inv)
    key = stores.plan_store.record(frame)
    stores.plan_store.set_status(key, "in_progress")

    state = ContextState(goal=inv.goal)
    outcome = OUTCOME_BUDGET
    _write_status(stores, inv.goal, phase, state, cfg, None)

    for _ in range(budgets.max_steps):
        pending = unconsumed_notes(stores.project)
        if pending:
            for note in pending:
                consume_note(note.path)
                state.steering_notes.append(note.text)
            outcome = OUTCOME_PREEMPTED
            break
        try:
            action, result = step(state, provider, stores, profile, frame_key=key)
        except (ProviderSchemaError, ContextOverflow) as exc:
            log.warning("aborting investigation, provider unusable: %s", exc)
            outcome = OUTCOME_BUDGET
            break
        if result.terminal:
            outcome = OUTCOME_COMPLETED
            break
        if _decisive_hypothesis(stores, key, budgets.q_star):
            outcome = OUTCOME_DECISIVE
            break
        compress_memory(state, budgets.tau, profile.context_limit, budgets.kappa,
                        provider, stores, profile)
        _write_status(stores, inv.goal, phase, state, cfg, None)

    frame_status = {
        OUTCOME_COMPLETED: "done",
        OUTCOME_DECISIVE: "done",
        OUTCOME_PREEMPTED: "superseeded",
        OUTCOME_BUDGET: "dropped",
    }[outcome]
    stores.plan_store.set_status(key, frame_status)
    _write_status(stores, inv.goal, phase, state, cfg, outcome)
    return outcome


# --- finalizer (QA) ---------------------------------------------------------------


def finalize_session(
    hyp_store: HypothesisStore,
    manifest: Manifest,
    provider: Provider,
    profile: ModelProfile,
    file_cap: int = 10,
) -> list[tuple[str, str]]:
    """QA pass over every non-final hypothesis; returns (id, verdict) pairs.

    Loads the hypothesis's source files (the ones named in its properties
    first) up to *file_cap*, asks the QA profile for a verdict, and applies
    it.  A provider failure leaves the hypothesis untouched and records an
    ``uncertain-skip``.
    """
    repo_root = Path(manifest.repo_root)
    results: list[tuple[str, str]] = []
    for h in hyp_store.all():
        if h.status in ("confirmed", "rejected"):
            continue
        tracked = {e.relpath for e in manifest.files}
        named = [f for f in h.properties.get("source_files", []) if f in tracked]
        file_blocks = []
        for rel in named[:file_cap]:
            try:
                text = (repo_root / rel).read_text(encoding="utf-8", errors="replace")
            except OSError as exc:
                file_blocks.append(f"// {rel}: unreadable ({exc})")
                continue
            file_blocks.append(f"// {rel}\n{text}")
        evidence_lines = [
            f"- {e['stance']}: {e['note']} (card {e['card_id']})" for e in h.evidence
        ] or ["(none)"]
        sections = (
            "You are the QA reviewer of a code audit. Decide whether this "
            "hypothesis is real. Reply with one Verdict JSON object "
            "{\"verdict\": \"confirmed\"|\"rejected\"|\"uncertain\", \"reasoning\"}.",
            f"Hypothesis: {h.title}\ntype: {h.vuln_type}  severity: {h.severity}  "
            f"q={h.confidence:.2f}  status={h.status}\nreasoning: {h.reasoning}",
            "Evidence:\n" + "\n".join(evidence_lines),
            "Relevant source files:\n" + ("\n\n".join(file_blocks) or "(none available)"),
        )
        try:
            verdict = complete_structured(
                StructuredRequest("Verdict", sections, profile), provider
            ).data
        except (ProviderSchemaError, ContextOverflow) as exc:
            log.warning("finalizer skipped %s: %s", h.id, exc)
            results.append((h.id, "uncertain-skip"))
            continue
        hyp_store.finalize_verdict(h.id, verdict.verdict, verdict.reasoning)
        results.append((h.id, verdict.verdict))
    return results
