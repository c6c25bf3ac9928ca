"""Coverage accounting and the two-phase planner.

The planner sweeps for breadth (``coverage`` phase) until visit coverage p
reaches the configured threshold, then pivots to saliency-driven deep dives
(``intuition`` phase).  Selection itself is delegated to the strategist
model under phase-specific prompts; this module enforces the structural
guardrails: the phase rule, schema validation, the no-repeat check against
the session plan store and the project-wide ledger, and the result cap.
"""

from __future__ import annotations

import hashlib
import logging
import string
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from . import storage
from .beliefs import HypothesisStore, normalize_title
from .errors import EmptyUniverse
from .graph_store import GraphRecord
from .provider import ModelProfile, Provider, StructuredRequest, complete_structured
from .schemas import Critique, HypothesisCandidate, Investigation

log = logging.getLogger(__name__)

PHASE_COVERAGE = "coverage"
PHASE_INTUITION = "intuition"

FRAME_STATUSES = ("planned", "in_progress", "done", "dropped", "superseeded")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# --- coverage index -----------------------------------------------------------


@dataclass
class CoverageConfig:
    w_nodes: float = 0.5
    w_cards: float = 0.5
    p0: float = 0.5
    p_star: float = 0.9
    q_star: float = 0.85

    def __post_init__(self) -> None:
        if abs(self.w_nodes + self.w_cards - 1.0) > 1e-9 or self.w_nodes < 0 or self.w_cards < 0:
            raise ValueError("node/card weights must be non-negative and sum to 1")
        if not (0.0 <= self.p0 < self.p_star <= 1.0):
            raise ValueError("need 0 <= p0 < p_star <= 1")


@dataclass
class CoverageIndex:
    # graph -> node id -> {"count", "last_visited"}; card id -> same
    node_visits: dict[str, dict[str, dict]] = field(default_factory=dict)
    card_visits: dict[str, dict] = field(default_factory=dict)

    def visited_nodes(self) -> int:
        return sum(
            1 for nodes in self.node_visits.values()
            for entry in nodes.values() if entry.get("count", 0) > 0
        )

    def visited_cards(self) -> int:
        return sum(1 for entry in self.card_visits.values() if entry.get("count", 0) > 0)

    def node_count(self, graph: str, node_id: str) -> int:
        return self.node_visits.get(graph, {}).get(node_id, {}).get("count", 0)

    def card_count(self, card_id: str) -> int:
        return self.card_visits.get(card_id, {}).get("count", 0)

    def to_payload(self) -> dict:
        return {"node_visits": self.node_visits, "card_visits": self.card_visits}

    @classmethod
    def from_payload(cls, p: dict) -> "CoverageIndex":
        return cls(node_visits=dict(p.get("node_visits", {})),
                   card_visits=dict(p.get("card_visits", {})))


def record_visit(
    idx: CoverageIndex,
    graph: str,
    node_ids: Iterable[str] = (),
    card_ids: Iterable[str] = (),
) -> CoverageIndex:
    """Increment visit counters (by one each) and refresh timestamps."""
    now = _now()
    for nid in node_ids:
        entry = idx.node_visits.setdefault(graph, {}).setdefault(nid, {"count": 0})
        entry["count"] += 1
        entry["last_visited"] = now
    for cid in card_ids:
        entry = idx.card_visits.setdefault(cid, {"count": 0})
        entry["count"] += 1
        entry["last_visited"] = now
    return idx


def coverage(idx: CoverageIndex, total_nodes: int, total_cards: int,
             cfg: CoverageConfig) -> float:
    """Weighted fraction of distinct nodes and cards visited at least once."""
    if total_nodes <= 0 or total_cards <= 0:
        raise EmptyUniverse("coverage needs a non-empty node and card universe")
    node_frac = min(1.0, idx.visited_nodes() / total_nodes)
    card_frac = min(1.0, idx.visited_cards() / total_cards)
    return cfg.w_nodes * node_frac + cfg.w_cards * card_frac


def mixing(p: float, cfg: CoverageConfig) -> float:
    """Coverage->intuition mixing coefficient, clamped to [0, 1]."""
    return min(1.0, max(0.0, (p - cfg.p0) / (cfg.p_star - cfg.p0)))


def select_phase(p: float, cfg: CoverageConfig, override: str | None = None) -> str:
    """Coverage strictly below p_star, intuition at or above; override wins."""
    if override is not None:
        if override not in (PHASE_COVERAGE, PHASE_INTUITION):
            raise ValueError(f"unknown phase override {override!r}")
        return override
    return PHASE_COVERAGE if p < cfg.p_star else PHASE_INTUITION


class CoverageStore:
    """Atomic file-backed coverage index (``coverage.json``)."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def read(self) -> CoverageIndex:
        return CoverageIndex.from_payload(storage.read_store(self.path, {}))

    def record_visit(self, graph: str, node_ids: Iterable[str] = (),
                     card_ids: Iterable[str] = ()) -> CoverageIndex:
        out = {}

        def xf(payload: dict) -> dict:
            idx = CoverageIndex.from_payload(payload or {})
            record_visit(idx, graph, node_ids, card_ids)
            out["idx"] = idx
            return idx.to_payload()

        storage.atomic_update(self.path, xf, default={})
        return out["idx"]


def per_graph_visited_fraction(idx: CoverageIndex, graphs: Iterable[GraphRecord]) -> dict[str, float]:
    out = {}
    for g in graphs:
        if not g.nodes:
            out[g.name] = 0.0
            continue
        visited = sum(1 for nid in g.nodes if idx.node_count(g.name, nid) > 0)
        out[g.name] = min(1.0, visited / len(g.nodes))
    return out


# --- plan frames ----------------------------------------------------------------

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_frame(frame: "Investigation | PlanFrame") -> str:
    """Stable key over the frame's question and artifact refs.

    Casefolds, strips punctuation, and collapses whitespace in the goal, then
    hashes it together with the sorted focus areas.
    """
    goal = " ".join(frame.goal.casefold().translate(_PUNCT_TABLE).split())
    blob = goal + "\x1f" + "\x1f".join(sorted(frame.focus_areas))
    return "frame_" + hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class PlanFrame:
    goal: str
    category: str = ""
    focus_areas: list[str] = field(default_factory=list)
    status: str = "planned"
    history: list[dict] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "goal": self.goal, "category": self.category,
            "focus_areas": list(self.focus_areas),
            "status": self.status, "history": list(self.history),
        }

    @classmethod
    def from_payload(cls, p: dict) -> "PlanFrame":
        return cls(goal=p["goal"], category=p.get("category", ""),
                   focus_areas=list(p.get("focus_areas", [])),
                   status=p.get("status", "planned"),
                   history=list(p.get("history", [])))

    @classmethod
    def from_investigation(cls, inv: Investigation, status: str = "planned") -> "PlanFrame":
        return cls(goal=inv.goal, category=inv.category,
                   focus_areas=list(inv.focus_areas), status=status)


class PlanStore:
    """Per-session plan frames (``sessions/<sid>/plan.json``: key -> frame)."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def frames(self) -> dict[str, PlanFrame]:
        payload = storage.read_store(self.path, {})
        return {k: PlanFrame.from_payload(v) for k, v in payload.items()}

    def keys(self) -> set[str]:
        return set(storage.read_store(self.path, {}))

    def record(self, frame: PlanFrame) -> str:
        key = normalize_frame(frame)

        def xf(payload: dict) -> dict:
            payload = dict(payload or {})
            if key not in payload:
                frame.history = [{"status": frame.status, "at": _now()}]
                payload[key] = frame.to_payload()
            return payload

        storage.atomic_update(self.path, xf, default={})
        return key

    def set_status(self, key: str, status: str) -> PlanFrame:
        if status not in FRAME_STATUSES:
            raise ValueError(f"status must be one of {FRAME_STATUSES}")
        out = {}

        def xf(payload: dict) -> dict:
            payload = dict(payload or {})
            if key not in payload:
                raise KeyError(f"no plan frame {key}")
            frame = PlanFrame.from_payload(payload[key])
            frame.status = status
            frame.history.append({"status": status, "at": _now()})
            payload[key] = frame.to_payload()
            out["frame"] = frame
            return payload

        storage.atomic_update(self.path, xf, default={})
        return out["frame"]


def _ledger_bump(payload: dict, key: str, goal: str, session_id: str, model: str) -> dict:
    entry = dict(payload.get(key) or {
        "normalized_key": key, "goal": goal, "count": 0, "sessions": [], "models": [],
    })
    entry["count"] += 1
    if session_id and session_id not in entry["sessions"]:
        entry["sessions"] = entry["sessions"] + [session_id]
    if model and model not in entry["models"]:
        entry["models"] = entry["models"] + [model]
    payload[key] = entry
    return entry


class PlanLedger:
    """Project-wide record of proposed frames (``plan_ledger.json``)."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def entries(self) -> dict[str, dict]:
        return storage.read_store(self.path, {})

    def keys(self) -> set[str]:
        return set(self.entries())

    def record(self, key: str, goal: str, session_id: str, model: str) -> dict:
        """Count one recorded proposal of *key*; entries never expire."""
        out = {}

        def xf(payload: dict) -> dict:
            payload = dict(payload or {})
            out["entry"] = _ledger_bump(payload, key, goal, session_id, model)
            return payload

        storage.atomic_update(self.path, xf, default={})
        return out["entry"]


# --- strategist calls -------------------------------------------------------------


@dataclass(frozen=True)
class GraphsView:
    """Graph-only context for the strategist: structure, no code content."""

    text: str
    total_nodes: int
    total_cards: int
    graph_names: tuple[str, ...]


def build_graphs_view(graphs: Iterable[GraphRecord], total_cards: int) -> GraphsView:
    ordered = sorted(graphs, key=lambda g: g.name)
    parts = []
    for g in ordered:
        lines = [f"## Graph {g.name} (focus: {g.focus or 'general'}) — "
                 f"{len(g.nodes)} nodes, {len(g.edges)} edges"]
        for nid in sorted(g.nodes):
            node = g.nodes[nid]
            lines.append(f"- node {nid} [{node.node_type}] {node.label}")
            if node.description:
                lines.append(f"    desc: {node.description}")
            for obs in node.observations:
                lines.append(f"    obs: {obs}")
            for assumption in node.assumptions:
                lines.append(f"    assume: {assumption}")
        for e in g.edges:
            lines.append(f"- edge {e.src} -[{e.edge_type}]-> {e.dst}")
        parts.append("\n".join(lines))
    return GraphsView(
        text="\n\n".join(parts) if parts else "(no graphs built)",
        total_nodes=sum(len(g.nodes) for g in ordered),
        total_cards=total_cards,
        graph_names=tuple(g.name for g in ordered),
    )


_PHASE_GUIDANCE = {
    PHASE_COVERAGE: (
        "Phase: COVERAGE (systematic sweep). Prefer previously unvisited, "
        "medium-granularity components; prioritize broadly useful or "
        "high-impact areas; do not repeat prior frames."
    ),
    PHASE_INTUITION: (
        "Phase: INTUITION (saliency deep dives). Prefer contradictions between "
        "assumptions and observations, high value at risk, cross-component "
        "interactions, and novelty versus existing hypotheses and plans."
    ),
}


def plan_next(
    graphs_view: GraphsView,
    cfg: CoverageConfig,
    idx: CoverageIndex,
    hyp_summary: str,
    plan_store: PlanStore,
    ledger: PlanLedger,
    n: int,
    provider: Provider,
    profile: ModelProfile,
    session_id: str = "",
    phase_override: str | None = None,
    steering_notes: Iterable[str] = (),
) -> list[Investigation]:
    """Ask the strategist for up to *n* new investigations.

    Frames already present in the session plan store or the project ledger
    are dropped; survivors are recorded in both before being returned,
    sorted by priority descending.
    """
    if n <= 0:
        return []
    try:
        p = coverage(idx, graphs_view.total_nodes, graphs_view.total_cards, cfg)
    except EmptyUniverse:
        p = 0.0
    lam = mixing(p, cfg)
    phase = select_phase(p, cfg, phase_override)
    log.info("plan_next: p=%.3f lambda=%.3f phase=%s", p, lam, phase)

    known_goals = sorted(
        {f.goal for f in plan_store.frames().values()}
        | {e.get("goal", "") for e in ledger.entries().values()}
    )
    sections = [
        "You are the strategist of a code audit. Propose the next investigations "
        "as one InvestigationBatch JSON object: {\"investigations\": [{goal, "
        "category, focus_areas, priority (1-10), expected_impact (high|med|low), "
        "reasoning, why_now, exit_criteria}]}.",
        _PHASE_GUIDANCE[phase],
        f"Coverage: p={p:.3f} (mixing {lam:.3f}); "
        f"{idx.visited_nodes()}/{graphs_view.total_nodes} nodes and "
        f"{idx.visited_cards()}/{graphs_view.total_cards} cards visited.",
        graphs_view.text,
        "Existing hypotheses:\n" + hyp_summary,
    ]
    notes = [t for t in steering_notes if t.strip()]
    if notes:
        sections.append("Steering notes from the human lead:\n" +
                        "\n".join(f"- {t}" for t in notes))
    if known_goals:
        sections.append("Do not repeat these already-planned frames:\n" +
                        "\n".join(f"- {g}" for g in known_goals if g))
    sections.append(f"Return at most {n} investigations.")

    response = complete_structured(
        StructuredRequest("InvestigationBatch", tuple(sections), profile), provider
    )
    items: list[Investigation] = sorted(
        response.data.investigations, key=lambda i: -i.priority
    )

    session_keys = plan_store.keys()
    survivors: list[tuple[str, Investigation]] = []
    seen: set[str] = set()

    def xf(payload: dict) -> dict:
        # No-repeat check re-reads the ledger inside its own transaction.
        payload = dict(payload or {})
        for inv in items:
            if len(survivors) >= n:
                break
            key = normalize_frame(inv)
            if key in seen or key in session_keys or key in payload:
                continue
            seen.add(key)
            _ledger_bump(payload, key, inv.goal, session_id, profile.name)
            survivors.append((key, inv))
        return payload

    storage.atomic_update(ledger.path, xf, default={})
    for _key, inv in survivors:
        plan_store.record(PlanFrame.from_investigation(inv, status="planned"))
    return [inv for _key, inv in survivors]


def deep_think(
    graphs_view: GraphsView,
    hyp_store: HypothesisStore,
    provider: Provider,
    two_pass: bool = False,
    *,
    profile: ModelProfile,
    provider_dedup: bool = False,
) -> list[HypothesisCandidate]:
    """Generate hypothesis candidates from graph-only context.

    Candidates whose normalized title matches an existing hypothesis are
    filtered locally.  With *two_pass*, a critique call may remove items (the
    result is always a subset of the first batch); *provider_dedup* adds a
    model-assisted near-duplicate filter whose quality is not asserted.
    """
    sections = [
        "You are the strategist of a code audit. Emit vulnerability hypothesis "
        "candidates as one HypothesisBatch JSON object: {\"candidates\": "
        "[{title, vuln_type, severity, confidence, node_ids, reasoning}]}.",
        graphs_view.text,
        "Existing hypotheses:\n" + hyp_store.summarize_for_context(),
    ]
    response = complete_structured(
        StructuredRequest("HypothesisBatch", tuple(sections), profile), provider
    )
    existing = hyp_store.titles_normalized()
    candidates: list[HypothesisCandidate] = []
    seen_titles: set[str] = set()
    for c in response.data.candidates:
        norm = normalize_title(c.title)
        if norm in existing or norm in seen_titles:
            continue
        seen_titles.add(norm)
        candidates.append(c)

    def critique(purpose: str, pool: list[HypothesisCandidate]) -> list[HypothesisCandidate]:
        listing = "\n".join(f"- {c.title} ({c.vuln_type}, {c.severity}, q={c.confidence})"
                            for c in pool)
        req = StructuredRequest(
            "Critique",
            (purpose,
             "Candidates:\n" + listing,
             "Reply with one Critique JSON object: {\"keep_titles\": [..]} listing "
             "only the titles to keep."),
            profile,
        )
        keep = {normalize_title(t) for t in complete_structured(req, provider).data.keep_titles}
        return [c for c in pool if normalize_title(c.title) in keep]

    if two_pass and candidates:
        candidates = critique(
            "Self-critique the candidate list below; keep only well-grounded items.",
            candidates,
        )
    if provider_dedup and candidates:
        existing_titles = "\n".join(f"- {h.title}" for h in hyp_store.all())
        candidates = critique(
            "Remove candidates that duplicate these existing hypotheses "
            "(paraphrases included):\n" + existing_titles,
            candidates,
        )
    return candidates
