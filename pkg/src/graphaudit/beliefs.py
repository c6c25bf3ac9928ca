"""Persistent vulnerability hypotheses with confidence and a status machine.

A hypothesis is long-lived: it survives sessions, accumulates evidence, and
moves through ``proposed -> investigating -> supported/refuted`` before a QA
verdict lands it on ``confirmed`` (q = 1.0) or ``rejected`` (q = 0.0).
Confidence dropping to q <= 0.1 also rejects, but only a QA verdict makes a
record immutable.  All mutations go through the shared atomic file store, so
concurrent sessions safely share one belief set.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from . import storage
from .errors import Finalized, RangeError, UnknownHypothesis, ValidationError
from .graph_store import GraphRecord
from .ingest import Card
from .schemas import SEVERITIES, STANCES, VERDICTS, HypothesisCandidate

STATUSES = ("proposed", "investigating", "supported", "refuted", "confirmed", "rejected")

REJECT_THRESHOLD = 0.1


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def normalize_title(title: str) -> str:
    return " ".join(title.casefold().split())


def hypothesis_id(title: str) -> str:
    digest = hashlib.sha256(normalize_title(title).encode("utf-8")).hexdigest()
    return "hyp_" + digest[:12]


@dataclass
class Hypothesis:
    id: str
    title: str
    vuln_type: str
    severity: str
    confidence: float
    status: str = "proposed"
    node_refs: list[tuple[str, str]] = field(default_factory=list)  # (graph, node id)
    evidence: list[dict] = field(default_factory=list)              # append-only
    reasoning: str = ""
    properties: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    created_by: str = ""
    session_id: str = ""
    finalized: bool = False
    verdict: str | None = None
    verdict_reasoning: str | None = None
    created_at: str = ""
    updated_at: str = ""

    def to_payload(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "vuln_type": self.vuln_type,
            "severity": self.severity,
            "confidence": self.confidence,
            "status": self.status,
            "node_refs": [list(r) for r in self.node_refs],
            "evidence": list(self.evidence),
            "reasoning": self.reasoning,
            "properties": dict(self.properties),
            "notes": list(self.notes),
            "created_by": self.created_by,
            "session_id": self.session_id,
            "finalized": self.finalized,
            "verdict": self.verdict,
            "verdict_reasoning": self.verdict_reasoning,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_payload(cls, p: dict) -> "Hypothesis":
        return cls(
            id=p["id"], title=p["title"], vuln_type=p["vuln_type"],
            severity=p["severity"], confidence=p["confidence"], status=p["status"],
            node_refs=[tuple(r) for r in p.get("node_refs", [])],
            evidence=list(p.get("evidence", [])),
            reasoning=p.get("reasoning", ""),
            properties=dict(p.get("properties", {})),
            notes=list(p.get("notes", [])),
            created_by=p.get("created_by", ""),
            session_id=p.get("session_id", ""),
            finalized=p.get("finalized", False),
            verdict=p.get("verdict"),
            verdict_reasoning=p.get("verdict_reasoning"),
            created_at=p.get("created_at", ""),
            updated_at=p.get("updated_at", ""),
        )


def _validate_candidate(candidate: HypothesisCandidate) -> None:
    if not candidate.title.strip():
        raise ValidationError("candidate title must be non-empty")
    if candidate.severity not in SEVERITIES:
        raise ValidationError(f"severity must be one of {SEVERITIES}")
    if not 0.0 <= candidate.confidence <= 1.0:
        raise ValidationError("confidence must lie in [0, 1]")


def _resolve_node_refs(
    node_ids: Iterable[str], graphs: list[GraphRecord] | None
) -> list[tuple[str, str]]:
    refs: list[tuple[str, str]] = []
    by_name = {g.name: g for g in (graphs or [])}
    for nid in node_ids:
        graph_name, _, bare = nid.partition(":")
        if bare and graph_name in by_name and bare in by_name[graph_name].nodes:
            refs.append((graph_name, bare))
            continue
        placed = False
        for g in sorted(by_name.values(), key=lambda g: g.name):
            if nid in g.nodes:
                refs.append((g.name, nid))
                placed = True
                break
        if not placed:
            refs.append(("", nid))
    return refs


def _derive_properties(
    node_refs: list[tuple[str, str]],
    graphs: list[GraphRecord] | None,
    cards_by_id: dict[str, Card] | None,
) -> dict:
    by_name = {g.name: g for g in (graphs or [])}
    graph_names: list[str] = []
    files: list[str] = []
    functions: list[str] = []
    for graph_name, nid in node_refs:
        g = by_name.get(graph_name)
        if g is None or nid not in g.nodes:
            continue
        if graph_name not in graph_names:
            graph_names.append(graph_name)
        node = g.nodes[nid]
        if node.label and node.label not in functions:
            functions.append(node.label)
        for ref in node.source_refs:
            card = (cards_by_id or {}).get(ref)
            if card is not None and card.relpath not in files:
                files.append(card.relpath)
    return {
        "graphs": sorted(graph_names),
        "source_files": files,
        "affected_functions": functions,
    }


class HypothesisStore:
    """File-backed hypothesis map (``hypotheses.json``: id -> Hypothesis)."""

    def __init__(self, path: Path):
        self.path = Path(path)

    # -- reads ---------------------------------------------------------------

    def _payloads(self) -> dict:
        return storage.read_store(self.path, {})

    def get(self, hyp_id: str) -> Hypothesis:
        payloads = self._payloads()
        if hyp_id not in payloads:
            raise UnknownHypothesis(hyp_id)
        return Hypothesis.from_payload(payloads[hyp_id])

    def all(self) -> list[Hypothesis]:
        payloads = self._payloads()
        return [Hypothesis.from_payload(payloads[k]) for k in sorted(payloads)]

    def titles_normalized(self) -> set[str]:
        return {normalize_title(h.title) for h in self.all()}

    # -- lifecycle -----------------------------------------------------------

    def propose(
        self,
        candidate: HypothesisCandidate,
        created_by: str,
        session_id: str,
        graphs: list[GraphRecord] | None = None,
        cards_by_id: dict[str, Card] | None = None,
        frame_key: str | None = None,
    ) -> tuple[str, bool]:
        """Create a hypothesis, or merge node refs into the title-duplicate.

        Duplicate detection normalizes the title (casefold, collapsed
        whitespace); the second proposal of a title never creates.
        Returns ``(id, created)``.
        """
        _validate_candidate(candidate)
        hyp_id = hypothesis_id(candidate.title)
        node_refs = _resolve_node_refs(candidate.node_ids, graphs)
        created = {}

        def xf(payloads: dict) -> dict:
            now = _now()
            if hyp_id in payloads:
                h = Hypothesis.from_payload(payloads[hyp_id])
                merged = list(h.node_refs)
                for r in node_refs:
                    if r not in merged:
                        merged.append(r)
                h.node_refs = merged
                h.updated_at = now
                created["flag"] = False
            else:
                h = Hypothesis(
                    id=hyp_id,
                    title=candidate.title,
                    vuln_type=candidate.vuln_type,
                    severity=candidate.severity,
                    confidence=candidate.confidence,
                    status="proposed",
                    node_refs=node_refs,
                    reasoning=candidate.reasoning,
                    properties=_derive_properties(node_refs, graphs, cards_by_id),
                    created_by=created_by,
                    session_id=session_id,
                    created_at=now,
                    updated_at=now,
                )
                if frame_key:
                    h.properties["frame_key"] = frame_key
                created["flag"] = True
            payloads = dict(payloads)
            payloads[hyp_id] = h.to_payload()
            return payloads

        storage.atomic_update(self.path, xf, default={})
        return hyp_id, created["flag"]

    def _mutate(self, hyp_id: str, fn) -> Hypothesis:
        out = {}

        def xf(payloads: dict) -> dict:
            if hyp_id not in payloads:
                raise UnknownHypothesis(hyp_id)
            h = Hypothesis.from_payload(payloads[hyp_id])
            fn(h)
            h.updated_at = _now()
            payloads = dict(payloads)
            payloads[hyp_id] = h.to_payload()
            out["h"] = h
            return payloads

        storage.atomic_update(self.path, xf, default={})
        return out["h"]

    def add_evidence(self, hyp_id: str, card_id: str, note: str, stance: str) -> Hypothesis:
        """Append evidence and recompute the heuristic status.

        More refuting than supporting entries -> refuted; at least two
        supporting and no refuting majority -> supported; anything else ->
        investigating.
        """
        if stance not in STANCES:
            raise ValidationError(f"stance must be one of {STANCES}")

        def fn(h: Hypothesis) -> None:
            if h.finalized or h.status in ("confirmed", "rejected"):
                raise Finalized(f"{hyp_id} is {h.status}; evidence is closed")
            h.evidence.append({
                "card_id": card_id, "note": note, "stance": stance, "added_at": _now(),
            })
            supporting = sum(1 for e in h.evidence if e["stance"] == "supports")
            refuting = sum(1 for e in h.evidence if e["stance"] == "refutes")
            if refuting > supporting:
                h.status = "refuted"
            elif supporting >= 2 and supporting >= refuting:
                h.status = "supported"
            else:
                h.status = "investigating"

        return self._mutate(hyp_id, fn)

    def adjust_confidence(self, hyp_id: str, q_new: float) -> Hypothesis:
        """Set confidence; q <= 0.1 additionally marks the record rejected."""
        if not 0.0 <= q_new <= 1.0:
            raise RangeError(f"confidence {q_new} outside [0, 1]")

        def fn(h: Hypothesis) -> None:
            if h.finalized:
                raise Finalized(f"{hyp_id} carries a verdict; confidence is frozen")
            h.confidence = q_new
            if q_new <= REJECT_THRESHOLD:
                h.status = "rejected"

        return self._mutate(hyp_id, fn)

    def finalize_verdict(self, hyp_id: str, verdict: str, reasoning: str) -> Hypothesis:
        """Apply a QA verdict.

        confirmed -> (confirmed, q=1.0) and rejected -> (rejected, q=0.0),
        both immutable afterwards; uncertain leaves status and confidence
        untouched and appends the reasoning as an explanatory note.
        """
        if verdict not in VERDICTS:
            raise ValidationError(f"verdict must be one of {VERDICTS}")

        def fn(h: Hypothesis) -> None:
            h.verdict = verdict
            h.verdict_reasoning = reasoning
            if verdict == "confirmed":
                h.status = "confirmed"
                h.confidence = 1.0
                h.finalized = True
            elif verdict == "rejected":
                h.status = "rejected"
                h.confidence = 0.0
                h.finalized = True
            else:
                if reasoning:
                    h.notes.append(reasoning)

        return self._mutate(hyp_id, fn)

    # -- rendering -----------------------------------------------------------

    def summarize_for_context(self) -> str:
        """Deterministic summary grouped by vuln_type, for prompt context."""
        items = self.all()
        if not items:
            return "(no hypotheses)"
        by_type: dict[str, list[Hypothesis]] = {}
        for h in items:
            by_type.setdefault(h.vuln_type, []).append(h)
        lines = []
        for vuln_type in sorted(by_type):
            lines.append(f"{vuln_type}:")
            for h in sorted(by_type[vuln_type], key=lambda x: x.title):
                lines.append(f"- {h.title} [status={h.status}, q={h.confidence:.2f}]")
        return "\n".join(lines)
