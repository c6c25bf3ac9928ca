"""Report generation: confirmed findings, optionally open items.

The report is a pure function of the hypothesis store plus the card/ingest
stores (used only to render evidence refs as ``relpath:[cs,ce)``), so two
runs over identical stores produce identical bytes.  A human-readable
markdown document and a machine JSON document are written side by side.
"""

from __future__ import annotations

from pathlib import Path

from . import storage
from .beliefs import Hypothesis, HypothesisStore
from .graph_store import load_card_store
from .ingest import load_cards
from .project import ProjectLayout
from .schemas import SEVERITIES

OPEN_STATUSES = ("investigating", "supported")


def severity_rank(severity: str) -> int:
    return SEVERITIES.index(severity) if severity in SEVERITIES else len(SEVERITIES)


def _card_ref_index(project: ProjectLayout) -> dict[str, str]:
    refs = {}
    for card in load_cards(project):
        refs[card.id] = f"{card.relpath}:[{card.char_start},{card.char_end})"
    for cid, sc in load_card_store(project.card_store_path).items():
        refs[cid] = f"{sc.relpath}:[{sc.char_start},{sc.char_end})"
    return refs


def _finding_payload(h: Hypothesis, refs: dict[str, str]) -> dict:
    return {
        "id": h.id,
        "title": h.title,
        "vuln_type": h.vuln_type,
        "severity": h.severity,
        "confidence": h.confidence,
        "status": h.status,
        "affected_files": list(h.properties.get("source_files", [])),
        "affected_functions": list(h.properties.get("affected_functions", [])),
        "reasoning": h.reasoning,
        "verdict_reasoning": h.verdict_reasoning,
        "evidence": [
            {
                "card_id": e["card_id"],
                "ref": refs.get(e["card_id"], e["card_id"]),
                "stance": e["stance"],
                "note": e["note"],
            }
            for e in h.evidence
        ],
    }


def generate_report(project: ProjectLayout, include_open: bool = False) -> dict:
    """Build the report document: confirmed findings, severity-then-title order."""
    store = HypothesisStore(project.hypotheses_path)
    refs = _card_ref_index(project)
    ordered = sorted(store.all(), key=lambda h: (severity_rank(h.severity), h.title))
    payload = {
        "findings": [_finding_payload(h, refs) for h in ordered if h.status == "confirmed"],
        "open_items": (
            [_finding_payload(h, refs) for h in ordered if h.status in OPEN_STATUSES]
            if include_open else []
        ),
        "include_open": include_open,
    }
    return payload


def render_markdown(payload: dict) -> str:
    lines = ["# Audit report", "", "## Confirmed findings", ""]
    if not payload["findings"]:
        lines.append("(none)")
        lines.append("")
    for f in payload["findings"]:
        lines.append(f"### [{f['severity'].upper()}] {f['title']}")
        lines.append("")
        lines.append(f"- type: {f['vuln_type']}")
        lines.append(f"- confidence: {f['confidence']:.2f}")
        if f["affected_files"]:
            lines.append(f"- affected files: {', '.join(f['affected_files'])}")
        if f["affected_functions"]:
            lines.append(f"- affected functions: {', '.join(f['affected_functions'])}")
        if f["reasoning"]:
            lines.append(f"- reasoning: {f['reasoning']}")
        if f["verdict_reasoning"]:
            lines.append(f"- QA verdict: {f['verdict_reasoning']}")
        if f["evidence"]:
            lines.append("- evidence:")
            for e in f["evidence"]:
                note = f" — {e['note']}" if e["note"] else ""
                lines.append(f"  - {e['ref']} ({e['stance']}){note}")
        lines.append("")
    if payload["include_open"]:
        lines.append("## Open items")
        lines.append("")
        if not payload["open_items"]:
            lines.append("(none)")
            lines.append("")
        for f in payload["open_items"]:
            lines.append(f"- [{f['severity']}] {f['title']} "
                         f"(status={f['status']}, q={f['confidence']:.2f})")
        if payload["open_items"]:
            lines.append("")
    return "\n".join(lines)


def write_report(project: ProjectLayout, include_open: bool = False) -> tuple[Path, Path]:
    payload = generate_report(project, include_open)
    project.report_dir.mkdir(parents=True, exist_ok=True)
    md_path = project.report_dir / "report.md"
    json_path = project.report_dir / "findings.json"
    storage.write_bytes_atomic(md_path, render_markdown(payload).encode("utf-8"))
    storage.write_bytes_atomic(json_path, storage.dump_json(payload).encode("utf-8"))
    return md_path, json_path
