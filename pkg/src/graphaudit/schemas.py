"""Structured response schemas for model calls.

Every provider response is a JSON object validated against one of these
schemas before any engine code touches it.  Validation is strict: required
fields must be present, unknown fields are rejected, and enum/range
constraints are enforced here rather than downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import SchemaValidationError

SEVERITIES = ("critical", "high", "medium", "low", "info")
IMPACTS = ("high", "med", "low")
STANCES = ("supports", "refutes", "neutral")
ACTION_KINDS = (
    "load_graph", "load_nodes", "update_node",
    "form_hypothesis", "update_hypothesis", "complete",
)
VERDICTS = ("confirmed", "rejected", "uncertain")

SYSTEM_GRAPH_NAME = "SystemArchitecture"


def _check_fields(payload: Any, schema: str, required: dict, optional: dict) -> dict:
    """Return payload with defaults filled; reject non-dicts, missing, unknown."""
    if not isinstance(payload, dict):
        raise SchemaValidationError(f"{schema}: expected object, got {type(payload).__name__}")
    unknown = set(payload) - set(required) - set(optional)
    if unknown:
        raise SchemaValidationError(f"{schema}: unknown fields {sorted(unknown)}")
    missing = [k for k in required if k not in payload]
    if missing:
        raise SchemaValidationError(f"{schema}: missing fields {missing}")
    out = dict(payload)
    for k, default in optional.items():
        out.setdefault(k, default() if callable(default) else default)
    return out


def _str(schema: str, name: str, value: Any, allow_empty: bool = True) -> str:
    if not isinstance(value, str) or (not allow_empty and not value.strip()):
        raise SchemaValidationError(f"{schema}: field '{name}' must be a non-empty string")
    return value


def _str_list(schema: str, name: str, value: Any) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaValidationError(f"{schema}: field '{name}' must be a list of strings")
    return list(value)


def _str_map(schema: str, name: str, value: Any) -> dict[str, str]:
    if not isinstance(value, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in value.items()
    ):
        raise SchemaValidationError(f"{schema}: field '{name}' must map strings to strings")
    return dict(value)


def _enum(schema: str, name: str, value: Any, allowed: tuple[str, ...]) -> str:
    if value not in allowed:
        raise SchemaValidationError(f"{schema}: field '{name}' must be one of {allowed}, got {value!r}")
    return value


def _unit_float(schema: str, name: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        raise SchemaValidationError(f"{schema}: field '{name}' must be a number in [0, 1]")
    return float(value)


# --- graph discovery and updates ---------------------------------------------


@dataclass(frozen=True)
class GraphSpec:
    name: str
    focus: str

    def to_payload(self) -> dict:
        return {"name": self.name, "focus": self.focus}


@dataclass(frozen=True)
class GraphDiscovery:
    graphs_needed: list[GraphSpec]
    suggested_node_types: list[str]
    suggested_edge_types: list[str]


@dataclass(frozen=True)
class NodeSpec:
    id: str
    type: str
    label: str
    refs: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class EdgeSpec:
    type: str
    src: str
    dst: str
    refs: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class NodeUpdate:
    id: str
    description: str | None = None
    properties: dict[str, str] | None = None
    new_observations: list[str] = field(default_factory=list)
    new_assumptions: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class GraphUpdate:
    target_graph: str
    new_nodes: list[NodeSpec] = field(default_factory=list)
    new_edges: list[EdgeSpec] = field(default_factory=list)
    node_updates: list[NodeUpdate] = field(default_factory=list)


def parse_graph_spec(payload: Any) -> GraphSpec:
    p = _check_fields(payload, "GraphSpec", {"name": str, "focus": str}, {})
    return GraphSpec(_str("GraphSpec", "name", p["name"], allow_empty=False),
                     _str("GraphSpec", "focus", p["focus"]))


def parse_graph_discovery(payload: Any) -> GraphDiscovery:
    p = _check_fields(
        payload, "GraphDiscovery",
        {"graphs_needed": list},
        {"suggested_node_types": list, "suggested_edge_types": list},
    )
    if not isinstance(p["graphs_needed"], list) or not p["graphs_needed"]:
        raise SchemaValidationError("GraphDiscovery: graphs_needed must be a non-empty list")
    return GraphDiscovery(
        graphs_needed=[parse_graph_spec(s) for s in p["graphs_needed"]],
        suggested_node_types=_str_list("GraphDiscovery", "suggested_node_types", p["suggested_node_types"]),
        suggested_edge_types=_str_list("GraphDiscovery", "suggested_edge_types", p["suggested_edge_types"]),
    )


def parse_node_spec(payload: Any) -> NodeSpec:
    p = _check_fields(payload, "NodeSpec", {"id": str, "type": str, "label": str}, {"refs": list})
    return NodeSpec(
        id=_str("NodeSpec", "id", p["id"], allow_empty=False),
        type=_str("NodeSpec", "type", p["type"], allow_empty=False),
        label=_str("NodeSpec", "label", p["label"]),
        refs=_str_list("NodeSpec", "refs", p["refs"]),
    )


def parse_edge_spec(payload: Any) -> EdgeSpec:
    p = _check_fields(payload, "EdgeSpec", {"type": str, "src": str, "dst": str}, {"refs": list})
    return EdgeSpec(
        type=_str("EdgeSpec", "type", p["type"], allow_empty=False),
        src=_str("EdgeSpec", "src", p["src"], allow_empty=False),
        dst=_str("EdgeSpec", "dst", p["dst"], allow_empty=False),
        refs=_str_list("EdgeSpec", "refs", p["refs"]),
    )


def parse_node_update(payload: Any) -> NodeUpdate:
    p = _check_fields(
        payload, "NodeUpdate", {"id": str},
        {"description": None, "properties": None, "new_observations": list, "new_assumptions": list},
    )
    description = p["description"]
    if description is not None:
        description = _str("NodeUpdate", "description", description)
    properties = p["properties"]
    if properties is not None:
        properties = _str_map("NodeUpdate", "properties", properties)
    return NodeUpdate(
        id=_str("NodeUpdate", "id", p["id"], allow_empty=False),
        description=description,
        properties=properties,
        new_observations=_str_list("NodeUpdate", "new_observations", p["new_observations"]),
        new_assumptions=_str_list("NodeUpdate", "new_assumptions", p["new_assumptions"]),
    )


def parse_graph_update(payload: Any) -> GraphUpdate:
    p = _check_fields(
        payload, "GraphUpdate", {"target_graph": str},
        {"new_nodes": list, "new_edges": list, "node_updates": list},
    )
    for name in ("new_nodes", "new_edges", "node_updates"):
        if not isinstance(p[name], list):
            raise SchemaValidationError(f"GraphUpdate: field '{name}' must be a list")
    return GraphUpdate(
        target_graph=_str("GraphUpdate", "target_graph", p["target_graph"], allow_empty=False),
        new_nodes=[parse_node_spec(n) for n in p["new_nodes"]],
        new_edges=[parse_edge_spec(e) for e in p["new_edges"]],
        node_updates=[parse_node_update(u) for u in p["node_updates"]],
    )


# --- hypotheses and investigations -------------------------------------------


@dataclass(frozen=True)
class HypothesisCandidate:
    title: str
    vuln_type: str
    severity: str
    confidence: float
    node_ids: list[str] = field(default_factory=list)
    reasoning: str = ""

    def to_payload(self) -> dict:
        return {
            "title": self.title,
            "vuln_type": self.vuln_type,
            "severity": self.severity,
            "confidence": self.confidence,
            "node_ids": list(self.node_ids),
            "reasoning": self.reasoning,
        }


def parse_hypothesis_candidate(payload: Any) -> HypothesisCandidate:
    p = _check_fields(
        payload, "HypothesisCandidate",
        {"title": str, "vuln_type": str, "severity": str, "confidence": float},
        {"node_ids": list, "reasoning": ""},
    )
    return HypothesisCandidate(
        title=_str("HypothesisCandidate", "title", p["title"], allow_empty=False),
        vuln_type=_str("HypothesisCandidate", "vuln_type", p["vuln_type"], allow_empty=False),
        severity=_enum("HypothesisCandidate", "severity", p["severity"], SEVERITIES),
        confidence=_unit_float("HypothesisCandidate", "confidence", p["confidence"]),
        node_ids=_str_list("HypothesisCandidate", "node_ids", p["node_ids"]),
        reasoning=_str("HypothesisCandidate", "reasoning", p["reasoning"]),
    )


@dataclass(frozen=True)
class Investigation:
    goal: str
    category: str
    focus_areas: list[str]
    priority: int
    expected_impact: str
    reasoning: str = ""
    why_now: str = ""
    exit_criteria: str = ""


def parse_investigation(payload: Any) -> Investigation:
    p = _check_fields(
        payload, "Investigation",
        {"goal": str, "category": str, "focus_areas": list, "priority": int, "expected_impact": str},
        {"reasoning": "", "why_now": "", "exit_criteria": ""},
    )
    priority = p["priority"]
    if isinstance(priority, bool) or not isinstance(priority, int) or not 1 <= priority <= 10:
        raise SchemaValidationError("Investigation: priority must be an integer in [1, 10]")
    return Investigation(
        goal=_str("Investigation", "goal", p["goal"], allow_empty=False),
        category=_str("Investigation", "category", p["category"]),
        focus_areas=_str_list("Investigation", "focus_areas", p["focus_areas"]),
        priority=priority,
        expected_impact=_enum("Investigation", "expected_impact", p["expected_impact"], IMPACTS),
        reasoning=_str("Investigation", "reasoning", p["reasoning"]),
        why_now=_str("Investigation", "why_now", p["why_now"]),
        exit_criteria=_str("Investigation", "exit_criteria", p["exit_criteria"]),
    )


@dataclass(frozen=True)
class InvestigationBatch:
    investigations: list[Investigation]


def parse_investigation_batch(payload: Any) -> InvestigationBatch:
    p = _check_fields(payload, "InvestigationBatch", {"investigations": list}, {})
    return InvestigationBatch([parse_investigation(i) for i in p["investigations"]])


@dataclass(frozen=True)
class HypothesisBatch:
    candidates: list[HypothesisCandidate]


def parse_hypothesis_batch(payload: Any) -> HypothesisBatch:
    p = _check_fields(payload, "HypothesisBatch", {"candidates": list}, {})
    return HypothesisBatch([parse_hypothesis_candidate(c) for c in p["candidates"]])


@dataclass(frozen=True)
class Critique:
    keep_titles: list[str]


def parse_critique(payload: Any) -> Critique:
    p = _check_fields(payload, "Critique", {"keep_titles": list}, {})
    return Critique(_str_list("Critique", "keep_titles", p["keep_titles"]))


# --- agent actions, verdicts, memory -----------------------------------------


@dataclass(frozen=True)
class EvidenceSpec:
    card_id: str
    note: str
    stance: str


def parse_evidence_spec(payload: Any) -> EvidenceSpec:
    p = _check_fields(payload, "Evidence", {"card_id": str, "note": str, "stance": str}, {})
    return EvidenceSpec(
        card_id=_str("Evidence", "card_id", p["card_id"], allow_empty=False),
        note=_str("Evidence", "note", p["note"]),
        stance=_enum("Evidence", "stance", p["stance"], STANCES),
    )


@dataclass(frozen=True)
class AgentAction:
    kind: str
    params: dict[str, Any]


def parse_agent_action(payload: Any) -> AgentAction:
    p = _check_fields(payload, "AgentAction", {"kind": str}, {"params": dict})
    kind = _enum("AgentAction", "kind", p["kind"], ACTION_KINDS)
    raw = p["params"]
    if not isinstance(raw, dict):
        raise SchemaValidationError("AgentAction: params must be an object")

    if kind == "load_graph":
        params = _check_fields(raw, "AgentAction.load_graph", {"graph": str}, {})
        params["graph"] = _str("AgentAction", "graph", params["graph"], allow_empty=False)
    elif kind == "load_nodes":
        params = _check_fields(raw, "AgentAction.load_nodes", {"graph": str, "node_ids": list}, {})
        params["graph"] = _str("AgentAction", "graph", params["graph"], allow_empty=False)
        params["node_ids"] = _str_list("AgentAction", "node_ids", params["node_ids"])
        if not params["node_ids"]:
            raise SchemaValidationError("AgentAction.load_nodes: node_ids must be non-empty")
    elif kind == "update_node":
        params = _check_fields(
            raw, "AgentAction.update_node",
            {"graph": str, "node_id": str}, {"observations": list, "assumptions": list},
        )
        params["graph"] = _str("AgentAction", "graph", params["graph"], allow_empty=False)
        params["node_id"] = _str("AgentAction", "node_id", params["node_id"], allow_empty=False)
        params["observations"] = _str_list("AgentAction", "observations", params["observations"])
        params["assumptions"] = _str_list("AgentAction", "assumptions", params["assumptions"])
    elif kind == "form_hypothesis":
        params = _check_fields(raw, "AgentAction.form_hypothesis", {"candidate": dict}, {})
        params["candidate"] = parse_hypothesis_candidate(params["candidate"])
    elif kind == "update_hypothesis":
        params = _check_fields(
            raw, "AgentAction.update_hypothesis", {"id": str}, {"q_new": None, "evidence": None},
        )
        params["id"] = _str("AgentAction", "id", params["id"], allow_empty=False)
        if params["q_new"] is None and params["evidence"] is None:
            raise SchemaValidationError(
                "AgentAction.update_hypothesis: needs q_new and/or evidence"
            )
        if params["q_new"] is not None:
            params["q_new"] = _unit_float("AgentAction", "q_new", params["q_new"])
        if params["evidence"] is not None:
            params["evidence"] = parse_evidence_spec(params["evidence"])
    else:  # complete
        params = _check_fields(raw, "AgentAction.complete", {}, {"summary": ""})
        params["summary"] = _str("AgentAction", "summary", params["summary"])

    return AgentAction(kind=kind, params=params)


@dataclass(frozen=True)
class Verdict:
    verdict: str
    reasoning: str


def parse_verdict(payload: Any) -> Verdict:
    p = _check_fields(payload, "Verdict", {"verdict": str}, {"reasoning": ""})
    return Verdict(
        verdict=_enum("Verdict", "verdict", p["verdict"], VERDICTS),
        reasoning=_str("Verdict", "reasoning", p["reasoning"]),
    )


@dataclass(frozen=True)
class MemoryNote:
    note: str


def parse_memory_note(payload: Any) -> MemoryNote:
    p = _check_fields(payload, "MemoryNote", {"note": str}, {})
    return MemoryNote(_str("MemoryNote", "note", p["note"]))


SCHEMA_PARSERS: dict[str, Callable[[Any], Any]] = {
    "GraphDiscovery": parse_graph_discovery,
    "GraphUpdate": parse_graph_update,
    "AgentAction": parse_agent_action,
    "InvestigationBatch": parse_investigation_batch,
    "HypothesisBatch": parse_hypothesis_batch,
    "Critique": parse_critique,
    "Verdict": parse_verdict,
    "MemoryNote": parse_memory_note,
}


def validate(schema_id: str, payload: Any) -> Any:
    """Parse *payload* as *schema_id*, raising SchemaValidationError on any defect."""
    parser = SCHEMA_PARSERS.get(schema_id)
    if parser is None:
        raise SchemaValidationError(f"unknown schema id {schema_id!r}")
    return parser(payload)
