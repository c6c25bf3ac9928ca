"""Operator surface: CLI exit codes, report generation, HTTP service."""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request

import pytest

from graphaudit import storage
from graphaudit.beliefs import HypothesisStore
from graphaudit.cli import dispatch
from graphaudit.project import ProjectLayout
from graphaudit.report import generate_report, render_markdown, write_report
from graphaudit.schemas import HypothesisCandidate
from graphaudit.service import make_server

from conftest import write_repo


def _script(tmp_path, entries, name="script.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(
        json.dumps({"schema_id": sid, "response": resp}) for sid, resp in entries))
    return str(path)


# --- dispatch exit codes ----------------------------------------------------------


def test_ingest_empty_dir_exits_one(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    code = dispatch(["--project", str(tmp_path / "p"), "ingest", str(empty)])
    assert code == 1
    assert "matched" in capsys.readouterr().err


def test_unknown_subcommand_exits_two(tmp_path):
    assert dispatch(["--project", str(tmp_path / "p"), "frobnicate"]) == 2


def test_missing_required_argument_exits_two(tmp_path):
    assert dispatch(["--project", str(tmp_path / "p"), "ingest"]) == 2


def test_ingest_writes_artifacts_and_exits_zero(tmp_path, capsys):
    repo = tmp_path / "repo"
    repo.mkdir()
    write_repo(repo, {"main.py": b"print(1)\n"})
    project_dir = tmp_path / "proj"
    code = dispatch(["--project", str(project_dir), "ingest", str(repo)])
    assert code == 0
    assert (project_dir / "ingest" / "manifest.json").exists()
    assert (project_dir / "ingest" / "cards.jsonl").exists()
    assert "ingested 1 files" in capsys.readouterr().out


def test_graph_build_requires_provider(tmp_path):
    repo = tmp_path / "repo"
    repo.mkdir()
    write_repo(repo, {"main.py": b"print(1)\n"})
    project_dir = str(tmp_path / "proj")
    assert dispatch(["--project", project_dir, "ingest", str(repo)]) == 0
    assert dispatch(["--project", project_dir, "graph", "build"]) == 1  # no --mock-script


def test_full_cli_pipeline(tmp_path, capsys):
    repo = tmp_path / "repo"
    repo.mkdir()
    write_repo(repo, {"pay.py": b"def pay():\n    pass\n"})
    project_dir = str(tmp_path / "proj")
    assert dispatch(["--project", project_dir, "ingest", str(repo)]) == 0

    cards = [json.loads(line) for line in
             (tmp_path / "proj" / "ingest" / "cards.jsonl").read_text().splitlines()]
    build_script = _script(tmp_path, [
        ("GraphDiscovery", {"graphs_needed": [{"name": "SystemArchitecture", "focus": "sys"}],
                            "suggested_node_types": [], "suggested_edge_types": []}),
        ("GraphUpdate", {"target_graph": "SystemArchitecture",
                         "new_nodes": [{"id": "pay", "type": "function", "label": "pay()",
                                        "refs": [cards[0]["id"]]}],
                         "new_edges": [], "node_updates": []}),
        ("GraphUpdate", {"target_graph": "SystemArchitecture", "new_nodes": [],
                         "new_edges": [], "node_updates": []}),
        ("GraphUpdate", {"target_graph": "SystemArchitecture", "new_nodes": [],
                         "new_edges": [], "node_updates": []}),
    ], name="build.jsonl")
    assert dispatch(["--project", project_dir, "graph", "build", "--graphs", "1",
                     "--mock-script", build_script]) == 0

    audit_script = _script(tmp_path, [
        ("InvestigationBatch", {"investigations": [
            {"goal": "check pay()", "category": "sweep", "focus_areas": ["pay"],
             "priority": 8, "expected_impact": "high", "reasoning": "",
             "why_now": "", "exit_criteria": ""}]}),
        ("AgentAction", {"kind": "form_hypothesis", "params": {"candidate": {
            "title": "pay() lacks checks", "vuln_type": "missing-auth",
            "severity": "high", "confidence": 0.7, "node_ids": ["pay"],
            "reasoning": "no guard"}}}),
        ("AgentAction", {"kind": "complete", "params": {"summary": "done"}}),
    ], name="audit.jsonl")
    assert dispatch(["--project", project_dir, "audit", "--phase", "intuition",
                     "--session", "sess-cli", "--mock-script", audit_script]) == 0
    status = storage.read_store(
        ProjectLayout(tmp_path / "proj").session_status_path("sess-cli"), {})
    assert status["phase"] == "intuition"  # override honored end to end

    finalize_script = _script(tmp_path, [
        ("Verdict", {"verdict": "confirmed", "reasoning": "verified"}),
    ], name="finalize.jsonl")
    assert dispatch(["--project", project_dir, "finalize",
                     "--mock-script", finalize_script]) == 0

    assert dispatch(["--project", project_dir, "report", "--include-open"]) == 0
    report_md = (tmp_path / "proj" / "report" / "report.md").read_text()
    assert "pay() lacks checks" in report_md

    assert dispatch(["--project", project_dir, "coverage"]) == 0
    assert dispatch(["--project", project_dir, "hypotheses", "list"]) == 0
    assert dispatch(["--project", project_dir, "inbox", "add", "look", "at", "mint"]) == 0
    out = capsys.readouterr().out
    assert "coverage p" in out
    assert "pay() lacks checks" in out
    assert "queued steering note" in out


def test_audit_preemption_triggers_replan(tmp_path, capsys):
    repo = tmp_path / "repo"
    repo.mkdir()
    write_repo(repo, {"mod.py": b"def run():\n    pass\n"})
    project_dir = str(tmp_path / "proj")
    assert dispatch(["--project", project_dir, "ingest", str(repo)]) == 0
    assert dispatch(["--project", project_dir, "inbox", "add", "check the config loader"]) == 0

    def inv(goal):
        return {"goal": goal, "category": "sweep", "focus_areas": [goal.split()[0]],
                "priority": 5, "expected_impact": "med", "reasoning": "",
                "why_now": "", "exit_criteria": ""}

    script = _script(tmp_path, [
        ("InvestigationBatch", {"investigations": [inv("first sweep")]}),
        ("InvestigationBatch", {"investigations": [inv("config loader review")]}),
        ("AgentAction", {"kind": "complete", "params": {"summary": "checked"}}),
    ], name="preempt.jsonl")
    assert dispatch(["--project", project_dir, "audit", "--session", "sess-p",
                     "--mock-script", script]) == 0
    out = capsys.readouterr().out
    assert "'first sweep': preempted" in out
    assert "replanning" in out
    assert "'config loader review': completed" in out


# --- report ordering -----------------------------------------------------------


@pytest.fixture
def reporting_project(project):
    store = HypothesisStore(project.hypotheses_path)
    for title, sev, status in [
        ("high issue", "high", "confirmed"),
        ("critical issue", "critical", "confirmed"),
        ("alpha critical", "critical", "confirmed"),
        ("open lead", "medium", "supported"),
        ("dead end", "low", "rejected"),
    ]:
        hyp_id, _ = store.propose(
            HypothesisCandidate(title=title, vuln_type="auth", severity=sev,
                                confidence=0.6), "t", "s")
        if status == "confirmed":
            store.finalize_verdict(hyp_id, "confirmed", "yes")
        elif status == "rejected":
            store.finalize_verdict(hyp_id, "rejected", "no")
        elif status == "supported":
            store.add_evidence(hyp_id, "c1", "a", "supports")
            store.add_evidence(hyp_id, "c2", "b", "supports")
    return project


def test_report_orders_by_severity_then_title(reporting_project):
    payload = generate_report(reporting_project, include_open=False)
    assert [f["title"] for f in payload["findings"]] == \
        ["alpha critical", "critical issue", "high issue"]
    assert payload["open_items"] == []


def test_report_include_open_lists_supported_items(reporting_project):
    payload = generate_report(reporting_project, include_open=True)
    assert [f["title"] for f in payload["open_items"]] == ["open lead"]
    md = render_markdown(payload)
    assert "## Open items" in md
    assert "open lead" in md


def test_empty_report_renders_placeholder(project):
    payload = generate_report(project, include_open=False)
    assert payload["findings"] == []
    assert "(none)" in render_markdown(payload)


def test_report_renders_evidence_refs_as_spans(ingested):
    project, _manifest, cards = ingested
    store = HypothesisStore(project.hypotheses_path)
    hyp_id, _ = store.propose(
        HypothesisCandidate(title="evidence demo", vuln_type="auth", severity="high",
                            confidence=0.6), "t", "s")
    card = cards[0]
    store.add_evidence(hyp_id, card.id, "the offending slice", "supports")
    store.finalize_verdict(hyp_id, "confirmed", "ok")
    payload = generate_report(project, include_open=False)
    ref = payload["findings"][0]["evidence"][0]["ref"]
    assert ref == f"{card.relpath}:[{card.char_start},{card.char_end})"
    assert ref in render_markdown(payload)


def test_report_writing_is_deterministic(reporting_project):
    md1, json1 = write_report(reporting_project, include_open=True)
    first = (md1.read_bytes(), json1.read_bytes())
    md2, json2 = write_report(reporting_project, include_open=True)
    assert (md2.read_bytes(), json2.read_bytes()) == first


# --- HTTP service ------------------------------------------------------------------


@pytest.fixture
def server(reporting_project):
    srv = make_server(reporting_project, port=0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield reporting_project, f"http://127.0.0.1:{srv.port}"
    srv.shutdown()
    srv.server_close()


def _get(base, path):
    with urllib.request.urlopen(base + path, timeout=5) as resp:
        return resp.status, resp.read()


def test_get_endpoints_mirror_disk_bytes(server, ingested):
    project, base = server
    # seed some stores so the mirrors are non-trivial
    from graphaudit.graph_store import GraphRecord, save_graph, write_summary
    g = GraphRecord(name="SystemArchitecture", focus="sys")
    save_graph(project, g)
    write_summary(project, [g])
    storage.atomic_update(project.coverage_path, lambda _: {"node_visits": {}}, default={})

    for path, disk in [
        ("/hypotheses", project.hypotheses_path),
        ("/graphs", project.graphs_summary_path),
        ("/graphs/SystemArchitecture", project.graph_path("SystemArchitecture")),
        ("/coverage", project.coverage_path),
    ]:
        status, body = _get(base, path)
        assert status == 200
        assert body == disk.read_bytes(), path


def test_absent_stores_return_defaults(server):
    _, base = server
    status, body = _get(base, "/plans")
    assert status == 200 and json.loads(body) == {}
    status, body = _get(base, "/session/status")
    assert status == 200 and json.loads(body) == {}
    status, body = _get(base, "/inbox")
    assert status == 200 and json.loads(body) == {"notes": []}


def test_unknown_paths_404(server):
    _, base = server
    with pytest.raises(urllib.error.HTTPError) as err:
        _get(base, "/nope")
    assert err.value.code == 404
    with pytest.raises(urllib.error.HTTPError) as err:
        _get(base, "/graphs/Ghost")
    assert err.value.code == 404


def test_post_inbox_creates_note_and_get_reflects_it(server):
    project, base = server
    req = urllib.request.Request(
        base + "/inbox", data=json.dumps({"text": "focus on withdraw"}).encode(),
        headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req, timeout=5) as resp:
        assert resp.status == 201
        note_file = json.loads(resp.read())["file"]
    assert (project.inbox_dir / note_file).exists()
    _, body = _get(base, "/inbox")
    notes = json.loads(body)["notes"]
    assert [n["text"] for n in notes] == ["focus on withdraw"]
    assert notes[0]["consumed"] is False


def test_post_inbox_rejects_empty_text(server):
    _, base = server
    req = urllib.request.Request(
        base + "/inbox", data=json.dumps({"text": "  "}).encode(),
        headers={"Content-Type": "application/json"}, method="POST")
    with pytest.raises(urllib.error.HTTPError) as err:
        urllib.request.urlopen(req, timeout=5)
    assert err.value.code == 400


def test_cors_headers_for_console(server):
    _, base = server
    with urllib.request.urlopen(base + "/hypotheses", timeout=5) as resp:
        assert resp.headers["Access-Control-Allow-Origin"] == "*"
