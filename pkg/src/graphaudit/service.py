"""Local HTTP/JSON service over the project stores.

Read endpoints return the on-disk documents verbatim (no caching, no
re-serialization of existing files), so a console polling them always sees
exactly what the stores contain.  The only write is POST /inbox, which goes
through the same atomic note machinery the runner consumes.

Localhost-only by default; this is an operator tool, not a public service.
"""

from __future__ import annotations

import json
import logging
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import agent, storage
from .project import ProjectLayout

log = logging.getLogger(__name__)


def _latest_status_bytes(project: ProjectLayout) -> bytes:
    newest: tuple[str, bytes] | None = None
    if project.sessions_dir.exists():
        for path in project.sessions_dir.glob("*/status.json"):
            try:
                raw = path.read_bytes()
                stamp = json.loads(raw).get("updated_at", "")
            except (OSError, ValueError):
                continue
            if newest is None or stamp > newest[0]:
                newest = (stamp, raw)
    return newest[1] if newest else storage.dump_json({}).encode("utf-8")


def _store_bytes(path, default) -> bytes:
    try:
        return path.read_bytes()
    except OSError:
        return storage.dump_json(default).encode("utf-8")


def _inbox_payload(project: ProjectLayout) -> dict:
    notes = []
    for note in agent.list_notes(project):
        payload = storage.read_store(note.path, {})
        payload["file"] = note.path.name
        notes.append(payload)
    return {"notes": notes}


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, fmt, *args):  # route through logging, not stderr
        log.debug("http: " + fmt, *args)

    def _send(self, code: int, body: bytes) -> None:
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, payload) -> None:
        self._send(code, storage.dump_json(payload).encode("utf-8"))

    def do_OPTIONS(self):  # CORS preflight
        self._send(204, b"")

    def do_GET(self):
        project = self.server.project  # type: ignore[attr-defined]
        path = self.path.split("?", 1)[0].rstrip("/") or "/"
        if path == "/graphs":
            self._send(200, _store_bytes(project.graphs_summary_path, {}))
        elif path.startswith("/graphs/"):
            name = path[len("/graphs/"):]
            graph_file = project.graph_path(name)
            if graph_file.exists():
                self._send(200, graph_file.read_bytes())
            else:
                self._send_json(404, {"error": f"no graph named {name}"})
        elif path == "/hypotheses":
            self._send(200, _store_bytes(project.hypotheses_path, {}))
        elif path == "/coverage":
            self._send(200, _store_bytes(project.coverage_path, {}))
        elif path == "/plans":
            self._send(200, _store_bytes(project.plan_ledger_path, {}))
        elif path == "/session/status":
            self._send(200, _latest_status_bytes(project))
        elif path == "/inbox":
            self._send_json(200, _inbox_payload(project))
        else:
            self._send_json(404, {"error": f"unknown path {path}"})

    def do_POST(self):
        project = self.server.project  # type: ignore[attr-defined]
        path = self.path.rstrip("/")
        if path != "/inbox":
            self._send_json(404, {"error": f"unknown path {path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
            text = payload.get("text", "")
            if not isinstance(text, str) or not text.strip():
                self._send_json(400, {"error": "text must be a non-empty string"})
                return
            note_path = agent.add_steering_note(project, text)
        except ValueError as exc:
            self._send_json(400, {"error": str(exc)})
            return
        self._send_json(201, {"ok": True, "file": note_path.name})


class ProjectServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, project: ProjectLayout, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.project = project

    @property
    def port(self) -> int:
        return self.server_address[1]


def make_server(project: ProjectLayout, host: str = "127.0.0.1", port: int = 0) -> ProjectServer:
    return ProjectServer(project, host, port)
