"""Project directory layout and path helpers.

A project directory holds every persistent artifact of one audit:

    <project>/
      ingest/manifest.json       ingested file inventory
      ingest/cards.jsonl         one card (byte slice) per line
      graphs/<name>.json         one file per knowledge graph
      graphs/summary.json        per-graph node/edge totals
      graphs/card_store.jsonl    referenced cards, content included
      hypotheses.json            belief store
      coverage.json              node/card visit counts
      plan_ledger.json           project-wide normalized plan frames
      sessions/<sid>/plan.json   per-session plan store
      sessions/<sid>/status.json live session status (for the console)
      inbox/*.json               steering notes
      report/                    generated reports

Absence of any optional store is tolerated; readers fall back to defaults.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


@dataclass(frozen=True)
class ProjectLayout:
    root: Path

    @property
    def ingest_dir(self) -> Path:
        return self.root / "ingest"

    @property
    def manifest_path(self) -> Path:
        return self.ingest_dir / "manifest.json"

    @property
    def cards_path(self) -> Path:
        return self.ingest_dir / "cards.jsonl"

    @property
    def graphs_dir(self) -> Path:
        return self.root / "graphs"

    def graph_path(self, name: str) -> Path:
        return self.graphs_dir / f"{_safe_name(name)}.json"

    @property
    def graphs_summary_path(self) -> Path:
        return self.graphs_dir / "summary.json"

    @property
    def card_store_path(self) -> Path:
        return self.graphs_dir / "card_store.jsonl"

    @property
    def build_lock_path(self) -> Path:
        return self.graphs_dir / "build"

    @property
    def hypotheses_path(self) -> Path:
        return self.root / "hypotheses.json"

    @property
    def coverage_path(self) -> Path:
        return self.root / "coverage.json"

    @property
    def plan_ledger_path(self) -> Path:
        return self.root / "plan_ledger.json"

    @property
    def sessions_dir(self) -> Path:
        return self.root / "sessions"

    def session_dir(self, session_id: str) -> Path:
        return self.sessions_dir / _safe_name(session_id)

    def plan_store_path(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "plan.json"

    def session_status_path(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "status.json"

    @property
    def inbox_dir(self) -> Path:
        return self.root / "inbox"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    @property
    def models_path(self) -> Path:
        return self.root / "models.json"

    def ensure(self) -> "ProjectLayout":
        for d in (self.root, self.ingest_dir, self.graphs_dir, self.sessions_dir,
                  self.inbox_dir, self.report_dir):
            d.mkdir(parents=True, exist_ok=True)
        return self
