"""Shared fixtures: scratch repos, projects, and scripted providers."""

from __future__ import annotations

import random

import pytest

from graphaudit.graph_store import GraphRecord, StoredCard
from graphaudit.ingest import IngestConfig, ingest_repo, write_ingest_artifacts
from graphaudit.project import ProjectLayout
from graphaudit.provider import MockProvider, default_profiles
from graphaudit.schemas import EdgeSpec, GraphUpdate, NodeSpec, parse_graph_update


def write_repo(root, files: dict[str, bytes]) -> None:
    for rel, data in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)


@pytest.fixture
def project(tmp_path) -> ProjectLayout:
    return ProjectLayout(tmp_path / "project").ensure()


@pytest.fixture
def repo(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    write_repo(root, {
        "app/wallet.py": (
            b"def withdraw(account, amount):\n"
            b"    balances[account] -= amount\n"
            b"    return amount\n"
        ),
        "app/auth.py": (
            b"def require_auth(user):\n"
            b"    if not user.authenticated:\n"
            b"        raise PermissionError\n"
        ),
        "app/store.py": b"balances = {}\n",
    })
    return root


@pytest.fixture
def ingested(project, repo):
    """Project with the small repo ingested; returns (layout, manifest, cards)."""
    manifest, cards = ingest_repo(repo, IngestConfig(max_card_bytes=64, exclude_globs=()))
    write_ingest_artifacts(project, manifest, cards)
    return project, manifest, cards


@pytest.fixture
def profiles():
    return default_profiles()


def make_provider(*entries) -> MockProvider:
    """Script helper: each entry is (schema_id, payload)."""
    return MockProvider(list(entries))


def random_graph(rng: random.Random, n_nodes=20, n_edges=30, card_pool=()) -> GraphRecord:
    graph = GraphRecord(name=f"G{rng.randrange(1000)}", focus="fuzz")
    node_ids = [f"n{i}" for i in range(n_nodes)]
    update = GraphUpdate(
        target_graph=graph.name,
        new_nodes=[
            NodeSpec(id=nid, type=rng.choice(["function", "role", "storage"]),
                     label=f"label {nid}",
                     refs=rng.sample(card_pool, k=min(len(card_pool), rng.randrange(3)))
                     if card_pool else [])
            for nid in node_ids
        ],
        new_edges=[
            EdgeSpec(type=rng.choice(["calls", "guarded_by", "writes"]),
                     src=rng.choice(node_ids), dst=rng.choice(node_ids),
                     refs=rng.sample(card_pool, k=min(len(card_pool), rng.randrange(2)))
                     if card_pool else [])
            for _ in range(n_edges)
        ],
    )
    from graphaudit.graph_store import apply_update
    apply_update(graph, update, set(card_pool))
    return graph


def store_for(graph: GraphRecord, extra_ids=()) -> dict[str, StoredCard]:
    """A card store covering every ref used by *graph* (synthetic content)."""
    from graphaudit.graph_store import referenced_cards

    store = {}
    for i, cid in enumerate(sorted(referenced_cards([graph]) | set(extra_ids))):
        store[cid] = StoredCard(
            id=cid, relpath=f"f{i % 7}.py", char_start=10 * i, char_end=10 * i + 5,
            content=f"code{i}".encode(),
        )
    return store


def graph_update_payload(target, nodes=(), edges=(), node_updates=()) -> dict:
    """Raw GraphUpdate payload for mock scripts."""
    return {
        "target_graph": target,
        "new_nodes": [
            {"id": n[0], "type": n[1], "label": n[2], "refs": list(n[3]) if len(n) > 3 else []}
            for n in nodes
        ],
        "new_edges": [
            {"type": e[0], "src": e[1], "dst": e[2], "refs": list(e[3]) if len(e) > 3 else []}
            for e in edges
        ],
        "node_updates": list(node_updates),
    }


def as_update(payload: dict) -> GraphUpdate:
    return parse_graph_update(payload)


TIMESTAMP_KEYS = {"created_at", "updated_at", "last_visited", "added_at", "at", "consumed_at"}


def scrub_timestamps(obj):
    """Recursively drop timestamp fields so runs can be compared byte-for-byte."""
    if isinstance(obj, dict):
        return {k: scrub_timestamps(v) for k, v in obj.items() if k not in TIMESTAMP_KEYS}
    if isinstance(obj, list):
        return [scrub_timestamps(v) for v in obj]
    return obj


def canonical_artifact(path):
    """Parse a .json or .jsonl store and scrub timestamps; raw bytes otherwise."""
    import json as _json

    data = path.read_bytes()
    if path.suffix == ".jsonl":
        return [scrub_timestamps(_json.loads(line))
                for line in data.decode("utf-8").splitlines() if line.strip()]
    if path.suffix == ".json":
        return scrub_timestamps(_json.loads(data))
    return data


def assert_projects_equal(root_a, root_b, relpaths):
    for rel in relpaths:
        a, b = root_a / rel, root_b / rel
        assert a.exists() and b.exists(), rel
        assert canonical_artifact(a) == canonical_artifact(b), f"artifact drift in {rel}"


# --- acceptance reporting -------------------------------------------------------
# One visible pass/fail line per acceptance criterion, independent of -s.

_acceptance_results: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _acceptance_results.append((name, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name, verdict in _acceptance_results:
        terminalreporter.write_line(f"  [{verdict}] {name}")
