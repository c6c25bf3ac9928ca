"""Repository ingestion into byte-accurate cards plus a reconstruction manifest.

A card is a half-open byte slice ``[char_start, char_end)`` of one file.
Cards of a file never overlap and jointly cover ``[0, byte_len)``, so the
concatenation of card contents reproduces the file exactly.  Offsets are byte
offsets; no decoding happens during ingest.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import storage
from .errors import EmptyRepo, OutOfRange, StaleCard, UnknownFile
from .project import ProjectLayout

DEFAULT_MAX_CARD_BYTES = 2048

# Production-path focus: tests, mocks, and vendored trees stay out by default.
DEFAULT_EXCLUDE_GLOBS = [
    "tests/*", "*/tests/*", "test/*", "*/test/*",
    "test_*", "*/test_*", "*_test.*", "*/*_test.*", "*.test.*",
    "mocks/*", "*/mocks/*", "mock/*", "*/mock/*",
    "vendor/*", "*/vendor/*", "vendored/*", "*/vendored/*",
    "node_modules/*", "*/node_modules/*",
    "third_party/*", "*/third_party/*",
    ".git/*", "*/.git/*",
]


@dataclass(frozen=True)
class IngestConfig:
    max_card_bytes: int = DEFAULT_MAX_CARD_BYTES
    include_globs: tuple[str, ...] = ("*",)
    exclude_globs: tuple[str, ...] = tuple(DEFAULT_EXCLUDE_GLOBS)

    def __post_init__(self) -> None:
        if self.max_card_bytes <= 0:
            raise ValueError("max_card_bytes must be > 0")

    def to_payload(self) -> dict:
        return {
            "max_card_bytes": self.max_card_bytes,
            "include_globs": list(self.include_globs),
            "exclude_globs": list(self.exclude_globs),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "IngestConfig":
        return cls(
            max_card_bytes=payload["max_card_bytes"],
            include_globs=tuple(payload["include_globs"]),
            exclude_globs=tuple(payload["exclude_globs"]),
        )


@dataclass(frozen=True)
class Card:
    id: str
    relpath: str
    char_start: int
    char_end: int

    @property
    def span_bytes(self) -> int:
        return self.char_end - self.char_start

    def to_payload(self) -> dict:
        return {
            "id": self.id,
            "relpath": self.relpath,
            "char_start": self.char_start,
            "char_end": self.char_end,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Card":
        return cls(
            id=payload["id"],
            relpath=payload["relpath"],
            char_start=payload["char_start"],
            char_end=payload["char_end"],
        )


@dataclass
class FileEntry:
    relpath: str
    byte_len: int
    content_hash: str


@dataclass
class Manifest:
    repo_root: str
    files: list[FileEntry]
    config: IngestConfig
    created_at: str
    warnings: list[str] = field(default_factory=list)

    def entry(self, relpath: str) -> FileEntry:
        for e in self.files:
            if e.relpath == relpath:
                return e
        raise UnknownFile(relpath)

    def to_payload(self) -> dict:
        return {
            "repo_root": self.repo_root,
            "files": [
                {"relpath": e.relpath, "byte_len": e.byte_len, "content_hash": e.content_hash}
                for e in self.files
            ],
            "config": self.config.to_payload(),
            "created_at": self.created_at,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Manifest":
        return cls(
            repo_root=payload["repo_root"],
            files=[FileEntry(f["relpath"], f["byte_len"], f["content_hash"]) for f in payload["files"]],
            config=IngestConfig.from_payload(payload["config"]),
            created_at=payload["created_at"],
            warnings=list(payload.get("warnings", [])),
        )


def card_id(relpath: str, cs: int, ce: int) -> str:
    digest = hashlib.sha256(f"{relpath}:{cs}:{ce}".encode("utf-8")).hexdigest()
    return "card_" + digest[:12]


def _matches_any(relpath: str, globs: tuple[str, ...]) -> bool:
    return any(fnmatch.fnmatch(relpath, g) for g in globs)


def _selected_paths(root: Path, config: IngestConfig) -> list[str]:
    out = []
    for p in root.rglob("*"):
        if not p.is_file() or p.is_symlink():
            continue
        rel = p.relative_to(root).as_posix()
        if not _matches_any(rel, config.include_globs):
            continue
        if _matches_any(rel, config.exclude_globs):
            continue
        out.append(rel)
    # plain string order: Path's component order disagrees for "x.py" vs "x/y.py"
    return sorted(out)


def partition_bytes(data: bytes, max_card_bytes: int) -> list[tuple[int, int]]:
    """Greedy line-aligned packing of *data* into ``[cs, ce)`` spans.

    Extends the current span by whole lines until the next line would push it
    past *max_card_bytes*; a single line longer than the budget becomes its
    own span.  An empty file yields no spans.
    """
    spans: list[tuple[int, int]] = []
    start = 0
    end = 0
    for line in data.splitlines(keepends=True):
        if end > start and (end - start) + len(line) > max_card_bytes:
            spans.append((start, end))
            start = end
        end += len(line)
    if end > start:
        spans.append((start, end))
    return spans


def ingest_repo(root: Path, config: IngestConfig | None = None) -> tuple[Manifest, list[Card]]:
    """Slice every included file of *root* into cards and record a manifest.

    Cards are emitted in (relpath, char_start) order.  Unreadable files are
    skipped with a warning recorded on the manifest.

    Raises EmptyRepo when no file matches the configured globs.
    """
    root = Path(root)
    config = config or IngestConfig()
    relpaths = _selected_paths(root, config)
    if not relpaths:
        raise EmptyRepo(f"no files under {root} matched the ingest globs")

    files: list[FileEntry] = []
    cards: list[Card] = []
    warnings: list[str] = []
    for rel in relpaths:
        try:
            data = (root / rel).read_bytes()
        except OSError as exc:
            warnings.append(f"skipped unreadable file {rel}: {exc}")
            continue
        files.append(FileEntry(rel, len(data), hashlib.sha256(data).hexdigest()))
        for cs, ce in partition_bytes(data, config.max_card_bytes):
            cards.append(Card(card_id(rel, cs, ce), rel, cs, ce))

    manifest = Manifest(
        repo_root=str(root.resolve()),
        files=files,
        config=config,
        created_at=datetime.now(timezone.utc).isoformat(),
        warnings=warnings,
    )
    return manifest, cards


def card_content(card: Card, root: Path, manifest: Manifest) -> bytes:
    """Return exactly bytes ``[char_start, char_end)`` of the card's file.

    Verifies the file still hashes to its ingest-time digest; a mismatch
    raises StaleCard rather than returning bytes from a changed file.
    """
    entry = manifest.entry(card.relpath)
    data = (Path(root) / card.relpath).read_bytes()
    if hashlib.sha256(data).hexdigest() != entry.content_hash:
        raise StaleCard(f"{card.relpath} changed after ingest (card {card.id})")
    return data[card.char_start:card.char_end]


def reconstruct_span(manifest: Manifest, relpath: str, cs: int, ce: int) -> bytes:
    """Return bytes ``[cs, ce)`` of *relpath* regardless of card boundaries."""
    entry = manifest.entry(relpath)
    if not (0 <= cs < ce <= entry.byte_len):
        raise OutOfRange(f"span [{cs}, {ce}) outside [0, {entry.byte_len}) for {relpath}")
    data = (Path(manifest.repo_root) / relpath).read_bytes()
    return data[cs:ce]


# --- on-disk artifacts -------------------------------------------------------

def write_ingest_artifacts(layout: ProjectLayout, manifest: Manifest, cards: list[Card]) -> None:
    layout.ensure()
    storage.write_bytes_atomic(
        layout.manifest_path, storage.dump_json(manifest.to_payload()).encode("utf-8")
    )
    lines = "".join(
        json.dumps(c.to_payload(), sort_keys=True, ensure_ascii=True) + "\n" for c in cards
    )
    storage.write_bytes_atomic(layout.cards_path, lines.encode("utf-8"))


def load_manifest(layout: ProjectLayout) -> Manifest:
    payload = storage.read_store(layout.manifest_path, None)
    if payload is None:
        raise UnknownFile(f"missing manifest at {layout.manifest_path}; run ingest first")
    return Manifest.from_payload(payload)


def load_cards(layout: ProjectLayout) -> list[Card]:
    if not layout.cards_path.exists():
        return []
    cards = []
    for line in layout.cards_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            cards.append(Card.from_payload(json.loads(line)))
    return cards
