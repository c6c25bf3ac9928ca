"""Exception taxonomy shared across the engine.

Everything raised deliberately by this package derives from AuditError so
callers (and the CLI) can map domain failures to a single exit path.
"""

from __future__ import annotations


class AuditError(Exception):
    """Base class for all errors raised by this package."""


# --- storage ---------------------------------------------------------------

class CorruptStore(AuditError):
    """A store file exists but cannot be parsed; manual intervention needed."""


class LockTimeout(AuditError):
    """Could not acquire the store lock within the configured timeout."""


class StoreVersionConflict(AuditError):
    """A write attempted to lower a document's schema_version."""


# --- ingest ----------------------------------------------------------------

class EmptyRepo(AuditError):
    """No files matched the ingest globs."""


class StaleCard(AuditError):
    """The card's file changed on disk after ingest (hash mismatch)."""


class UnknownFile(AuditError):
    """The relpath is not tracked by the manifest."""


class OutOfRange(AuditError):
    """Requested span exceeds the file's recorded byte length."""


# --- graphs ----------------------------------------------------------------

class TargetMismatch(AuditError):
    """A graph update names a different graph than the one being updated."""


class UnknownGraph(AuditError):
    """No graph with that name exists in the project."""


class UnknownNode(AuditError):
    """One or more node ids do not exist in the graph."""

    def __init__(self, node_ids: list[str]):
        self.node_ids = list(node_ids)
        super().__init__(f"unknown node ids: {', '.join(self.node_ids)}")


class MissingCard(AuditError):
    """A referenced card id is absent from the card store."""


# --- beliefs ---------------------------------------------------------------

class ValidationError(AuditError):
    """A hypothesis candidate violates its field constraints."""


class UnknownHypothesis(AuditError):
    """No hypothesis with that id exists."""


class Finalized(AuditError):
    """The hypothesis carries a QA verdict and is immutable."""


class RangeError(AuditError):
    """Confidence outside [0, 1]."""


# --- planning --------------------------------------------------------------

class EmptyUniverse(AuditError):
    """Coverage cannot be computed over zero nodes or zero cards."""


# --- provider --------------------------------------------------------------

class SchemaValidationError(AuditError):
    """A structured payload does not conform to its schema."""


class ProviderSchemaError(AuditError):
    """The provider kept returning schema-invalid output after retries."""


class ContextOverflow(AuditError):
    """The rendered prompt exceeds the profile's context limit."""


class TransportError(AuditError):
    """The provider call itself failed (or a mock script was exhausted)."""


class ScriptMismatch(AuditError):
    """The next scripted mock response is for a different schema."""


# --- agent -----------------------------------------------------------------

class InvalidAction(AuditError):
    """A schema-valid action failed execution-level checks."""
