"""Provider-agnostic structured completions.

A provider turns a rendered prompt into one JSON object for a named schema.
The engine never consumes raw model text: :func:`complete_structured`
validates the payload (retrying with validation feedback a bounded number of
times) and returns a typed object plus token usage.

Only the transport contract is defined here; the shipped implementation is a
deterministic scripted mock, which is what every test and the acceptance
pipeline run against.  Real adapters plug in behind the same ``complete``
method.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

from . import schemas, storage
from .errors import (
    ContextOverflow,
    ProviderSchemaError,
    SchemaValidationError,
    ScriptMismatch,
    TransportError,
)

log = logging.getLogger(__name__)

DEFAULT_RETRIES = 2
ROLES = ("scout", "strategist", "finalizer", "graph")


def estimate_tokens(text: str | bytes) -> int:
    """ceil(byte_length / 4): a monotone, deterministic usage proxy."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ModelProfile:
    name: str
    role: str
    context_limit: int
    plan_reasoning_effort: str | None = None
    hypothesize_reasoning_effort: str | None = None

    def __post_init__(self) -> None:
        if self.context_limit <= 0:
            raise ValueError("context_limit must be > 0")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")


def default_profiles(context_limit: int = 128_000) -> dict[str, ModelProfile]:
    return {role: ModelProfile(name=f"mock-{role}", role=role, context_limit=context_limit)
            for role in ROLES}


def load_profiles(path: Path) -> dict[str, ModelProfile]:
    """Read ``models.json`` (role -> {name, context_limit, efforts}); defaults when absent."""
    payload = storage.read_store(Path(path), None)
    if payload is None:
        return default_profiles()
    profiles = {}
    for role, cfg in payload.items():
        profiles[role] = ModelProfile(
            name=cfg.get("name", f"model-{role}"),
            role=role,
            context_limit=int(cfg.get("context_limit", cfg.get("B", 128_000))),
            plan_reasoning_effort=cfg.get("plan_reasoning_effort"),
            hypothesize_reasoning_effort=cfg.get("hypothesize_reasoning_effort"),
        )
    for role in ROLES:
        profiles.setdefault(role, default_profiles()[role])
    return profiles


@dataclass(frozen=True)
class StructuredRequest:
    schema_id: str
    prompt_sections: tuple[str, ...]
    profile: ModelProfile

    def rendered_prompt(self) -> str:
        return "\n\n".join(self.prompt_sections)


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class StructuredResponse:
    data: Any
    usage: Usage


class Provider(Protocol):
    def complete(self, request: StructuredRequest) -> Any:
        """Return one JSON-compatible payload for the request's schema."""
        ...


class MockProvider:
    """Plays back a script of ``(schema_id, payload)`` pairs, in order.

    Each call must request the schema of the next scripted entry
    (ScriptMismatch otherwise); exhausting the script raises TransportError.
    A replay log records every request so tests can assert on prompts.
    Playback is internally synchronized; concurrent calls serialize.
    """

    def __init__(self, script: list[tuple[str, Any]]):
        self._script = list(script)
        self._pos = 0
        self._lock = threading.Lock()
        self.replay_log: list[dict[str, Any]] = []

    @classmethod
    def from_jsonl(cls, path: Path) -> "MockProvider":
        script = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                entry = json.loads(line)
                script.append((entry["schema_id"], entry["response"]))
        return cls(script)

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._script) - self._pos

    def complete(self, request: StructuredRequest) -> Any:
        with self._lock:
            self.replay_log.append({
                "schema_id": request.schema_id,
                "profile": request.profile.name,
                "prompt": request.rendered_prompt(),
            })
            if self._pos >= len(self._script):
                raise TransportError(
                    f"mock script exhausted after {len(self._script)} responses "
                    f"(requested {request.schema_id})"
                )
            schema_id, payload = self._script[self._pos]
            if schema_id != request.schema_id:
                raise ScriptMismatch(
                    f"script expects a {schema_id} call next, got {request.schema_id}"
                )
            self._pos += 1
            return payload


def complete_structured(
    request: StructuredRequest,
    provider: Provider,
    retries: int = DEFAULT_RETRIES,
    validator: Callable[[Any], None] | None = None,
) -> StructuredResponse:
    """Run one schema-validated completion.

    Raises ContextOverflow before any call if the rendered prompt exceeds the
    profile's context limit.  Malformed output is retried up to *retries*
    times with the validation error appended to the prompt; after that,
    ProviderSchemaError.  *validator* can add call-site constraints beyond
    the schema (raising SchemaValidationError).
    """
    prompt = request.rendered_prompt()
    prompt_tokens = estimate_tokens(prompt)
    if prompt_tokens > request.profile.context_limit:
        raise ContextOverflow(
            f"prompt of ~{prompt_tokens} tokens exceeds context limit "
            f"{request.profile.context_limit} for profile {request.profile.name}"
        )

    attempt_request = request
    last_error: SchemaValidationError | None = None
    for attempt in range(retries + 1):
        payload = provider.complete(attempt_request)
        completion_tokens = estimate_tokens(json.dumps(payload, sort_keys=True, default=str))
        try:
            data = schemas.validate(request.schema_id, payload)
            if validator is not None:
                validator(data)
        except SchemaValidationError as exc:
            last_error = exc
            log.info("schema-invalid %s response (attempt %d): %s",
                     request.schema_id, attempt + 1, exc)
            feedback = (
                f"The previous response was rejected: {exc}. "
                f"Reply with a single valid {request.schema_id} object."
            )
            attempt_request = StructuredRequest(
                schema_id=request.schema_id,
                prompt_sections=attempt_request.prompt_sections + (feedback,),
                profile=request.profile,
            )
            continue
        usage = Usage(prompt_tokens=estimate_tokens(attempt_request.rendered_prompt()),
                      completion_tokens=completion_tokens)
        log.info("%s call ok: prompt=%d completion=%d tokens",
                 request.schema_id, usage.prompt_tokens, usage.completion_tokens)
        return StructuredResponse(data=data, usage=usage)

    raise ProviderSchemaError(
        f"{request.schema_id} output still invalid after {retries} retries: {last_error}"
    )
