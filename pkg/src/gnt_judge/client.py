"""Judge backends: OpenAI-compatible chat endpoints and a lexicon heuristic.

The HTTP backend speaks the chat-completions wire protocol: the message
list, the model id, the temperature, and a ``response_format`` field
embedding the strategy's JSON Schema travel in one POST; the bearer token
is read from the configured environment variable. The heuristic backend
is a deterministic offline stand-in that flags gendered wording via
per-language lexicon patterns; it makes the whole pipeline reproducible
without network access.

Outcomes are cached in an append-only JSON-lines file keyed by a digest
of (model, strategy, language, item, prompt bytes); re-judging an item
with identical inputs never hits the backend again.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence

from .errors import BackendFailure, ConfigError, SchemaViolation
from .labels import Assessment, Gender, RefChoice, Strategy
from .prompts import ASSETS_DIR, PromptBundle, Turn, build_prompt
from .verdict import (
    JudgeVerdict,
    OutputSchema,
    PhraseAnnotation,
    derive_label,
    output_schema,
    parse_verdict,
    serialize_verdict,
)

RETRYABLE_STATUSES = frozenset({408, 429, 500, 502, 503, 504})
_BACKOFF_BASE = 0.5
_BACKOFF_CAP = 30.0

# Transport signature: (url, headers, payload) -> (status_code, body_text).
Transport = Callable[[str, dict, dict, float], tuple[int, str]]


class BackendKind(Enum):
    HTTP_CHAT = "HTTP_CHAT"
    HEURISTIC = "HEURISTIC"


class OutcomeStatus(Enum):
    OK = "OK"
    INVALID_OUTPUT = "INVALID_OUTPUT"
    BACKEND_FAILURE = "BACKEND_FAILURE"


@dataclass(frozen=True)
class BackendConfig:
    """One judge backend: endpoint, decoding, and retry parameters."""

    kind: BackendKind
    model_id: str
    endpoint: Optional[str] = None
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    credential_env: Optional[str] = None

    def validate(self) -> None:
        if not self.model_id:
            raise ConfigError("backend model_id must be non-empty")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.kind is BackendKind.HTTP_CHAT:
            if not self.endpoint:
                raise ConfigError("HTTP_CHAT backend needs an endpoint URL")
            if not self.credential_env:
                raise ConfigError("HTTP_CHAT backend needs credential_env")
        else:
            if self.endpoint or self.credential_env:
                raise ConfigError("heuristic backend takes no endpoint or credential")


@dataclass(frozen=True)
class JudgeItem:
    """One unit of judging work: the text(s) plus provenance for caching."""

    id: str
    target: str
    ref: Optional[RefChoice] = None
    source: Optional[str] = None


@dataclass(frozen=True)
class JudgeOutcome:
    status: OutcomeStatus
    verdict: Optional[JudgeVerdict]
    attempts: int
    raw_last: str


def cache_key(
    model_id: str,
    strategy: Strategy,
    language: str,
    entry_id: str,
    ref: Optional[RefChoice],
    prompt_bytes: bytes,
) -> str:
    """Digest identifying one judging request; any prompt byte change changes it."""
    hasher = hashlib.sha256()
    for part in (model_id, strategy.value, language, entry_id, ref.value if ref else "-"):
        hasher.update(part.encode("utf-8"))
        hasher.update(b"\x1f")
    hasher.update(prompt_bytes)
    return hasher.hexdigest()


class ResponseCache:
    """Append-only JSON-lines record of judge outcomes, keyed by request digest.

    Concurrent readers share the in-memory index; appends are serialized.
    Re-runs over the same file append fresh records; the newest record per
    key wins on load.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn trailing write; the cache is disposable
                if isinstance(record, dict) and "key" in record:
                    self._entries[record["key"]] = record

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[dict]:
        return self._entries.get(key)

    def put(self, key: str, record: dict) -> None:
        record = dict(record, key=key)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")
            self._entries[key] = record


# --- heuristic backend -----------------------------------------------------


@dataclass(frozen=True)
class _Lexicon:
    patterns: tuple[tuple[re.Pattern, Gender], ...]
    overrides: tuple[re.Pattern, ...]
    cues: dict[str, frozenset[str]]


@lru_cache(maxsize=None)
def _load_lexicon(language: str, assets_root: Path) -> _Lexicon:
    path = assets_root / "lexicons" / f"{language}.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"no heuristic lexicon for language {language!r}: {path}") from None
    patterns = tuple(
        (re.compile(item["pattern"], re.IGNORECASE | re.UNICODE), Gender(item["gender"]))
        for item in data["gendered_patterns"]
    )
    overrides = tuple(
        re.compile(rf"\b{re.escape(word)}\b", re.IGNORECASE | re.UNICODE)
        for word in data["neutral_overrides"]
    )
    cues = {
        gender: frozenset(word.lower() for word in words)
        for gender, words in data["source_cues"].items()
    }
    return _Lexicon(patterns=patterns, overrides=overrides, cues=cues)


def _gendered_spans(lexicon: _Lexicon, target: str) -> list[tuple[str, Gender]]:
    hits: list[tuple[int, int, int, str, Gender]] = []
    for index, (pattern, gender) in enumerate(lexicon.patterns):
        for match in pattern.finditer(target):
            span = match.group(0)
            if any(override.search(span) for override in lexicon.overrides):
                continue
            hits.append((match.start(), match.end(), index, span, gender))
    hits.sort(key=lambda h: (h[0], h[2]))
    spans: list[tuple[str, Gender]] = []
    last_end = -1
    for start, end, _, span, gender in hits:
        if start >= last_end:
            spans.append((span, gender))
            last_end = end
    return spans


def _source_tokens(source: str) -> frozenset[str]:
    return frozenset(re.findall(r"\w+", source.lower(), re.UNICODE))


def heuristic_judge(
    strategy: Strategy,
    language: str,
    source: Optional[str],
    target: str,
    assets_root: Path = ASSETS_DIR,
) -> str:
    """Deterministic lexicon-based judgment, serialized like a model payload.

    A sentence is GENDERED when any lexicon pattern matches outside the
    neutral overrides. Cross-lingually a gendered finding is correct only
    when the English source contains a cue word of the matching gender,
    the same rule the prompts state.
    """
    lexicon = _load_lexicon(language, assets_root)
    if strategy.takes_source and source is None:
        raise ConfigError(f"{strategy.value} requires a source sentence")
    spans = _gendered_spans(lexicon, target)

    if strategy.takes_source:
        tokens = _source_tokens(source or "")
        phrases = tuple(
            PhraseAnnotation(
                text=span,
                gender=gender,
                assessment=(
                    Assessment.CORRECT
                    if tokens & lexicon.cues.get(gender.value, frozenset())
                    else Assessment.WRONG
                ),
            )
            for span, gender in spans
        )
        label = derive_label(Strategy.CROSS_PL, phrases)
    else:
        phrases = tuple(PhraseAnnotation(text=span, gender=gender) for span, gender in spans)
        label = derive_label(Strategy.MONO_PL, phrases)

    verdict = JudgeVerdict(
        strategy=strategy,
        stated_label=label,
        phrases=phrases if strategy.wants_phrases else None,
    )
    return serialize_verdict(verdict)


# --- dispatch ----------------------------------------------------------------


def _requests_transport(url: str, headers: dict, payload: dict, timeout: float) -> tuple[int, str]:
    import requests

    try:
        response = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.Timeout as exc:
        raise BackendFailure(f"timeout after {timeout}s: {exc}", retryable=True) from exc
    except requests.RequestException as exc:
        raise BackendFailure(f"network error: {exc}", retryable=True) from exc
    return response.status_code, response.text


def _split_query(bundle: PromptBundle) -> tuple[Optional[str], str]:
    """Recover (source, target) from the fixed query turn format."""
    query = bundle.query
    if bundle.strategy.takes_source:
        head, sep, tail = query.partition("\nTarget: ")
        if not head.startswith("Source: ") or not sep:
            raise ConfigError(f"malformed cross-lingual query: {query!r}")
        return head[len("Source: "):], tail
    if not query.startswith("Sentence: "):
        raise ConfigError(f"malformed target-only query: {query!r}")
    return None, query[len("Sentence: "):]


def complete(
    config: BackendConfig,
    bundle: PromptBundle,
    schema: OutputSchema,
    transport: Optional[Transport] = None,
) -> str:
    """Obtain one raw judge response for the bundle from the configured backend."""
    config.validate()
    if config.kind is BackendKind.HEURISTIC:
        source, target = _split_query(bundle)
        return heuristic_judge(bundle.strategy, bundle.language, source, target)

    credential = os.environ.get(config.credential_env or "")
    if not credential:
        raise ConfigError(f"credential environment variable {config.credential_env!r} is not set")
    payload = {
        "model": config.model_id,
        "messages": bundle.wire_messages(),
        "temperature": config.temperature,
        "response_format": {
            "type": "json_schema",
            "json_schema": {
                "name": schema.definition["title"],
                "strict": True,
                "schema": schema.definition,
            },
        },
    }
    headers = {
        "Authorization": f"Bearer {credential}",
        "Content-Type": "application/json",
    }
    send = transport or _requests_transport
    status, body = send(config.endpoint or "", headers, payload, config.timeout)
    if not 200 <= status < 300:
        raise BackendFailure(
            f"backend returned HTTP {status}",
            retryable=status in RETRYABLE_STATUSES,
            status=status,
        )
    try:
        content = json.loads(body)["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise BackendFailure(f"malformed chat-completion response: {exc}", retryable=False) from exc
    if not isinstance(content, str):
        raise BackendFailure("chat-completion response lacks text content", retryable=False)
    return content


def _backoff_delay(attempt: int, rng: random.Random) -> float:
    base = min(_BACKOFF_BASE * (2 ** (attempt - 1)), _BACKOFF_CAP)
    return base * (1.0 + 0.25 * rng.random())


def judge(
    config: BackendConfig,
    strategy: Strategy,
    language: str,
    item: JudgeItem,
    exemplars: Sequence[tuple[Turn, Turn]],
    cache: Optional[ResponseCache] = None,
    *,
    use_cache_reads: bool = True,
    transport: Optional[Transport] = None,
    sleep: Callable[[float], None] = time.sleep,
    assets_root: Path = ASSETS_DIR,
) -> JudgeOutcome:
    """Judge one item: prompt, call, validate, retry, cache.

    Never raises for per-item failures; the outcome's status says what
    happened. Schema-invalid responses retry immediately (model behavior,
    not load); retryable backend failures back off exponentially with
    jitter. Total backend calls never exceed ``max_retries + 1``.
    """
    bundle = build_prompt(strategy, language, exemplars, item.source, item.target, assets_root)
    prompt_bytes = json.dumps(bundle.wire_messages(), ensure_ascii=False).encode("utf-8")
    key = cache_key(config.model_id, strategy, language, item.id, item.ref, prompt_bytes)

    if cache is not None and use_cache_reads:
        record = cache.get(key)
        if record is not None:
            return _outcome_from_record(strategy, record)

    schema = output_schema(strategy)
    rng = random.Random()
    raw_last = ""
    status = OutcomeStatus.BACKEND_FAILURE
    attempts = 0
    for attempt in range(1, config.max_retries + 2):
        attempts = attempt
        try:
            raw_last = complete(config, bundle, schema, transport=transport)
        except BackendFailure as failure:
            raw_last = str(failure)
            status = OutcomeStatus.BACKEND_FAILURE
            if failure.retryable and attempt <= config.max_retries:
                sleep(_backoff_delay(attempt, rng))
                continue
            break
        try:
            parse_verdict(strategy, raw_last)
        except SchemaViolation:
            status = OutcomeStatus.INVALID_OUTPUT
            if attempt <= config.max_retries:
                continue
            break
        status = OutcomeStatus.OK
        break

    if cache is not None:
        cache.put(
            key,
            {
                "model_id": config.model_id,
                "strategy": strategy.value,
                "language": language,
                "entry_id": item.id,
                "ref": item.ref.value if item.ref else None,
                "status": status.value,
                "attempts": attempts,
                "raw_last": raw_last,
                "timestamp": datetime.now(timezone.utc).isoformat(),
            },
        )
    verdict = parse_verdict(strategy, raw_last) if status is OutcomeStatus.OK else None
    return JudgeOutcome(status=status, verdict=verdict, attempts=attempts, raw_last=raw_last)


def _outcome_from_record(strategy: Strategy, record: dict) -> JudgeOutcome:
    status = OutcomeStatus(record["status"])
    raw_last = record["raw_last"]
    verdict = parse_verdict(strategy, raw_last) if status is OutcomeStatus.OK else None
    return JudgeOutcome(status=status, verdict=verdict, attempts=int(record["attempts"]), raw_last=raw_last)
