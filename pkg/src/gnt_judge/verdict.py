"""Judge output schemas, strict payload parsing, and label derivation.

The canonical payload is minified JSON with the field order ``phrases``,
``label``. Label-only strategies carry just ``label``; phrase-annotating
strategies carry a ``phrases`` array whose items are
``{"text": ..., "gender": "M"|"F"|"N"}`` plus, cross-lingually, an
``"assessment": "correct"|"wrong"`` against the source. Parsing is
closed-world: unknown fields, wrong enum strings, and missing fields all
fail, mirroring generation constrained to the schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ConfigError, SchemaViolation
from .labels import Assessment, Consistency, Gender, Label, Strategy

_MONO_LABELS = [Label.GENDERED.wire, Label.NEUTRAL.wire]
_CROSS_LABELS = [Label.NEUTRAL.wire, Label.CORRECTLY_GENDERED.wire, Label.WRONGLY_GENDERED.wire]


@dataclass(frozen=True)
class PhraseAnnotation:
    """A verbatim span referring to human beings, with its gender reading."""

    text: str
    gender: Gender
    assessment: Optional[Assessment] = None


@dataclass(frozen=True)
class JudgeVerdict:
    """A validated judge output. ``raw`` keeps the original payload for audit."""

    strategy: Strategy
    stated_label: Label
    phrases: Optional[tuple[PhraseAnnotation, ...]] = None
    raw: str = field(default="", compare=False)


@dataclass(frozen=True)
class OutputSchema:
    """A strategy's machine-readable output contract (JSON Schema 2020-12)."""

    strategy: Strategy
    definition: dict


def _phrase_item_schema(strategy: Strategy) -> dict:
    properties: dict[str, Any] = {
        "text": {"type": "string", "minLength": 1},
        "gender": {"enum": [g.value for g in Gender]},
    }
    required = ["text", "gender"]
    item: dict[str, Any] = {
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": False,
    }
    if strategy is Strategy.CROSS_PL:
        properties["assessment"] = {"enum": [a.value for a in Assessment]}
        required.append("assessment")
        # A neutral phrase is correct by definition, never "wrong".
        item["if"] = {"properties": {"gender": {"const": Gender.N.value}}, "required": ["gender"]}
        item["then"] = {"properties": {"assessment": {"const": Assessment.CORRECT.value}}}
    return item


def output_schema(strategy: Strategy) -> OutputSchema:
    """The JSON Schema a judge's raw output must satisfy for ``strategy``."""
    labels = _CROSS_LABELS if strategy.takes_source else _MONO_LABELS
    properties: dict[str, Any] = {}
    required: list[str] = []
    if strategy.wants_phrases:
        properties["phrases"] = {"type": "array", "items": _phrase_item_schema(strategy)}
        required.append("phrases")
    properties["label"] = {"enum": labels}
    required.append("label")
    definition = {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": f"{strategy.asset_name}_verdict",
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": False,
    }
    return OutputSchema(strategy=strategy, definition=definition)


def _no_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict:
    obj: dict[str, Any] = {}
    for key, value in pairs:
        if key in obj:
            raise SchemaViolation("", f"duplicate key {key!r}")
        obj[key] = value
    return obj


def _parse_phrase(strategy: Strategy, item: Any, path: str) -> PhraseAnnotation:
    if not isinstance(item, dict):
        raise SchemaViolation(path, "phrase annotation must be an object")
    allowed = {"text", "gender"} | ({"assessment"} if strategy is Strategy.CROSS_PL else set())
    extra = set(item) - allowed
    if extra:
        raise SchemaViolation(f"{path}.{sorted(extra)[0]}", "unknown field")
    missing = allowed - set(item)
    if missing:
        raise SchemaViolation(f"{path}.{sorted(missing)[0]}", "missing field")

    text = item["text"]
    if not isinstance(text, str) or not text:
        raise SchemaViolation(f"{path}.text", "must be a non-empty string")
    gender_raw = item["gender"]
    if not isinstance(gender_raw, str) or gender_raw not in {g.value for g in Gender}:
        raise SchemaViolation(f"{path}.gender", f"must be one of M, F, N, got {gender_raw!r}")
    gender = Gender(gender_raw)

    assessment: Optional[Assessment] = None
    if strategy is Strategy.CROSS_PL:
        assessment_raw = item["assessment"]
        if not isinstance(assessment_raw, str) or assessment_raw not in {a.value for a in Assessment}:
            raise SchemaViolation(
                f"{path}.assessment", f"must be 'correct' or 'wrong', got {assessment_raw!r}"
            )
        assessment = Assessment(assessment_raw)
        if gender is Gender.N and assessment is not Assessment.CORRECT:
            raise SchemaViolation(f"{path}.assessment", "a neutral phrase is always correct")
    return PhraseAnnotation(text=text, gender=gender, assessment=assessment)


def parse_verdict(strategy: Strategy, raw: str) -> JudgeVerdict:
    """Strictly validate a raw payload against ``strategy``'s output contract.

    Raises :class:`SchemaViolation` carrying the first violation's path and
    reason; never repairs malformed output.
    """
    try:
        payload = json.loads(raw, object_pairs_hook=_no_duplicate_keys)
    except SchemaViolation:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaViolation("", f"not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise SchemaViolation("", "payload must be a JSON object")

    allowed = {"label"} | ({"phrases"} if strategy.wants_phrases else set())
    extra = set(payload) - allowed
    if extra:
        raise SchemaViolation(sorted(extra)[0], "unknown field")
    missing = allowed - set(payload)
    if missing:
        raise SchemaViolation(sorted(missing)[0], "missing field")

    phrases: Optional[tuple[PhraseAnnotation, ...]] = None
    if strategy.wants_phrases:
        raw_phrases = payload["phrases"]
        if not isinstance(raw_phrases, list):
            raise SchemaViolation("phrases", "must be an array")
        phrases = tuple(
            _parse_phrase(strategy, item, f"phrases[{i}]") for i, item in enumerate(raw_phrases)
        )

    label_raw = payload["label"]
    vocabulary = _CROSS_LABELS if strategy.takes_source else _MONO_LABELS
    if not isinstance(label_raw, str) or label_raw not in vocabulary:
        raise SchemaViolation("label", f"must be one of {vocabulary}, got {label_raw!r}")
    return JudgeVerdict(
        strategy=strategy, stated_label=Label.from_wire(label_raw), phrases=phrases, raw=raw
    )


def derive_label(strategy: Strategy, phrases: tuple[PhraseAnnotation, ...] | list[PhraseAnnotation]) -> Label:
    """Sentence label implied by a phrase-annotation list.

    Target-only: any masculine or feminine phrase makes the sentence
    GENDERED. Cross-lingually, any wrongly gendered phrase dominates
    (WRONGLY GENDERED); otherwise gendered phrases are all justified
    (CORRECTLY GENDERED); a phrase-free or all-neutral sentence is
    NEUTRAL.
    """
    if not strategy.wants_phrases:
        raise ConfigError(f"derive_label is undefined for {strategy.value}")
    gendered = [p for p in phrases if p.gender is not Gender.N]
    if strategy is Strategy.MONO_PL:
        return Label.GENDERED if gendered else Label.NEUTRAL
    if any(p.assessment is Assessment.WRONG for p in gendered):
        return Label.WRONGLY_GENDERED
    if gendered:
        return Label.CORRECTLY_GENDERED
    return Label.NEUTRAL


def check_consistency(verdict: JudgeVerdict) -> Consistency:
    """Whether the stated label matches the label its own phrases imply."""
    if not verdict.strategy.wants_phrases or verdict.phrases is None:
        return Consistency.NOT_APPLICABLE
    derived = derive_label(verdict.strategy, verdict.phrases)
    return Consistency.CONSISTENT if derived == verdict.stated_label else Consistency.INCONSISTENT


def serialize_verdict(verdict: JudgeVerdict) -> str:
    """Canonical minified serialization; inverse of :func:`parse_verdict`."""
    vocabulary = _CROSS_LABELS if verdict.strategy.takes_source else _MONO_LABELS
    if verdict.stated_label.wire not in vocabulary:
        raise ConfigError(
            f"label {verdict.stated_label.wire!r} is not valid for {verdict.strategy.value}"
        )
    if verdict.strategy.wants_phrases != (verdict.phrases is not None):
        raise ConfigError(f"phrase list presence does not match {verdict.strategy.value}")
    obj: dict[str, Any] = {}
    if verdict.phrases is not None:
        items = []
        for phrase in verdict.phrases:
            item: dict[str, Any] = {"text": phrase.text, "gender": phrase.gender.value}
            if verdict.strategy is Strategy.CROSS_PL:
                if phrase.assessment is None:
                    raise ConfigError("cross-lingual phrase annotations need an assessment")
                item["assessment"] = phrase.assessment.value
            item_text = item["text"]
            if not item_text:
                raise ConfigError("phrase text must be non-empty")
            items.append(item)
        obj["phrases"] = items
    obj["label"] = verdict.stated_label.wire
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))
