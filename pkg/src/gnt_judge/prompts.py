"""Prompt construction: system instructions, few-shot exemplars, query turns.

Instruction templates are external text assets, one per
(strategy, language) at ``templates/<strategy>/<language>.txt``, written
in English with two placeholders: ``{LANGUAGE}`` (the language's English
name) and ``{EXAMPLES_BLOCK}`` (the per-language guideline examples of
masculine/feminine/neutral phrases, rendered from
``templates/examples/<language>.json``). Exemplar assistant turns are
serialized with the same canonical format the judges must produce, so the
demonstrations double as format examples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .corpus import CorpusEntry, ExemplarItem, gold_label
from .errors import ConfigError
from .labels import Assessment, Gender, RefChoice, Strategy, target_language
from .verdict import JudgeVerdict, PhraseAnnotation, derive_label, serialize_verdict

ASSETS_DIR = Path(__file__).resolve().parent / "assets"

Turn = tuple[str, str]
# Annotated phrases for exemplar references: entry id -> reference name -> phrase dicts.
ExemplarAnnotations = Mapping[str, Mapping[str, Sequence[Mapping[str, str]]]]


@dataclass(frozen=True)
class TemplateAsset:
    """Raw instruction template for one (strategy, language) pair."""

    strategy: Strategy
    language: str
    text: str


@dataclass(frozen=True)
class PromptBundle:
    """A complete judge prompt: system instruction, exemplar turns, query."""

    strategy: Strategy
    language: str
    system: str
    turns: tuple[Turn, ...]
    query: str

    def wire_messages(self) -> list[dict[str, str]]:
        """Chat-completion message list, system first, query last."""
        messages = [{"role": "system", "content": self.system}]
        messages.extend({"role": role, "content": content} for role, content in self.turns)
        messages.append({"role": "user", "content": self.query})
        return messages


@lru_cache(maxsize=None)
def _read_text(path: Path) -> str:
    return path.read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _language_name(language: str, assets_root: Path) -> str:
    names_path = assets_root / "templates" / "languages.json"
    try:
        names = _read_json(names_path)
    except FileNotFoundError:
        raise ConfigError(f"missing language registry asset {names_path}") from None
    if language not in names:
        raise ConfigError(f"unsupported language {language!r} (known: {sorted(names)})")
    return names[language]


def _quoted_list(phrases: Sequence[str]) -> str:
    quoted = [f'"{p}"' for p in phrases]
    if len(quoted) == 1:
        return quoted[0]
    return ", ".join(quoted[:-1]) + f", and {quoted[-1]}"


def _examples_block(strategy: Strategy, language: str, assets_root: Path) -> str:
    path = assets_root / "templates" / "examples" / f"{language}.json"
    try:
        examples = _read_json(path)
    except FileNotFoundError:
        raise ConfigError(f"missing guideline examples asset {path}") from None
    m, f, n = _quoted_list(examples["masculine"]), _quoted_list(examples["feminine"]), _quoted_list(examples["neutral"])
    if strategy.wants_phrases:
        return (
            f"- Phrases like {m} are masculine [M];\n"
            f"- Phrases like {f} are feminine [F];\n"
            f"- Phrases like {n} do not express social gender, "
            "therefore they must be considered neutral [N]."
        )
    return (
        f"- Phrases like {m} are masculine;\n"
        f"- Phrases like {f} are feminine;\n"
        f"- Phrases like {n} do not express social gender, "
        "therefore they must be considered neutral."
    )


def load_template(strategy: Strategy, language: str, assets_root: Path = ASSETS_DIR) -> TemplateAsset:
    path = assets_root / "templates" / strategy.asset_name / f"{language}.txt"
    try:
        text = _read_text(path)
    except FileNotFoundError:
        raise ConfigError(f"no instruction template for ({strategy.value}, {language}): {path}") from None
    return TemplateAsset(strategy=strategy, language=language, text=text)


def system_instruction(strategy: Strategy, language: str, assets_root: Path = ASSETS_DIR) -> str:
    """Fully substituted English system instruction for the pair."""
    asset = load_template(strategy, language, assets_root)
    text = asset.text.replace("{LANGUAGE}", _language_name(language, assets_root))
    text = text.replace("{EXAMPLES_BLOCK}", _examples_block(strategy, language, assets_root))
    for placeholder in ("{LANGUAGE}", "{EXAMPLES_BLOCK}"):
        if placeholder in text:
            raise ConfigError(f"template for ({strategy.value}, {language}) left {placeholder} unsubstituted")
    return text


def render_query(strategy: Strategy, source: Optional[str], target: str) -> str:
    """The user-turn text carrying the item to judge, per strategy arity."""
    if strategy.takes_source:
        if source is None:
            raise ConfigError(f"{strategy.value} requires a source sentence")
        return f"Source: {source}\nTarget: {target}"
    if source is not None:
        raise ConfigError(f"{strategy.value} takes the target sentence only")
    return f"Sentence: {target}"


def load_exemplar_annotations(language: str, assets_root: Path = ASSETS_DIR) -> ExemplarAnnotations:
    """Hand-curated phrase annotations for exemplar references."""
    path = assets_root / "exemplars" / f"{language}.json"
    try:
        return _read_json(path)
    except FileNotFoundError:
        raise ConfigError(f"no exemplar annotations for language {language!r}: {path}") from None


def _exemplar_phrases(
    strategy: Strategy,
    entry: CorpusEntry,
    ref: RefChoice,
    annotations: ExemplarAnnotations,
) -> tuple[PhraseAnnotation, ...]:
    raw = annotations.get(entry.id, {}).get(ref.name)
    if raw is None:
        raise ConfigError(
            f"exemplar {entry.id}/{ref.name} has no gold phrase annotations "
            f"(required for {strategy.value})"
        )
    phrases = []
    for item in raw:
        assessment: Optional[Assessment] = None
        if strategy is Strategy.CROSS_PL:
            assessment = Assessment(item["assessment"])
        phrases.append(PhraseAnnotation(text=item["text"], gender=Gender(item["gender"]), assessment=assessment))
    return tuple(phrases)


def render_exemplar(
    strategy: Strategy,
    item: ExemplarItem,
    annotations: Optional[ExemplarAnnotations] = None,
    assets_root: Path = ASSETS_DIR,
) -> tuple[Turn, Turn]:
    """One few-shot demonstration: the item as a user turn, its gold verdict as the answer.

    Phrase-annotating strategies need curated phrase lists; the rendered
    answer is checked to derive exactly the gold label before it is used.
    """
    entry, ref = item
    target = entry.reference(ref)
    if not target or not entry.source:
        raise ConfigError(f"exemplar {entry.id} has empty text fields")
    label = gold_label(entry, ref, strategy.scenario)
    if strategy.wants_phrases:
        if annotations is None:
            annotations = load_exemplar_annotations(target_language(entry.language_pair), assets_root)
        phrases = _exemplar_phrases(strategy, entry, ref, annotations)
        derived = derive_label(strategy, phrases)
        if derived != label:
            raise ConfigError(
                f"exemplar {entry.id}/{ref.name}: curated phrases derive "
                f"{derived.wire}, but the gold label is {label.wire}"
            )
        verdict = JudgeVerdict(strategy=strategy, stated_label=label, phrases=phrases)
    else:
        verdict = JudgeVerdict(strategy=strategy, stated_label=label, phrases=None)
    source = entry.source if strategy.takes_source else None
    return (("user", render_query(strategy, source, target)), ("assistant", serialize_verdict(verdict)))


def build_prompt(
    strategy: Strategy,
    language: str,
    exemplars: Sequence[tuple[Turn, Turn]],
    source: Optional[str],
    target: str,
    assets_root: Path = ASSETS_DIR,
) -> PromptBundle:
    """Assemble the full bundle. Pure: identical inputs give identical bytes."""
    if strategy.takes_source and source is None:
        raise ConfigError(f"{strategy.value} requires a source sentence")
    if not strategy.takes_source and source is not None:
        raise ConfigError(f"{strategy.value} takes the target sentence only")
    turns: list[Turn] = []
    for user_turn, assistant_turn in exemplars:
        turns.append(user_turn)
        turns.append(assistant_turn)
    return PromptBundle(
        strategy=strategy,
        language=language,
        system=system_instruction(strategy, language, assets_root),
        turns=tuple(turns),
        query=render_query(strategy, source, target),
    )
