"""Corpus and hypothesis ingestion, gold-label derivation, exemplar selection.

File formats (UTF-8, tab-separated, ``\\n`` line endings, no quoting; tabs
and newlines are forbidden inside fields):

* corpus: header ``id<TAB>set<TAB>gender<TAB>src<TAB>ref_g<TAB>ref_n``;
  ``set`` is ``G`` or ``N``; ``gender`` is ``M``/``F`` for Set-G rows and
  ``-`` for Set-N rows.
* hypotheses: header ``id<TAB>src<TAB>hyp<TAB>gold`` with
  ``gold`` in {GENDERED, NEUTRAL}. Three-way source labels must be merged
  upstream (partially neutral counts as GENDERED).

Either file may start with a ``# language: <pair>`` line declaring the
language pair; a declaration that contradicts the caller's expectation is
a data error.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ConfigError, DataFormatError
from .labels import Gender, Label, RefChoice, Scenario, SetTag

CORPUS_HEADER = ["id", "set", "gender", "src", "ref_g", "ref_n"]
HYPOTHESES_HEADER = ["id", "src", "hyp", "gold"]
LANGUAGE_PRAGMA = "# language:"


@dataclass(frozen=True)
class CorpusEntry:
    """One corpus row: a source sentence with paired gendered/neutral references."""

    id: str
    language_pair: str
    set_tag: SetTag
    gender_tag: Optional[Gender]
    source: str
    ref_gendered: str
    ref_neutral: str

    def reference(self, ref: RefChoice) -> str:
        return self.ref_gendered if ref is RefChoice.REF_G else self.ref_neutral


@dataclass(frozen=True)
class HypothesisEntry:
    """One automatic translation with a human gold label about its neutrality."""

    id: str
    language_pair: str
    source: str
    hypothesis: str
    gold_label: Label


Corpus = list[CorpusEntry]


def _check_entry(entry: CorpusEntry, where: str) -> None:
    if not entry.id:
        raise DataFormatError(f"{where}: empty id")
    if not entry.source or not entry.ref_gendered or not entry.ref_neutral:
        raise DataFormatError(f"{where}: empty text field (id={entry.id})")
    if entry.set_tag is SetTag.SET_G and entry.gender_tag is None:
        raise DataFormatError(f"{where}: Set-G row without gender tag (id={entry.id})")
    if entry.set_tag is SetTag.SET_N and entry.gender_tag is not None:
        raise DataFormatError(f"{where}: Set-N row with gender tag (id={entry.id})")
    if entry.gender_tag is Gender.N:
        raise DataFormatError(f"{where}: gender tag must be M or F (id={entry.id})")


def _read_lines(path: Path) -> tuple[Optional[str], list[str]]:
    """Read a TSV file, returning (declared language pair or None, data lines)."""
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    declared = None
    while lines and lines[0].startswith("#"):
        head = lines.pop(0)
        if head.lower().startswith(LANGUAGE_PRAGMA):
            declared = head[len(LANGUAGE_PRAGMA):].strip()
    return declared, lines


def load_corpus(path: str | Path, expected_language: str) -> Corpus:
    """Load a corpus file, checking every row invariant.

    Row order is preserved. Raises DataFormatError on structural problems:
    missing columns, duplicate ids, gender tags inconsistent with the set
    tag, or a declared language that differs from ``expected_language``.
    """
    path = Path(path)
    declared, lines = _read_lines(path)
    if declared is not None and declared != expected_language:
        raise DataFormatError(
            f"{path}: language mismatch (file declares {declared!r}, expected {expected_language!r})"
        )
    if not lines:
        raise DataFormatError(f"{path}: missing header row")
    header = lines[0].split("\t")
    if header != CORPUS_HEADER:
        raise DataFormatError(f"{path}: bad header {header!r}, expected {CORPUS_HEADER!r}")

    entries: Corpus = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        where = f"{path}:{lineno}"
        fields = line.split("\t")
        if len(fields) != len(CORPUS_HEADER):
            raise DataFormatError(f"{where}: expected {len(CORPUS_HEADER)} columns, got {len(fields)}")
        entry_id, set_raw, gender_raw, src, ref_g, ref_n = fields
        try:
            set_tag = SetTag(set_raw)
        except ValueError:
            raise DataFormatError(f"{where}: unknown set tag {set_raw!r}") from None
        if gender_raw == "-" or gender_raw == "":
            gender: Optional[Gender] = None
        else:
            try:
                gender = Gender(gender_raw)
            except ValueError:
                raise DataFormatError(f"{where}: unknown gender tag {gender_raw!r}") from None
        entry = CorpusEntry(
            id=entry_id,
            language_pair=expected_language,
            set_tag=set_tag,
            gender_tag=gender,
            source=src,
            ref_gendered=ref_g,
            ref_neutral=ref_n,
        )
        _check_entry(entry, where)
        if entry.id in seen:
            raise DataFormatError(f"{where}: duplicate id {entry.id!r}")
        seen.add(entry.id)
        entries.append(entry)
    return entries


def write_corpus(corpus: Sequence[CorpusEntry], path: str | Path) -> None:
    """Write a corpus in the canonical format; inverse of :func:`load_corpus`."""
    path = Path(path)
    rows = []
    languages = {e.language_pair for e in corpus}
    if len(languages) > 1:
        raise DataFormatError(f"cannot write mixed-language corpus: {sorted(languages)}")
    if corpus:
        rows.append(f"{LANGUAGE_PRAGMA} {corpus[0].language_pair}")
    rows.append("\t".join(CORPUS_HEADER))
    for entry in corpus:
        _check_entry(entry, "write_corpus")
        for field_name in ("id", "source", "ref_gendered", "ref_neutral"):
            value = getattr(entry, field_name)
            if "\t" in value or "\n" in value:
                raise DataFormatError(f"tab or newline inside field {field_name} (id={entry.id})")
        gender = entry.gender_tag.value if entry.gender_tag else "-"
        rows.append(
            "\t".join(
                [entry.id, entry.set_tag.value, gender, entry.source, entry.ref_gendered, entry.ref_neutral]
            )
        )
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def split_counts(corpus: Iterable[CorpusEntry]) -> dict[SetTag, int]:
    """Number of entries per set tag."""
    counts = {SetTag.SET_G: 0, SetTag.SET_N: 0}
    for entry in corpus:
        counts[entry.set_tag] += 1
    return counts


def load_hypotheses(path: str | Path, language: str = "en-it") -> list[HypothesisEntry]:
    """Load automatic translations with binary neutrality gold labels.

    ``language`` stamps the entries when the file carries no ``# language:``
    declaration; a declaration wins (and must not contradict the format).
    """
    path = Path(path)
    declared, lines = _read_lines(path)
    pair = declared if declared is not None else language
    if not lines:
        raise DataFormatError(f"{path}: missing header row")
    header = lines[0].split("\t")
    if header != HYPOTHESES_HEADER:
        raise DataFormatError(f"{path}: bad header {header!r}, expected {HYPOTHESES_HEADER!r}")
    entries: list[HypothesisEntry] = []
    for lineno, line in enumerate(lines[1:], start=2):
        where = f"{path}:{lineno}"
        fields = line.split("\t")
        if len(fields) != len(HYPOTHESES_HEADER):
            raise DataFormatError(f"{where}: expected {len(HYPOTHESES_HEADER)} columns, got {len(fields)}")
        entry_id, src, hyp, gold_raw = fields
        if gold_raw not in (Label.GENDERED.value, Label.NEUTRAL.value):
            raise DataFormatError(
                f"{where}: unknown gold label {gold_raw!r} (must be GENDERED or NEUTRAL, pre-merged)"
            )
        entries.append(
            HypothesisEntry(
                id=entry_id,
                language_pair=pair,
                source=src,
                hypothesis=hyp,
                gold_label=Label(gold_raw),
            )
        )
    return entries


def label_counts(entries: Iterable[HypothesisEntry]) -> dict[Label, int]:
    """Number of hypotheses per gold class."""
    counts = {Label.GENDERED: 0, Label.NEUTRAL: 0}
    for entry in entries:
        counts[entry.gold_label] += 1
    return counts


def gold_label(entry: CorpusEntry, ref: RefChoice, scenario: Scenario) -> Label:
    """True label of an (entry, reference) pair under the given scenario.

    Judging the target alone: the gendered reference is GENDERED, the
    neutral one NEUTRAL. Judging against the source: the gendered
    reference is CORRECTLY GENDERED for Set-G entries and WRONGLY
    GENDERED for Set-N entries; the neutral reference is always NEUTRAL
    (a neutral translation is never wrong).
    """
    if scenario is Scenario.TARGET_ONLY:
        return Label.GENDERED if ref is RefChoice.REF_G else Label.NEUTRAL
    if ref is RefChoice.REF_N:
        return Label.NEUTRAL
    return Label.CORRECTLY_GENDERED if entry.set_tag is SetTag.SET_G else Label.WRONGLY_GENDERED


# Slate of cells filled by one round of exemplar selection: every
# set/gender/reference combination is covered within eight items.
_EXEMPLAR_CELLS: list[tuple[SetTag, Optional[Gender], RefChoice]] = [
    (SetTag.SET_G, Gender.M, RefChoice.REF_G),
    (SetTag.SET_G, Gender.M, RefChoice.REF_N),
    (SetTag.SET_G, Gender.F, RefChoice.REF_G),
    (SetTag.SET_G, Gender.F, RefChoice.REF_N),
    (SetTag.SET_N, None, RefChoice.REF_G),
    (SetTag.SET_N, None, RefChoice.REF_N),
    (SetTag.SET_N, None, RefChoice.REF_G),
    (SetTag.SET_N, None, RefChoice.REF_N),
]

ExemplarItem = tuple[CorpusEntry, RefChoice]


def select_exemplars(
    corpus: Corpus, k: int = 8, seed: Optional[int] = None
) -> list[ExemplarItem]:
    """Pick ``k`` distinct few-shot exemplar items, balanced across cells.

    Each slate of 8 covers Set-G M/F with both references plus four Set-N
    entries split evenly between references. Without a seed the first
    qualifying entry (in corpus order) fills each cell; with a seed the
    choice within each cell is pseudo-random but reproducible. Entries are
    never reused across cells.
    """
    if k <= 0 or k % len(_EXEMPLAR_CELLS) != 0:
        raise ConfigError(f"k must be a positive multiple of {len(_EXEMPLAR_CELLS)}, got {k}")
    rng = random.Random(seed) if seed is not None else None
    used: set[str] = set()
    picked: list[ExemplarItem] = []
    for slate in range(k // len(_EXEMPLAR_CELLS)):
        for set_tag, gender, ref in _EXEMPLAR_CELLS:
            candidates = [
                e
                for e in corpus
                if e.set_tag is set_tag and (gender is None or e.gender_tag is gender) and e.id not in used
            ]
            if not candidates:
                cell = f"{set_tag.name}/{gender.name if gender else '-'}/{ref.name}"
                raise ConfigError(f"no unused corpus entry for exemplar cell {cell}")
            entry = rng.choice(candidates) if rng is not None else candidates[0]
            used.add(entry.id)
            picked.append((entry, ref))
    return picked


def test_split(corpus: Corpus, exemplar_ids: Iterable[str]) -> Corpus:
    """Corpus minus the exemplar entries, order preserved."""
    ids = set(exemplar_ids)
    known = {e.id for e in corpus}
    missing = ids - known
    if missing:
        raise ConfigError(f"exemplar ids not present in corpus: {sorted(missing)}")
    return [e for e in corpus if e.id not in ids]


test_split.__test__ = False  # the name is API, not a pytest case
