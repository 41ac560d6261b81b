from __future__ import annotations

from typing import Optional

import pytest

from gnt_judge.corpus import CorpusEntry
from gnt_judge.labels import Gender, SetTag


def make_entry(
    entry_id: str,
    set_tag: SetTag = SetTag.SET_N,
    gender: Optional[Gender] = None,
    source: str = "A plain source sentence.",
    ref_gendered: str = "Frase con genere.",
    ref_neutral: str = "Frase neutra.",
    language: str = "en-it",
) -> CorpusEntry:
    return CorpusEntry(
        id=entry_id,
        language_pair=language,
        set_tag=set_tag,
        gender_tag=gender,
        source=source,
        ref_gendered=ref_gendered,
        ref_neutral=ref_neutral,
    )


@pytest.fixture
def balanced_corpus() -> list[CorpusEntry]:
    """16 entries: 4 masculine, 4 feminine, 8 cue-free."""
    entries = []
    for i in range(4):
        entries.append(make_entry(f"m-{i}", SetTag.SET_G, Gender.M, source=f"He said thing {i}."))
        entries.append(make_entry(f"f-{i}", SetTag.SET_G, Gender.F, source=f"She said thing {i}."))
    for i in range(8):
        entries.append(make_entry(f"n-{i}", SetTag.SET_N, source=f"Someone said thing {i}."))
    return entries
