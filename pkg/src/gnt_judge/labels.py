"""Closed label vocabularies shared by every module.

All enums are closed sets; wire strings are the exact tokens used in
judge payloads and data files (e.g. ``WRONGLY GENDERED`` with a space).
"""

from __future__ import annotations

import enum


class SetTag(enum.Enum):
    """Source-side split: entries with explicit gender cues (G) or without (N)."""

    SET_G = "G"
    SET_N = "N"


class Gender(enum.Enum):
    """Social gender expressed by a phrase or required by a source cue."""

    M = "M"
    F = "F"
    N = "N"


class Assessment(enum.Enum):
    """Cross-lingual correctness of a phrase's gender against the source."""

    CORRECT = "correct"
    WRONG = "wrong"


class RefChoice(enum.Enum):
    """Which professional reference translation of an entry is judged."""

    REF_G = "REF_G"
    REF_N = "REF_N"


class Scenario(enum.Enum):
    """Evaluation scenario: judge the target alone, or against its source."""

    TARGET_ONLY = "TARGET_ONLY"
    SOURCE_TARGET = "SOURCE_TARGET"


class Label(enum.Enum):
    """Sentence-level judgment labels across both scenarios."""

    GENDERED = "GENDERED"
    NEUTRAL = "NEUTRAL"
    CORRECTLY_GENDERED = "CORRECTLY GENDERED"
    WRONGLY_GENDERED = "WRONGLY GENDERED"

    @property
    def wire(self) -> str:
        return self.value

    @classmethod
    def from_wire(cls, text: str) -> "Label":
        for member in cls:
            if member.value == text:
                return member
        raise ValueError(f"unknown label {text!r}")


class Strategy(enum.Enum):
    """The four judge prompt strategies.

    MONO_* judge the target text alone; CROSS_* judge it against the
    source. *_L request a sentence label only; *_PL request phrase
    annotations first, then the label.
    """

    MONO_L = "MONO_L"
    MONO_PL = "MONO_PL"
    CROSS_L = "CROSS_L"
    CROSS_PL = "CROSS_PL"

    @property
    def takes_source(self) -> bool:
        return self in (Strategy.CROSS_L, Strategy.CROSS_PL)

    @property
    def wants_phrases(self) -> bool:
        return self in (Strategy.MONO_PL, Strategy.CROSS_PL)

    @property
    def scenario(self) -> Scenario:
        return Scenario.SOURCE_TARGET if self.takes_source else Scenario.TARGET_ONLY

    @property
    def asset_name(self) -> str:
        """Lowercase token used in asset paths and config files."""
        return self.value.lower()


class Consistency(enum.Enum):
    """Whether a verdict's phrase annotations support its stated label."""

    CONSISTENT = "CONSISTENT"
    INCONSISTENT = "INCONSISTENT"
    NOT_APPLICABLE = "NOT_APPLICABLE"


# Sentence labels admitted per scenario: judging a target alone is binary,
# judging against the source splits GENDERED by correctness.
SCENARIO_LABELS: dict[Scenario, frozenset[Label]] = {
    Scenario.TARGET_ONLY: frozenset({Label.GENDERED, Label.NEUTRAL}),
    Scenario.SOURCE_TARGET: frozenset(
        {Label.NEUTRAL, Label.CORRECTLY_GENDERED, Label.WRONGLY_GENDERED}
    ),
}

# Placeholder used wherever a prediction slot must record a failed item.
INVALID = "INVALID"


def target_language(language_pair: str) -> str:
    """Extract the target-language tag from a pair tag like ``en-it``."""
    if "-" in language_pair:
        return language_pair.rsplit("-", 1)[1]
    return language_pair
