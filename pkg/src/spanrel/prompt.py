"""Prompt layout: label prompts and text packed into one token sequence.

The sequence is ``[ENT] e1 ... [ENT] eK [REL] r1 ... [REL] rM [SEP] t0 ... tN``.
Multi-word labels are expanded in place, one slot per whitespace word.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

ENT_TOKEN = "[ENT]"
REL_TOKEN = "[REL]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (ENT_TOKEN, REL_TOKEN, SEP_TOKEN)


class ConfigurationError(ValueError):
    """Raised when a model or prompt is configured inconsistently."""


@dataclass(frozen=True)
class PromptLayout:
    tokens: tuple
    ent_delimiter_positions: tuple
    rel_delimiter_positions: tuple
    text_start: int
    word_count: int

    @property
    def num_entity_types(self) -> int:
        return len(self.ent_delimiter_positions)

    @property
    def num_relation_types(self) -> int:
        return len(self.rel_delimiter_positions)

    @property
    def words(self) -> tuple:
        return self.tokens[self.text_start:]

    def label_tokens(self, kind: str, index: int) -> tuple:
        """Return the label words following delimiter ``index`` of ``kind``.

        ``kind`` is ``"entity"`` or ``"relation"``.
        """
        positions = self.ent_delimiter_positions if kind == "entity" else self.rel_delimiter_positions
        start = positions[index] + 1
        stop = start
        while self.tokens[stop] not in SPECIAL_TOKENS:
            stop += 1
        return self.tokens[start:stop]


def truncate_words(words: Sequence[str], max_words: int) -> List[str]:
    """Keep the first ``max_words`` words. No sliding window."""
    if max_words <= 0:
        raise ValueError(f"max_words must be positive, got {max_words}")
    return list(words[:max_words])


def _label_words(label: str) -> List[str]:
    if not isinstance(label, str) or not label.strip():
        raise ConfigurationError(f"labels must be nonempty strings, got {label!r}")
    return label.split()


def build_prompt(
    entity_labels: Sequence[str],
    relation_labels: Sequence[str],
    words: Sequence[str],
) -> PromptLayout:
    if not entity_labels:
        raise ConfigurationError("at least one entity label is required")

    tokens: List[str] = []
    ent_positions: List[int] = []
    rel_positions: List[int] = []
    for label in entity_labels:
        ent_positions.append(len(tokens))
        tokens.append(ENT_TOKEN)
        tokens.extend(_label_words(label))
    for label in relation_labels:
        rel_positions.append(len(tokens))
        tokens.append(REL_TOKEN)
        tokens.extend(_label_words(label))
    tokens.append(SEP_TOKEN)
    text_start = len(tokens)
    tokens.extend(words)

    return PromptLayout(
        tokens=tuple(tokens),
        ent_delimiter_positions=tuple(ent_positions),
        rel_delimiter_positions=tuple(rel_positions),
        text_start=text_start,
        word_count=len(words),
    )
