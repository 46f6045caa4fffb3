"""Multiple-choice prompt construction.

The prompt template is frozen byte-for-byte:

    mention: <m> options: A. <name> B. <name> ... answer:

Option symbols are always the first |options| uppercase letters in order, so
a symbol is purely positional; order-swap augmentation permutes the option
contents and re-labels positions to decouple answers from positions.
"""

from __future__ import annotations

import json
import random
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .errors import (
    DuplicateEntityError,
    McelError,
    SingleOptionError,
    TooManyOptionsError,
    UnlabeledInstanceError,
)
from .ontology import Mention
from .vecindex import Candidate

SYMBOLS = string.ascii_uppercase

PROVENANCE_ORIGINAL = "original"
PROVENANCE_AUGMENTED = "augmented-swap"
PROVENANCE_ENHANCED = "retrieval-enhanced"


@dataclass(frozen=True)
class ChoiceOption:
    symbol: str
    entity_id: str
    display_name: str


@dataclass(frozen=True)
class ChoiceSet:
    """A mention plus symbol-labeled candidate entities."""

    mention_text: str
    options: tuple[ChoiceOption, ...]
    gold_symbol: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.mention_text:
            raise McelError("choice set needs a non-empty mention")
        if not 1 <= len(self.options) <= len(SYMBOLS):
            raise TooManyOptionsError(
                f"got {len(self.options)} options; must be 1..{len(SYMBOLS)}"
            )
        expected = tuple(SYMBOLS[: len(self.options)])
        actual = tuple(o.symbol for o in self.options)
        if actual != expected:
            raise McelError(f"symbols must be {expected}, got {actual}")
        ids = [o.entity_id for o in self.options]
        if len(set(ids)) != len(ids):
            raise DuplicateEntityError(f"duplicate entity ids in options: {ids}")
        if self.gold_symbol is not None and self.gold_symbol not in expected:
            raise McelError(
                f"gold symbol {self.gold_symbol!r} is not among {expected}"
            )

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(o.symbol for o in self.options)

    def option_for(self, symbol: str) -> ChoiceOption:
        index = SYMBOLS.find(symbol.upper())
        if not 0 <= index < len(self.options):
            raise McelError(f"symbol {symbol!r} is not assigned in this choice set")
        return self.options[index]

    @property
    def gold_entity_id(self) -> Optional[str]:
        if self.gold_symbol is None:
            return None
        return self.option_for(self.gold_symbol).entity_id


@dataclass(frozen=True)
class PromptInstance:
    """A rendered prompt; the text always ends with the literal "answer:"."""

    text: str
    expected_symbol: Optional[str] = None
    provenance: str = PROVENANCE_ORIGINAL

    def __post_init__(self) -> None:
        stripped = self.text.rstrip(" ")
        if not stripped.endswith("answer:"):
            raise McelError('prompt text must end with "answer:"')


def make_choice_set(
    mention: Union[Mention, str],
    candidates: Sequence[Candidate],
    gold_id: Optional[str] = None,
    train_mode: bool = False,
    gold_name: Optional[str] = None,
) -> ChoiceSet:
    """Turn rank-ordered candidates into a symbol-labeled choice set.

    The gold symbol is set when ``gold_id`` appears among the candidates. In
    training mode a missing gold replaces the last candidate (labels must
    exist for training instances; the last slot avoids teaching a position
    prior), taking ``gold_name`` as its display name. Evaluation mode never
    injects.
    """
    if not candidates:
        raise McelError("make_choice_set needs at least one candidate")
    if len(candidates) > len(SYMBOLS):
        raise TooManyOptionsError(f"{len(candidates)} candidates exceed the symbol alphabet")
    mention_text = mention.text if isinstance(mention, Mention) else mention
    entries = [(c.entity_id, c.matched_name) for c in candidates]
    gold_position = next(
        (i for i, (eid, _) in enumerate(entries) if gold_id is not None and eid == gold_id),
        None,
    )
    if gold_position is None and gold_id is not None and train_mode:
        if gold_name is None:
            raise McelError("gold injection needs the gold entity's display name")
        entries[-1] = (gold_id, gold_name)
        gold_position = len(entries) - 1
    options = tuple(
        ChoiceOption(symbol=SYMBOLS[i], entity_id=eid, display_name=name)
        for i, (eid, name) in enumerate(entries)
    )
    gold_symbol = SYMBOLS[gold_position] if gold_position is not None else None
    return ChoiceSet(mention_text=mention_text, options=options, gold_symbol=gold_symbol)


def render_text(choice_set: ChoiceSet) -> str:
    """The exact template; byte-deterministic."""
    parts = [f"mention: {choice_set.mention_text} options: "]
    for option in choice_set.options:
        parts.append(f"{option.symbol}. {option.display_name} ")
    parts.append("answer:")
    return "".join(parts)


def render(choice_set: ChoiceSet, provenance: str = PROVENANCE_ORIGINAL) -> PromptInstance:
    return PromptInstance(
        text=render_text(choice_set),
        expected_symbol=choice_set.gold_symbol,
        provenance=provenance,
    )


def augment_swap(choice_set: ChoiceSet, rng_seed: int) -> ChoiceSet:
    """Uniformly sampled non-identity permutation of the option contents.

    Symbols are re-assigned positionally and the gold symbol tracks the gold
    entity's new slot. Deterministic given ``rng_seed``.
    """
    n = len(choice_set.options)
    if n < 2:
        raise SingleOptionError("cannot swap a single-option choice set")
    if choice_set.gold_symbol is None:
        raise UnlabeledInstanceError("order-swap augmentation needs a labeled choice set")
    rng = random.Random(rng_seed)
    identity = list(range(n))
    perm = identity[:]
    while perm == identity:
        rng.shuffle(perm)
    old = choice_set.options
    options = tuple(
        ChoiceOption(symbol=SYMBOLS[i], entity_id=old[j].entity_id, display_name=old[j].display_name)
        for i, j in enumerate(perm)
    )
    gold_index = SYMBOLS.index(choice_set.gold_symbol)
    new_gold = SYMBOLS[perm.index(gold_index)]
    return ChoiceSet(
        mention_text=choice_set.mention_text, options=options, gold_symbol=new_gold
    )


@dataclass(frozen=True)
class ParsedAnswer:
    """Outcome of reading a generator's output against a choice set.

    Either ``symbol`` is one of the assigned symbols, or the output was
    unusable and ``fallback_entity_id`` holds the rank-1 candidate (the
    error-absorbing path; callers count these events).
    """

    symbol: Optional[str]
    fallback_entity_id: Optional[str] = None

    @property
    def invalid(self) -> bool:
        return self.symbol is None


def parse_answer(generator_output: str, choice_set: ChoiceSet) -> ParsedAnswer:
    """First non-whitespace character, case-folded, matched to a symbol."""
    trimmed = generator_output.strip()
    if trimmed:
        first = trimmed[0].upper()
        if first in choice_set.symbols:
            return ParsedAnswer(symbol=first)
    return ParsedAnswer(symbol=None, fallback_entity_id=choice_set.options[0].entity_id)


# --- JSONL export (audit trail and remote generator training data) ---


def prompt_record(
    instance: PromptInstance, ordinal: Optional[int] = None
) -> dict[str, object]:
    record: dict[str, object] = {
        "prompt": instance.text,
        "symbol": instance.expected_symbol,
        "provenance": instance.provenance,
    }
    if ordinal is not None:
        record["ordinal"] = ordinal
    return record


def write_prompts_jsonl(
    rows: Iterable[tuple[PromptInstance, Optional[int]]], path: str | Path
) -> int:
    """One JSON object per prompt: prompt, symbol, provenance, ordinal."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for instance, ordinal in rows:
            fh.write(json.dumps(prompt_record(instance, ordinal), ensure_ascii=False) + "\n")
            count += 1
    return count
