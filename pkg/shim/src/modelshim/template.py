"""Parsing and truncation for the engine's multiple-choice prompt format.

The wire format is fixed by the engine:

    mention: <m> options: A. <name> B. <name> ... answer:

Retrieval-enhanced prompts concatenate solved blocks (same shape, with the
gold symbol after "answer:") ahead of the final unsolved block. Truncation
drops leading (least relevant) blocks first; the final block is never split.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

_OPTION_SPLIT = re.compile(r"(?:^|\s)([A-Z])\. ")


@dataclass(frozen=True)
class Block:
    mention: str
    options: tuple[tuple[str, str], ...]  # (symbol, display name)
    answer: Optional[str]  # gold symbol for solved blocks, None for the input


class PromptFormatError(ValueError):
    pass


def split_blocks(prompt: str) -> list[str]:
    starts = [m.start() for m in re.finditer(r"mention: ", prompt)]
    if not starts:
        raise PromptFormatError("prompt contains no 'mention: ' block")
    pieces = []
    for i, start in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else len(prompt)
        pieces.append(prompt[start:end].strip())
    return pieces


def parse_block(text: str) -> Block:
    if not text.startswith("mention: "):
        raise PromptFormatError(f"block does not start with 'mention: ': {text[:40]!r}")
    try:
        mention, rest = text[len("mention: ") :].split(" options: ", 1)
    except ValueError as exc:
        raise PromptFormatError("block lacks an options section") from exc
    answer_at = rest.rfind(" answer:")
    if answer_at < 0:
        raise PromptFormatError("block lacks an answer marker")
    body, tail = rest[:answer_at], rest[answer_at + len(" answer:") :].strip()
    parts = _OPTION_SPLIT.split(body)
    if len(parts) < 3:
        raise PromptFormatError("block has no options")
    options = tuple(
        (parts[i], parts[i + 1].strip()) for i in range(1, len(parts) - 1, 2)
    )
    answer = tail[0] if tail else None
    return Block(mention=mention, options=options, answer=answer)


def parse_prompt(prompt: str) -> list[Block]:
    return [parse_block(piece) for piece in split_blocks(prompt)]


def truncate_prompt(prompt: str, max_chars: int) -> Optional[str]:
    """Drop leading blocks until the prompt fits; None when even the final
    block alone is too long (the caller answers 413)."""
    if len(prompt) <= max_chars:
        return prompt
    pieces = split_blocks(prompt)
    for keep_from in range(1, len(pieces)):
        shorter = " ".join(pieces[keep_from:])
        if len(shorter) <= max_chars:
            return shorter
    return None
