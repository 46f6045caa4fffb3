"""Answer-selection backends behind one contract.

Every backend returns the chosen symbol plus a probability map over exactly
the allowed symbols (finite, summing to 1, argmax consistent with the chosen
symbol). The scripted oracle exists for tests, the lexical heuristic is the
fully offline baseline, and the remote backend speaks the model-shim
/generate protocol.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .errors import (
    MalformedRemoteResponseError,
    McelError,
    RemoteUnavailableError,
)
from .mcp import ChoiceSet, PromptInstance
from .ontology import Ontology

_SCORE_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Answer:
    """A chosen symbol with per-symbol probabilities and the raw model text."""

    symbol: str
    scores: dict[str, float]
    raw_output: str


class GeneratorBackend(Protocol):
    kind: str

    def answer(self, prompt: PromptInstance, choice_set: ChoiceSet) -> Answer: ...

    def generate_name(self, prompt: PromptInstance, choice_set: ChoiceSet) -> str: ...


def _validate_answer(answer: Answer, choice_set: ChoiceSet, remote: bool) -> Answer:
    error = MalformedRemoteResponseError if remote else McelError
    allowed = choice_set.symbols
    if set(answer.scores) != set(allowed):
        raise error(
            f"score keys {sorted(answer.scores)} != allowed symbols {sorted(allowed)}"
        )
    values = list(answer.scores.values())
    if not all(math.isfinite(v) for v in values):
        raise error("scores contain non-finite values")
    total = sum(values)
    if abs(total - 1.0) > _SCORE_SUM_TOLERANCE:
        raise error(f"scores sum to {total!r}, expected 1 within {_SCORE_SUM_TOLERANCE}")
    # ties break alphabetically; allowed symbols are already A, B, C, ...
    top = max(answer.scores[s] for s in allowed)
    best = next(s for s in allowed if answer.scores[s] == top)
    if answer.symbol != best:
        raise error(f"symbol {answer.symbol!r} is not the argmax of the scores ({best!r})")
    return answer


def answer(
    backend: GeneratorBackend, prompt: PromptInstance, choice_set: ChoiceSet
) -> Answer:
    """Ask a backend for its symbol; enforce the Answer invariants."""
    result = backend.answer(prompt, choice_set)
    return _validate_answer(result, choice_set, remote=backend.kind == "remote-seq2seq")


@dataclass(frozen=True)
class NameAnswer:
    """Free-text entity-name generation (the "generate names" ablation)."""

    emitted_name: str
    entity_id: Optional[str]  # None = NoMatch

    @property
    def no_match(self) -> bool:
        return self.entity_id is None


def answer_generate_names(
    backend: GeneratorBackend,
    prompt: PromptInstance,
    choice_set: ChoiceSet,
    ontology: Ontology,
) -> NameAnswer:
    """Let the backend emit a name and resolve it by exact dictionary lookup.

    Resolution failures are NoMatch (counted as incorrect); an ambiguous name
    resolves to the smallest entity id so the outcome is deterministic.
    """
    emitted = backend.generate_name(prompt, choice_set)
    ids = ontology.lookup_by_name(emitted.strip()) if emitted.strip() else set()
    return NameAnswer(emitted_name=emitted, entity_id=min(ids) if ids else None)


# --- backends ---


class ScriptedOracleBackend:
    """Answers the gold symbol read from the choice set; tests only.

    When the retriever missed the gold entity there is no right answer, so
    the oracle answers "A" — end-to-end accuracy then equals retriever
    recall@N exactly.
    """

    kind = "scripted-oracle"

    def answer(self, prompt: PromptInstance, choice_set: ChoiceSet) -> Answer:
        chosen = choice_set.gold_symbol or choice_set.symbols[0]
        scores = {s: 1.0 if s == chosen else 0.0 for s in choice_set.symbols}
        return Answer(symbol=chosen, scores=scores, raw_output=chosen)

    def generate_name(self, prompt: PromptInstance, choice_set: ChoiceSet) -> str:
        symbol = choice_set.gold_symbol or choice_set.symbols[0]
        return choice_set.option_for(symbol).display_name


def _trigrams(text: str) -> frozenset[str]:
    padded = f" {text.casefold()} "
    return frozenset(padded[i : i + 3] for i in range(len(padded) - 2))


def trigram_overlap(a: str, b: str) -> float:
    """Cosine-normalized character trigram set overlap; 1.0 iff identical sets."""
    ta, tb = _trigrams(a), _trigrams(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / math.sqrt(len(ta) * len(tb))


class LexicalHeuristicBackend:
    """Deterministic trigram-overlap baseline: softmax (temperature 1) over
    the overlap between the mention and each option's display name."""

    kind = "lexical-heuristic"

    def answer(self, prompt: PromptInstance, choice_set: ChoiceSet) -> Answer:
        overlaps = np.array(
            [
                trigram_overlap(choice_set.mention_text, option.display_name)
                for option in choice_set.options
            ]
        )
        shifted = np.exp(overlaps - overlaps.max())
        probs = shifted / shifted.sum()
        best = int(np.argmax(probs))  # first max = alphabetical tie-break
        scores = {
            option.symbol: float(p) for option, p in zip(choice_set.options, probs)
        }
        return Answer(
            symbol=choice_set.options[best].symbol,
            scores=scores,
            raw_output=choice_set.options[best].symbol,
        )

    def generate_name(self, prompt: PromptInstance, choice_set: ChoiceSet) -> str:
        # A generative linker without candidate constraints rewrites the
        # mention toward a canonical form; the heuristic's best rewrite is
        # the mention itself, which misses whenever the surface is not a
        # dictionary name (the cost the symbol mode avoids).
        return choice_set.mention_text


class RemoteSeq2SeqBackend:
    """Client for the model-shim POST /generate endpoint."""

    kind = "remote-seq2seq"

    def __init__(
        self, endpoint: str, timeout: float = 60.0, retries: int = 2
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries

    def _post(self, payload: dict) -> dict:
        import requests

        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                response = requests.post(
                    f"{self.endpoint}/generate", json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(min(2.0**attempt * 0.2, 2.0))
                continue
            if response.status_code != 200:
                raise RemoteUnavailableError(
                    f"generate endpoint returned HTTP {response.status_code}: "
                    f"{response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise MalformedRemoteResponseError(
                    f"generate response is not JSON: {exc}"
                ) from exc
        raise RemoteUnavailableError(f"generate endpoint unreachable: {last_error}")

    def answer(self, prompt: PromptInstance, choice_set: ChoiceSet) -> Answer:
        payload = {
            "prompt": prompt.text,
            "allowed_symbols": list(choice_set.symbols),
            "max_new_tokens": 1,
        }
        body = self._post(payload)
        try:
            result = Answer(
                symbol=str(body["symbol"]),
                scores={str(k): float(v) for k, v in body["scores"].items()},
                raw_output=str(body.get("raw", "")),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise MalformedRemoteResponseError(
                f"generate response missing fields: {exc}"
            ) from exc
        return _validate_answer(result, choice_set, remote=True)

    def generate_name(self, prompt: PromptInstance, choice_set: ChoiceSet) -> str:
        # The wire contract is symbol-oriented; the unconstrained decode is
        # exposed in the audit field, which is what name generation needs.
        payload = {
            "prompt": prompt.text,
            "allowed_symbols": list(choice_set.symbols),
            "max_new_tokens": 16,
        }
        body = self._post(payload)
        raw = body.get("raw")
        if not isinstance(raw, str):
            raise MalformedRemoteResponseError("generate response lacks a raw decode")
        return raw


def resolve_backend(name: str, endpoint: Optional[str] = None) -> GeneratorBackend:
    if name == "scripted-oracle":
        return ScriptedOracleBackend()
    if name == "lexical-heuristic":
        return LexicalHeuristicBackend()
    if name == "remote-seq2seq":
        if not endpoint:
            raise McelError("remote-seq2seq backend needs --generator-endpoint")
        return RemoteSeq2SeqBackend(endpoint)
    raise McelError(f"unknown generator backend {name!r}")
