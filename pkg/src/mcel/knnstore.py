"""Datastore of solved training instances and retrieval-enhanced prompts.

Each entry pairs a mention embedding (the key) with the labeled training
instance it came from. Queries are exact top-K cosine over all keys, with the
query's own ordinal filtered out during training to avoid leaking the answer.
The enhanced prompt concatenates each retrieved instance, rendered and
immediately followed by its gold symbol, ahead of the unsolved input block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embedder import EmbedderBackend, EmbeddingVector, embed
from .errors import CheckpointError, DimensionMismatchError, McelError, UnlabeledInstanceError
from .mcp import (
    PROVENANCE_ENHANCED,
    ChoiceOption,
    ChoiceSet,
    PromptInstance,
    render_text,
)
from .ontology import Mention

_STORE_MAGIC = b"MCEL-KNNSTORE"
_STORE_VERSION = 1
_EMBED_CHUNK = 2048


@dataclass(frozen=True)
class DatastoreEntry:
    ordinal: int
    mention_text: str
    choice_set: ChoiceSet

    @property
    def gold_symbol(self) -> str:
        assert self.choice_set.gold_symbol is not None
        return self.choice_set.gold_symbol


@dataclass(frozen=True)
class Neighbor:
    entry: DatastoreEntry
    similarity: float


@dataclass(frozen=True)
class NeighborSet:
    neighbors: tuple[Neighbor, ...]

    def __post_init__(self) -> None:
        sims = [n.similarity for n in self.neighbors]
        if any(a < b for a, b in zip(sims, sims[1:])):
            raise McelError("neighbors must be ordered by non-increasing similarity")

    def __len__(self) -> int:
        return len(self.neighbors)


EMPTY_NEIGHBORS = NeighborSet(neighbors=())


class Datastore:
    """Immutable key-value store over labeled training instances."""

    def __init__(
        self,
        entries: Sequence[DatastoreEntry],
        keys: np.ndarray,
        split: str = "train",
        fingerprint: Optional[str] = None,
    ) -> None:
        keys = np.asarray(keys, dtype=np.float64)
        if keys.ndim != 2 or keys.shape[0] != len(entries):
            raise McelError("datastore needs one key vector per entry")
        for entry in entries:
            if entry.choice_set.gold_symbol is None:
                raise UnlabeledInstanceError(
                    f"datastore entry {entry.ordinal} has no gold symbol"
                )
        ordinals = [e.ordinal for e in entries]
        if len(set(ordinals)) != len(ordinals):
            raise McelError("datastore ordinals must be unique")
        self.entries = list(entries)
        self.keys = keys
        self.split = split
        self.fingerprint = fingerprint
        self._ordinals = np.array(ordinals, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dimension(self) -> int:
        return self.keys.shape[1]

    def query(
        self,
        x_vec: EmbeddingVector,
        k: int,
        exclude_ordinal: Optional[int] = None,
    ) -> NeighborSet:
        """Exact top-k by cosine over all keys; ties break by ascending ordinal."""
        if k < 1:
            raise McelError(f"k must be >= 1, got {k}")
        query = self._check_query(x_vec)
        sims = self.keys @ query
        order = np.lexsort((self._ordinals, -sims))
        neighbors: list[Neighbor] = []
        for row in order:
            if exclude_ordinal is not None and self._ordinals[row] == exclude_ordinal:
                continue
            neighbors.append(Neighbor(entry=self.entries[row], similarity=float(sims[row])))
            if len(neighbors) == k:
                break
        return NeighborSet(neighbors=tuple(neighbors))

    def sample_random(
        self,
        x_vec: EmbeddingVector,
        k: int,
        rng: np.random.Generator,
        exclude_ordinal: Optional[int] = None,
    ) -> NeighborSet:
        """Seeded uniform sample of k entries (the random-instances ablation).

        Sampled entries are reported with their true similarities and sorted
        the same way as query results, so downstream prompt assembly is
        identical in shape.
        """
        if k < 1:
            raise McelError(f"k must be >= 1, got {k}")
        query = self._check_query(x_vec)
        eligible = [
            i
            for i in range(len(self.entries))
            if exclude_ordinal is None or self._ordinals[i] != exclude_ordinal
        ]
        take = min(k, len(eligible))
        chosen = rng.choice(len(eligible), size=take, replace=False) if take else []
        picked = [eligible[int(i)] for i in chosen]
        sims = self.keys[picked] @ query if picked else np.empty(0)
        ranked = sorted(
            zip(picked, sims), key=lambda pair: (-pair[1], self._ordinals[pair[0]])
        )
        return NeighborSet(
            neighbors=tuple(
                Neighbor(entry=self.entries[row], similarity=float(sim))
                for row, sim in ranked
            )
        )

    def _check_query(self, x_vec: EmbeddingVector) -> np.ndarray:
        query = np.asarray(x_vec, dtype=np.float64)
        if query.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"query has shape {query.shape}, datastore dimension is {self.dimension}"
            )
        norm = float(np.linalg.norm(query))
        if norm == 0.0:
            raise McelError("query vector must be non-zero")
        return query / norm

    # --- persistence ---

    def save(self, path: str | Path) -> None:
        header = {
            "version": _STORE_VERSION,
            "dim": self.dimension,
            "count": len(self.entries),
            "split": self.split,
            "fingerprint": self.fingerprint,
            "entries": [_entry_to_json(e) for e in self.entries],
        }
        header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
        Path(path).write_bytes(
            b"".join(
                [
                    _STORE_MAGIC,
                    len(header_bytes).to_bytes(8, "little"),
                    header_bytes,
                    np.ascontiguousarray(self.keys).tobytes(),
                ]
            )
        )

    @classmethod
    def load(cls, path: str | Path) -> "Datastore":
        blob = Path(path).read_bytes()
        if not blob.startswith(_STORE_MAGIC):
            raise CheckpointError("not a datastore file (bad magic)")
        offset = len(_STORE_MAGIC)
        header_len = int.from_bytes(blob[offset : offset + 8], "little")
        offset += 8
        try:
            header = json.loads(blob[offset : offset + header_len])
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt datastore header: {exc}") from exc
        if header.get("version") != _STORE_VERSION:
            raise CheckpointError(f"unsupported datastore version {header.get('version')}")
        offset += header_len
        count, dim = int(header["count"]), int(header["dim"])
        keys = np.frombuffer(blob[offset:], dtype=np.float64)
        if keys.size != count * dim:
            raise CheckpointError("datastore key block has the wrong size")
        entries = [_entry_from_json(e) for e in header["entries"]]
        return cls(
            entries,
            keys.reshape(count, dim).copy(),
            split=header.get("split", "train"),
            fingerprint=header.get("fingerprint"),
        )


def _entry_to_json(entry: DatastoreEntry) -> dict:
    cs = entry.choice_set
    return {
        "ordinal": entry.ordinal,
        "mention": entry.mention_text,
        "options": [[o.symbol, o.entity_id, o.display_name] for o in cs.options],
        "gold_symbol": cs.gold_symbol,
    }


def _entry_from_json(record: dict) -> DatastoreEntry:
    options = tuple(
        ChoiceOption(symbol=s, entity_id=i, display_name=n)
        for s, i, n in record["options"]
    )
    return DatastoreEntry(
        ordinal=int(record["ordinal"]),
        mention_text=record["mention"],
        choice_set=ChoiceSet(
            mention_text=record["mention"],
            options=options,
            gold_symbol=record["gold_symbol"],
        ),
    )


def build_datastore(
    training: Sequence[tuple[Mention, ChoiceSet]],
    backend: EmbedderBackend,
    split: str = "train",
) -> Datastore:
    """Index labeled training instances by their mention embeddings.

    Keys are computed with the same backend used for queries; the backend's
    checkpoint fingerprint (when available) is stored so a datastore cannot
    silently be queried with vectors from a different encoder.
    """
    if not training:
        raise McelError("cannot build an empty datastore")
    for mention, choice_set in training:
        if choice_set.gold_symbol is None:
            raise UnlabeledInstanceError(
                f"training instance {mention.ordinal} ({mention.text!r}) is unlabeled"
            )
    ordered = sorted(training, key=lambda pair: pair[0].ordinal)
    texts = [m.text for m, _ in ordered]
    chunks = [
        embed(backend, texts[i : i + _EMBED_CHUNK])
        for i in range(0, len(texts), _EMBED_CHUNK)
    ]
    keys = np.vstack(chunks)
    entries = [
        DatastoreEntry(ordinal=m.ordinal, mention_text=m.text, choice_set=cs)
        for m, cs in ordered
    ]
    fingerprint = backend.fingerprint() if hasattr(backend, "fingerprint") else None
    return Datastore(entries, keys, split=split, fingerprint=fingerprint)


def assemble_enhanced_prompt(
    neighbors: NeighborSet,
    input_choice_set: ChoiceSet,
    most_similar_first: bool = True,
    max_chars: Optional[int] = None,
) -> PromptInstance:
    """Concatenate K solved neighbor blocks ahead of the unsolved input block.

    Each solved block is the neighbor's rendered prompt immediately followed
    by its gold symbol; blocks are joined with single spaces and the final
    segment ends with the bare "answer:". When ``max_chars`` is set, the
    least similar neighbors are dropped first until the prompt fits.
    """
    ordered = list(neighbors.neighbors)
    if not most_similar_first:
        ordered = ordered[::-1]

    def build(block_neighbors: list[Neighbor]) -> str:
        segments: list[str] = []
        for neighbor in block_neighbors:
            segments.append(render_text(neighbor.entry.choice_set))
            segments.append(neighbor.entry.gold_symbol)
        segments.append(render_text(input_choice_set))
        return " ".join(segments)

    text = build(ordered)
    while max_chars is not None and len(text) > max_chars and ordered:
        # drop the least similar neighbor, wherever it sits
        drop = ordered.index(min(ordered, key=lambda n: n.similarity))
        ordered.pop(drop)
        text = build(ordered)
    return PromptInstance(
        text=text,
        expected_symbol=input_choice_set.gold_symbol,
        provenance=PROVENANCE_ENHANCED,
    )
