"""Target entity inventory and dataset ingestion.

The ontology is the symbolic side of the engine: entities with a canonical
name and optional synonyms, an exact case-folded name index, and readers for
the two on-disk dataset shapes (tab-separated and JSONL). Everything here is
immutable after construction; the fuzzy-matching work belongs to the embedder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import DuplicateIdError, McelError, ParseError

SPLITS = ("train", "dev", "test")


def _clean_synonyms(canonical: str, synonyms: Sequence[str]) -> tuple[str, ...]:
    """Drop synonyms that case-fold to the canonical name or to each other."""
    seen = {canonical.casefold()}
    out: list[str] = []
    for syn in synonyms:
        syn = syn.strip()
        if not syn:
            continue
        folded = syn.casefold()
        if folded in seen:
            continue
        seen.add(folded)
        out.append(syn)
    return tuple(out)


@dataclass(frozen=True)
class Entity:
    """One ontology concept: opaque id, canonical name, synonym list."""

    id: str
    canonical_name: str
    synonyms: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise McelError("entity id must be non-empty")
        if not self.canonical_name:
            raise McelError(f"entity {self.id!r}: canonical name must be non-empty")
        object.__setattr__(
            self, "synonyms", _clean_synonyms(self.canonical_name, self.synonyms)
        )

    @property
    def names(self) -> tuple[str, ...]:
        """Canonical name followed by synonyms."""
        return (self.canonical_name, *self.synonyms)


@dataclass
class Mention:
    """A surface string to be linked, with optional gold label.

    ``dangling_gold`` is set by ingestion when the gold id does not resolve in
    the ontology; such mentions stay in the split (public releases contain
    them) but are excluded from trainable pairs.
    """

    text: str
    gold_id: Optional[str]
    split: str
    ordinal: int
    context: Optional[str] = None
    dangling_gold: bool = False

    def __post_init__(self) -> None:
        if not self.text:
            raise McelError("mention text must be non-empty")
        if self.split not in SPLITS:
            raise McelError(f"unknown split {self.split!r}; expected one of {SPLITS}")


class Ontology:
    """Immutable entity set with an exact case-folded name index."""

    def __init__(self, entities: Iterable[Entity]) -> None:
        self._by_id: dict[str, Entity] = {}
        for entity in entities:
            if entity.id in self._by_id:
                raise DuplicateIdError(entity.id)
            self._by_id[entity.id] = entity
        if not self._by_id:
            raise McelError("an ontology must contain at least one entity")
        index: dict[str, set[str]] = {}
        for entity in self._by_id.values():
            for name in entity.names:
                index.setdefault(name.casefold(), set()).add(entity.id)
        self._name_index = {name: frozenset(ids) for name, ids in index.items()}

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._by_id

    def __iter__(self) -> Iterator[Entity]:
        return iter(self._by_id.values())

    @property
    def name_index(self) -> dict[str, frozenset[str]]:
        return dict(self._name_index)

    def get(self, entity_id: str) -> Entity:
        try:
            return self._by_id[entity_id]
        except KeyError:
            raise KeyError(f"unknown entity id {entity_id!r}") from None

    def lookup_by_name(self, name: str) -> set[str]:
        """Exact case-folded match over canonical names and synonyms."""
        return set(self._name_index.get(name.casefold(), ()))

    def name_rows(self) -> list[tuple[str, str]]:
        """All (entity id, name) pairs, sorted by id then name.

        One row per canonical name and per synonym; this is the row order the
        vector index is built in.
        """
        rows: list[tuple[str, str]] = []
        for entity_id in sorted(self._by_id):
            entity = self._by_id[entity_id]
            for name in sorted(entity.names):
                rows.append((entity_id, name))
        return rows

    # --- serialization (round-trips through ingest_ontology) ---

    def to_tsv(self, path: str | Path) -> None:
        lines = []
        for entity_id in sorted(self._by_id):
            entity = self._by_id[entity_id]
            for name in entity.names:
                if any(ch in name for ch in "\t\n|"):
                    raise McelError(
                        f"name {name!r} cannot be written as TSV; use JSONL"
                    )
            lines.append(
                f"{entity_id}\t{entity.canonical_name}\t{'|'.join(entity.synonyms)}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def to_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for entity_id in sorted(self._by_id):
                entity = self._by_id[entity_id]
                record = {
                    "id": entity.id,
                    "name": entity.canonical_name,
                    "synonyms": list(entity.synonyms),
                }
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def lookup_by_name(ontology: Ontology, name: str) -> set[str]:
    """Functional alias for :meth:`Ontology.lookup_by_name`."""
    return ontology.lookup_by_name(name)


def _iter_lines(path: Path) -> Iterator[tuple[int, str]]:
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.strip():
                yield lineno, line


def ingest_ontology(path: str | Path, format: str = "tsv-dict") -> Ontology:
    """Read an entity dictionary file into an Ontology.

    ``tsv-dict`` rows are ``id TAB name TAB synonym1|synonym2...`` (the third
    column may be empty or absent); ``jsonl`` rows are objects with ``id``,
    ``name`` and optional ``synonyms``. Duplicate ids are a hard error.
    """
    path = Path(path)
    entities: list[Entity] = []
    seen: set[str] = set()
    for lineno, line in _iter_lines(path):
        if format == "tsv-dict":
            parts = line.split("\t")
            if len(parts) < 2 or not parts[0].strip() or not parts[1].strip():
                raise ParseError(str(path), lineno, f"malformed record: {line!r}")
            entity_id = parts[0].strip()
            name = parts[1].strip()
            synonyms = [s for s in parts[2].split("|")] if len(parts) > 2 else []
        elif format == "jsonl":
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "id" not in record or "name" not in record:
                raise ParseError(str(path), lineno, "record needs 'id' and 'name'")
            entity_id = str(record["id"]).strip()
            name = str(record["name"]).strip()
            synonyms = [str(s) for s in record.get("synonyms", [])]
            if not entity_id or not name:
                raise ParseError(str(path), lineno, "empty id or name")
        else:
            raise ValueError(f"unknown ontology format {format!r}")
        if entity_id in seen:
            raise DuplicateIdError(entity_id)
        seen.add(entity_id)
        entities.append(Entity(entity_id, name, tuple(synonyms)))
    if not entities:
        raise ParseError(str(path), 0, "file contains no entity records")
    return Ontology(entities)


def ingest_mentions(
    path: str | Path,
    split: str,
    ontology: Optional[Ontology] = None,
    format: str = "tsv",
) -> list[Mention]:
    """Read a mention file, assigning ordinals 0..n-1 in file order.

    ``tsv`` rows are ``text TAB gold_id`` with an optional third context
    column (accepted and carried along, but unused by the pipeline);
    ``jsonl`` rows are objects with ``text`` and optional ``gold_id`` /
    ``context``. When an ontology is supplied, mentions whose gold id does
    not resolve are flagged ``dangling_gold`` instead of rejected.
    """
    path = Path(path)
    mentions: list[Mention] = []
    for lineno, line in _iter_lines(path):
        if format == "tsv":
            parts = line.split("\t")
            text = parts[0].strip()
            gold_id = parts[1].strip() if len(parts) > 1 and parts[1].strip() else None
            context = parts[2] if len(parts) > 2 and parts[2].strip() else None
        elif format == "jsonl":
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "text" not in record:
                raise ParseError(str(path), lineno, "record needs 'text'")
            text = str(record["text"]).strip()
            gold_id = record.get("gold_id") or None
            context = record.get("context") or None
        else:
            raise ValueError(f"unknown mention format {format!r}")
        if not text:
            raise ParseError(str(path), lineno, "empty mention text")
        dangling = bool(
            gold_id is not None and ontology is not None and gold_id not in ontology
        )
        mentions.append(
            Mention(
                text=text,
                gold_id=gold_id,
                split=split,
                ordinal=len(mentions),
                context=context,
                dangling_gold=dangling,
            )
        )
    return mentions


def dangling_count(mentions: Iterable[Mention]) -> int:
    """How many ingested mentions carry a gold id missing from the ontology."""
    return sum(1 for m in mentions if m.dangling_gold)


def write_mentions(mentions: Sequence[Mention], path: str | Path) -> None:
    """Write mentions back out as TSV (text, gold id, optional context)."""
    lines = []
    for mention in mentions:
        cols = [mention.text, mention.gold_id or ""]
        if mention.context:
            cols.append(mention.context)
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
