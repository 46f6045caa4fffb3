"""Exact top-N cosine search over entity name embeddings.

One row per (entity, name) pair, synonyms included; results are deduplicated
per entity keeping the best-scoring name. The scan is exact (full matrix
product), so the brute-force oracle in the test suite must agree bit-for-bit
on ordering. Ties break by ascending entity id, then name, giving a total,
reproducible order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embedder import EmbedderBackend, EmbeddingVector, embed
from .errors import CheckpointError, DimensionMismatchError, McelError
from .ontology import Ontology

_INDEX_MAGIC = b"MCEL-VECINDEX"
_INDEX_VERSION = 1
_EMBED_CHUNK = 2048


@dataclass(frozen=True)
class Candidate:
    """One retrieved entity: best-scoring name, similarity, 1-based rank."""

    entity_id: str
    matched_name: str
    similarity: float
    rank: int


def with_canonical_names(
    candidates: Sequence[Candidate], ontology: Ontology
) -> list[Candidate]:
    """Swap each candidate's matched name for its entity's canonical name
    (the display-name mode where options always show dictionary headwords)."""
    return [
        Candidate(
            entity_id=c.entity_id,
            matched_name=ontology.get(c.entity_id).canonical_name,
            similarity=c.similarity,
            rank=c.rank,
        )
        for c in candidates
    ]


class VectorIndex:
    """Immutable row store of unit-norm name vectors with exact search."""

    def __init__(
        self,
        keys: Sequence[tuple[str, str]],
        matrix: np.ndarray,
        fingerprint: Optional[str] = None,
    ) -> None:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(keys):
            raise McelError("index matrix must have one row per key")
        if len(set(keys)) != len(keys):
            raise McelError("(entity id, name) index keys must be unique")
        norms = np.linalg.norm(matrix, axis=1)
        if matrix.shape[0] and not np.allclose(norms, 1.0, atol=1e-6):
            raise McelError("index rows must be unit-norm")
        self.keys = [(str(i), str(n)) for i, n in keys]
        self.matrix = matrix
        self.fingerprint = fingerprint
        self._ids = np.array([k[0] for k in self.keys])
        self._names = np.array([k[1] for k in self.keys])
        self._distinct_entities = len(set(self._ids.tolist()))

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    @property
    def distinct_entities(self) -> int:
        return self._distinct_entities

    def _check_query(self, query: EmbeddingVector) -> np.ndarray:
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"query has shape {query.shape}, index dimension is {self.dimension}"
            )
        norm = float(np.linalg.norm(query))
        if norm == 0.0:
            raise McelError("query vector must be non-zero")
        return query / norm

    def _scan_order(self, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Row similarities and row order by (-similarity, id, name)."""
        sims = self.matrix @ query
        # np.lexsort: last key is primary
        order = np.lexsort((self._names, self._ids, -sims))
        return sims, order

    def top_n(self, query: EmbeddingVector, n: int) -> list[Candidate]:
        """Exact top-n entities by cosine similarity.

        Rows of the same entity collapse to the highest-scoring name; result
        length is min(n, distinct entities).
        """
        if n < 1:
            raise McelError(f"n must be >= 1, got {n}")
        query = self._check_query(query)
        sims, order = self._scan_order(query)
        results: list[Candidate] = []
        seen: set[str] = set()
        for row in order:
            entity_id = self._ids[row]
            if entity_id in seen:
                continue
            seen.add(entity_id)
            results.append(
                Candidate(
                    entity_id=str(entity_id),
                    matched_name=str(self._names[row]),
                    similarity=float(sims[row]),
                    rank=len(results) + 1,
                )
            )
            if len(results) == n:
                break
        return results

    def mine_hard_negatives(
        self, mention_vec: EmbeddingVector, gold_id: str, count: int
    ) -> list[str]:
        """Top ``count`` distinct entities by similarity, excluding the gold."""
        if count < 0:
            raise McelError(f"count must be >= 0, got {count}")
        if count == 0:
            return []
        query = self._check_query(mention_vec)
        _, order = self._scan_order(query)
        out: list[str] = []
        seen: set[str] = {gold_id}
        for row in order:
            entity_id = str(self._ids[row])
            if entity_id in seen:
                continue
            seen.add(entity_id)
            out.append(entity_id)
            if len(out) == count:
                break
        return out

    # --- persistence ---

    def save(self, path: str | Path) -> None:
        header = {
            "version": _INDEX_VERSION,
            "dim": self.dimension,
            "rows": len(self.keys),
            "fingerprint": self.fingerprint,
            "keys": [[i, n] for i, n in self.keys],
        }
        header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
        Path(path).write_bytes(
            b"".join(
                [
                    _INDEX_MAGIC,
                    len(header_bytes).to_bytes(8, "little"),
                    header_bytes,
                    np.ascontiguousarray(self.matrix).tobytes(),
                ]
            )
        )

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        blob = Path(path).read_bytes()
        if not blob.startswith(_INDEX_MAGIC):
            raise CheckpointError("not a vector index file (bad magic)")
        offset = len(_INDEX_MAGIC)
        header_len = int.from_bytes(blob[offset : offset + 8], "little")
        offset += 8
        try:
            header = json.loads(blob[offset : offset + header_len])
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt index header: {exc}") from exc
        if header.get("version") != _INDEX_VERSION:
            raise CheckpointError(f"unsupported index version {header.get('version')}")
        offset += header_len
        rows, dim = int(header["rows"]), int(header["dim"])
        matrix = np.frombuffer(blob[offset:], dtype=np.float64)
        if matrix.size != rows * dim:
            raise CheckpointError("index vector block has the wrong size")
        return cls(
            [(i, n) for i, n in header["keys"]],
            matrix.reshape(rows, dim).copy(),
            header.get("fingerprint"),
        )


def build_index(ontology: Ontology, backend: EmbedderBackend) -> VectorIndex:
    """Embed every (entity, name) row, synonyms included.

    Row order is deterministic (sorted by id, then name), so rebuilding from
    the same inputs yields a byte-identical key list.
    """
    rows = ontology.name_rows()
    texts = [name for _, name in rows]
    chunks = [
        embed(backend, texts[i : i + _EMBED_CHUNK])
        for i in range(0, len(texts), _EMBED_CHUNK)
    ]
    matrix = np.vstack(chunks)
    fingerprint = backend.fingerprint() if hasattr(backend, "fingerprint") else None
    return VectorIndex(rows, matrix, fingerprint)


class IndexHardNegativeMiner:
    """Mines highest-scoring incorrect entities against a periodically
    rebuilt index, so negatives track the encoder being trained."""

    def __init__(self, ontology: Ontology) -> None:
        self.ontology = ontology
        self._index: Optional[VectorIndex] = None
        self._backend: Optional[EmbedderBackend] = None

    def refresh(self, backend: EmbedderBackend) -> None:
        self._backend = backend
        self._index = build_index(self.ontology, backend)

    def mine(self, mention_text: str, gold_id: str, count: int) -> list[str]:
        if self._index is None or self._backend is None:
            raise McelError("miner used before refresh()")
        vec = self._backend.embed([mention_text])[0]
        return self._index.mine_hard_negatives(vec, gold_id, count)
