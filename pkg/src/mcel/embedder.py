"""Mention/entity embedding and contrastive retriever training.

The built-in encoder is a hashed character n-gram bag followed by a linear
projection and L2 normalization: deterministic, trainable end-to-end with the
softmax contrastive loss, and open-vocabulary (unknown n-grams hash into a
fixed bucket range). A remote backend speaks the model-shim /embed protocol
behind the same contract; its vectors are re-normalized on receipt.

All loss gradients are computed analytically (no autodiff dependency) and are
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy import sparse

from .errors import (
    CheckpointError,
    DimensionMismatchError,
    EmptyTextError,
    EmptyTrainingSetError,
    McelError,
    NonPositiveTemperatureError,
    RemoteUnavailableError,
)
from .ontology import Ontology

EmbeddingVector = np.ndarray

_CHECKPOINT_MAGIC = b"MCEL-ENCODER"
_CHECKPOINT_VERSION = 1


def unit_normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not np.isfinite(norm):
        raise McelError("cannot normalize a zero or non-finite vector")
    return vec / norm


def score(m_vec: EmbeddingVector, e_vec: EmbeddingVector) -> float:
    """Cosine similarity between two vectors; symmetric, in [-1, 1]."""
    m_vec = np.asarray(m_vec, dtype=np.float64)
    e_vec = np.asarray(e_vec, dtype=np.float64)
    if m_vec.shape != e_vec.shape:
        raise DimensionMismatchError(
            f"dimension mismatch: {m_vec.shape} vs {e_vec.shape}"
        )
    denom = float(np.linalg.norm(m_vec) * np.linalg.norm(e_vec))
    if denom == 0.0:
        raise McelError("cosine similarity is undefined for zero vectors")
    return float(np.clip(np.dot(m_vec, e_vec) / denom, -1.0, 1.0))


def contrastive_loss(
    m_vec: EmbeddingVector,
    pos_vec: EmbeddingVector,
    neg_vecs: Sequence[EmbeddingVector],
    tau: float,
) -> float:
    """Softmax contrastive loss for one true pair against explicit negatives.

    Returns ``-log(d(m,pos) / (d(m,pos) + sum_i d(m,neg_i)))`` with
    ``d(a,b) = exp(cos(a,b)/tau)``, evaluated in log-space for stability.
    Strictly positive, invariant under permutation of the negatives.
    """
    if tau <= 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {tau}")
    if len(neg_vecs) == 0:
        raise McelError("contrastive loss needs at least one negative")
    sims = np.array(
        [score(m_vec, pos_vec)] + [score(m_vec, v) for v in neg_vecs],
        dtype=np.float64,
    )
    return _softmax_nll(sims / tau)


def _softmax_nll(logits: np.ndarray) -> float:
    """-log softmax at index 0, via log1p on margins so the result stays
    strictly positive even when the positive dominates by hundreds of nats."""
    margins = logits[1:] - logits[0]
    peak = float(np.max(margins))
    if peak <= 0.0:
        return float(np.log1p(np.sum(np.exp(margins))))
    return peak + float(np.log(np.exp(-peak) + np.sum(np.exp(margins - peak))))


def _ngram_counts(text: str, sizes: Sequence[int]) -> dict[str, int]:
    """Character n-gram multiset of a case-folded text with space sentinels."""
    padded = f" {text.casefold()} "
    counts: dict[str, int] = {}
    for n in sizes:
        for i in range(len(padded) - n + 1):
            gram = padded[i : i + n]
            if gram.strip():
                counts[gram] = counts.get(gram, 0) + 1
    if not counts:
        counts[padded] = 1
    return counts


class NGramEncoder:
    """Hashed char n-gram bag -> linear projection -> L2 normalization.

    ``vocab`` maps the n-grams seen at build time to dense feature indices;
    anything else hashes (CRC32) into ``hash_buckets`` trailing slots, so the
    vocabulary is open at inference. ``encode`` is deterministic and the
    feature extraction per text is cached (features do not depend on the
    trainable weights).
    """

    def __init__(
        self,
        vocab: dict[str, int],
        weights: np.ndarray,
        hash_buckets: int,
        ngram_sizes: tuple[int, ...] = (2, 3, 4),
    ) -> None:
        if weights.ndim != 2:
            raise McelError("weights must be a (features x dim) matrix")
        if weights.shape[0] != len(vocab) + hash_buckets:
            raise McelError(
                f"weights rows {weights.shape[0]} != vocab {len(vocab)} + "
                f"buckets {hash_buckets}"
            )
        self.vocab = dict(vocab)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.hash_buckets = int(hash_buckets)
        self.ngram_sizes = tuple(ngram_sizes)
        self._feature_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    # --- construction ---

    @classmethod
    def build(
        cls,
        corpus: Sequence[str],
        dim: int = 256,
        ngram_sizes: Sequence[int] = (2, 3, 4),
        hash_buckets: int = 4096,
        max_vocab: int = 50_000,
        seed: int = 13,
    ) -> "NGramEncoder":
        """Initialize a fresh encoder with a vocabulary drawn from ``corpus``."""
        counts: dict[str, int] = {}
        for text in corpus:
            for gram, c in _ngram_counts(text, ngram_sizes).items():
                counts[gram] = counts.get(gram, 0) + c
        # Most frequent grams get dense slots; ties resolved lexicographically
        # so the vocabulary is deterministic.
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_vocab]
        vocab = {gram: idx for idx, gram in enumerate(sorted(g for g, _ in ranked))}
        rng = np.random.default_rng(seed)
        weights = rng.normal(
            0.0, 1.0 / np.sqrt(dim), size=(len(vocab) + hash_buckets, dim)
        )
        return cls(vocab, weights, hash_buckets, tuple(ngram_sizes))

    # --- geometry ---

    @property
    def dimension(self) -> int:
        return self.weights.shape[1]

    @property
    def feature_count(self) -> int:
        return self.weights.shape[0]

    def _feature_index(self, gram: str) -> int:
        idx = self.vocab.get(gram)
        if idx is not None:
            return idx
        bucket = zlib.crc32(gram.encode("utf-8")) % self.hash_buckets
        return len(self.vocab) + bucket

    def features(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """Sparse feature (indices, counts) for one text; hash collisions merge."""
        cached = self._feature_cache.get(text)
        if cached is not None:
            return cached
        if not text:
            raise EmptyTextError("cannot embed an empty text")
        merged: dict[int, int] = {}
        for gram, c in _ngram_counts(text, self.ngram_sizes).items():
            idx = self._feature_index(gram)
            merged[idx] = merged.get(idx, 0) + c
        indices = np.fromiter(sorted(merged), dtype=np.int64, count=len(merged))
        values = np.array([merged[i] for i in indices], dtype=np.float64)
        result = (indices, values)
        self._feature_cache[text] = result
        return result

    def feature_matrix(self, texts: Sequence[str]) -> sparse.csr_matrix:
        indptr = [0]
        indices: list[np.ndarray] = []
        data: list[np.ndarray] = []
        for text in texts:
            idx, val = self.features(text)
            indices.append(idx)
            data.append(val)
            indptr.append(indptr[-1] + len(idx))
        return sparse.csr_matrix(
            (
                np.concatenate(data) if data else np.empty(0),
                np.concatenate(indices) if indices else np.empty(0, dtype=np.int64),
                np.array(indptr),
            ),
            shape=(len(texts), self.feature_count),
        )

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        """Unit-norm embedding per text, order-preserving."""
        if len(texts) == 0:
            raise EmptyTextError("embed requires at least one text")
        projected = self.feature_matrix(texts) @ self.weights
        norms = np.linalg.norm(projected, axis=1, keepdims=True)
        if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
            raise McelError("encoder produced a degenerate (zero-norm) embedding")
        return projected / norms

    # --- persistence ---

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        header = {
            "version": _CHECKPOINT_VERSION,
            "dim": self.dimension,
            "ngram_sizes": list(self.ngram_sizes),
            "hash_buckets": self.hash_buckets,
            # grams listed in index order; indices are implicit
            "vocab": [g for g, _ in sorted(self.vocab.items(), key=lambda kv: kv[1])],
        }
        header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
        return b"".join(
            [
                _CHECKPOINT_MAGIC,
                len(header_bytes).to_bytes(8, "little"),
                header_bytes,
                np.ascontiguousarray(self.weights).tobytes(),
            ]
        )

    @classmethod
    def load(cls, path: str | Path) -> "NGramEncoder":
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "NGramEncoder":
        if not blob.startswith(_CHECKPOINT_MAGIC):
            raise CheckpointError("not an encoder checkpoint (bad magic)")
        offset = len(_CHECKPOINT_MAGIC)
        header_len = int.from_bytes(blob[offset : offset + 8], "little")
        offset += 8
        try:
            header = json.loads(blob[offset : offset + header_len])
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        if header.get("version") != _CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        offset += header_len
        vocab = {gram: idx for idx, gram in enumerate(header["vocab"])}
        rows = len(vocab) + int(header["hash_buckets"])
        dim = int(header["dim"])
        weights = np.frombuffer(blob[offset:], dtype=np.float64)
        if weights.size != rows * dim:
            raise CheckpointError("checkpoint weight block has the wrong size")
        return cls(
            vocab,
            weights.reshape(rows, dim).copy(),
            int(header["hash_buckets"]),
            tuple(header["ngram_sizes"]),
        )

    def fingerprint(self) -> str:
        """SHA-256 of the serialized encoder; ties indexes/datastores to it."""
        return hashlib.sha256(self.to_bytes()).hexdigest()


# --- backends ---


class EmbedderBackend(Protocol):
    """Common contract: embed(texts) -> unit-norm row matrix, fixed dimension."""

    kind: str

    @property
    def dimension(self) -> int: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class BuiltinNgramBackend:
    """The trainable in-process encoder behind the backend contract."""

    kind = "builtin-ngram"

    def __init__(self, encoder: NGramEncoder) -> None:
        self.encoder = encoder

    @property
    def dimension(self) -> int:
        return self.encoder.dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return self.encoder.encode(texts)

    def fingerprint(self) -> str:
        return self.encoder.fingerprint()


class RemoteEmbedderBackend:
    """Client for the model-shim POST /embed endpoint.

    Vectors are re-normalized on receipt so the unit-norm invariant holds
    regardless of what the remote model returns.
    """

    kind = "remote"

    def __init__(self, endpoint: str, timeout: float = 30.0) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._dimension: Optional[int] = None

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            self._dimension = self.embed(["probe"]).shape[1]
        return self._dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import requests

        try:
            response = requests.post(
                f"{self.endpoint}/embed", json={"texts": list(texts)}, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise RemoteUnavailableError(f"embed endpoint unreachable: {exc}") from exc
        if response.status_code != 200:
            raise RemoteUnavailableError(
                f"embed endpoint returned HTTP {response.status_code}"
            )
        try:
            vectors = np.asarray(response.json()["vectors"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise RemoteUnavailableError(f"malformed embed response: {exc}") from exc
        if vectors.ndim != 2 or vectors.shape[0] != len(texts):
            raise RemoteUnavailableError("embed response has the wrong shape")
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        if np.any(norms == 0.0) or not np.all(np.isfinite(vectors)):
            raise RemoteUnavailableError("embed response contains degenerate vectors")
        it = vectors / norms
        if self._dimension is not None and it.shape[1] != self._dimension:
            raise RemoteUnavailableError("embed response changed dimension mid-session")
        self._dimension = it.shape[1]
        return it


def embed(backend: EmbedderBackend, texts: Sequence[str]) -> np.ndarray:
    """Embed a batch of texts; one unit-norm row per text, order-preserving."""
    if len(texts) == 0:
        raise EmptyTextError("embed requires at least one text")
    for text in texts:
        if not text:
            raise EmptyTextError("cannot embed an empty text")
    return backend.embed(texts)


# --- contrastive training ---


@dataclass
class ContrastiveConfig:
    """Hyper-parameters for retriever training."""

    temperature: float = 0.01
    batch_size: int = 16
    hard_negatives_per_pair: int = 4
    epochs: int = 20
    learning_rate: float = 4e-4
    in_batch_negatives: bool = True
    seed: int = 13

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise NonPositiveTemperatureError(
                f"temperature must be > 0, got {self.temperature}"
            )
        if self.in_batch_negatives and self.batch_size < 2:
            raise McelError("batch_size must be >= 2 when in-batch negatives are on")
        if self.hard_negatives_per_pair < 0:
            raise McelError("hard_negatives_per_pair must be >= 0")
        if self.epochs < 1:
            raise McelError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise McelError("learning_rate must be > 0")


class HardNegativeMiner(Protocol):
    """Source of highest-scoring incorrect entities for a mention."""

    def refresh(self, backend: EmbedderBackend) -> None: ...

    def mine(self, mention_text: str, gold_id: str, count: int) -> list[str]: ...


def batch_loss_and_grad(
    encoder: NGramEncoder,
    batch: Sequence[tuple[str, str, Sequence[str]]],
    tau: float,
) -> tuple[float, np.ndarray]:
    """Mean contrastive loss over (mention, positive, negatives) text triples
    and its analytic gradient w.r.t. the encoder weight matrix.

    Texts shared across triples are embedded once; their gradient
    contributions accumulate through the shared projection rows.
    """
    if tau <= 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {tau}")
    if not batch:
        raise EmptyTrainingSetError("empty batch")

    text_col: dict[str, int] = {}

    def col(text: str) -> int:
        if text not in text_col:
            text_col[text] = len(text_col)
        return text_col[text]

    triples = []
    for mention, positive, negatives in batch:
        if not negatives:
            raise McelError("every training pair needs at least one negative")
        triples.append((col(mention), col(positive), [col(n) for n in negatives]))

    texts = sorted(text_col, key=text_col.get)
    feats = encoder.feature_matrix(texts)  # T x F
    projected = feats @ encoder.weights  # T x d
    norms = np.linalg.norm(projected, axis=1)
    if np.any(norms == 0.0):
        raise McelError("encoder produced a degenerate (zero-norm) embedding")
    unit = projected / norms[:, None]

    d_unit = np.zeros_like(unit)
    total_loss = 0.0
    for im, ip, inegs in triples:
        cols = [ip] + inegs
        sims = unit[cols] @ unit[im]
        logits = sims / tau
        peak = float(np.max(logits))
        weights = np.exp(logits - peak)
        probs = weights / weights.sum()
        total_loss += _softmax_nll(logits)
        # dL/ds_j = (p_j - [j is positive]) / tau
        grad_s = probs / tau
        grad_s[0] -= 1.0 / tau
        d_unit[im] += grad_s @ unit[cols]
        np.add.at(d_unit, cols, grad_s[:, None] * unit[im][None, :])

    scale = 1.0 / len(triples)
    total_loss *= scale
    d_unit *= scale
    # Backprop through v = z / ||z||:  dz = (dv - (dv . v) v) / ||z||
    inner = np.sum(d_unit * unit, axis=1, keepdims=True)
    d_projected = (d_unit - inner * unit) / norms[:, None]
    d_weights = (feats.T @ d_projected).astype(np.float64)
    if sparse.issparse(d_weights):
        d_weights = np.asarray(d_weights.todense())
    return total_loss, d_weights


def pair_loss_and_grad(
    encoder: NGramEncoder,
    mention: str,
    positive: str,
    negatives: Sequence[str],
    tau: float,
) -> tuple[float, np.ndarray]:
    """Single-pair convenience wrapper around :func:`batch_loss_and_grad`."""
    return batch_loss_and_grad(encoder, [(mention, positive, negatives)], tau)


def train(
    encoder: NGramEncoder,
    pairs: Sequence[tuple[str, str]],
    ontology: Ontology,
    cfg: ContrastiveConfig,
    miner: Optional[HardNegativeMiner] = None,
) -> tuple[NGramEncoder, list[float]]:
    """SGD on the mean contrastive loss; returns the encoder and a per-epoch
    mean-loss trace of length ``cfg.epochs``.

    Negatives for each pair combine the other in-batch gold entities with
    hard negatives from the miner (re-mined every epoch against the current
    weights); the true entity is always excluded. Deterministic given
    ``cfg.seed``.
    """
    if not pairs:
        raise EmptyTrainingSetError("no training pairs")
    for _, gold_id in pairs:
        if gold_id not in ontology:
            raise McelError(f"training pair references unknown entity {gold_id!r}")
    if not cfg.in_batch_negatives and (cfg.hard_negatives_per_pair == 0 or miner is None):
        raise McelError("training needs in-batch negatives or a hard-negative miner")

    rng = np.random.default_rng(cfg.seed)
    trace: list[float] = []
    for _ in range(cfg.epochs):
        mined: dict[int, list[str]] = {}
        if miner is not None and cfg.hard_negatives_per_pair > 0:
            miner.refresh(BuiltinNgramBackend(encoder))
            for i, (mention_text, gold_id) in enumerate(pairs):
                mined[i] = miner.mine(
                    mention_text, gold_id, cfg.hard_negatives_per_pair
                )

        order = rng.permutation(len(pairs))
        epoch_losses: list[float] = []
        for start in range(0, len(order), cfg.batch_size):
            chosen = order[start : start + cfg.batch_size]
            batch_pairs = [pairs[i] for i in chosen]
            batch: list[tuple[str, str, list[str]]] = []
            for row, (mention_text, gold_id) in zip(chosen, batch_pairs):
                negative_ids: list[str] = []
                if cfg.in_batch_negatives:
                    negative_ids.extend(
                        other for _, other in batch_pairs if other != gold_id
                    )
                negative_ids.extend(
                    nid for nid in mined.get(int(row), []) if nid != gold_id
                )
                # preserve order, drop duplicates
                unique_ids = list(dict.fromkeys(negative_ids))
                if not unique_ids:
                    continue
                batch.append(
                    (
                        mention_text,
                        ontology.get(gold_id).canonical_name,
                        [ontology.get(nid).canonical_name for nid in unique_ids],
                    )
                )
            if not batch:
                continue
            loss, grad = batch_loss_and_grad(batch=batch, encoder=encoder, tau=cfg.temperature)
            encoder.weights -= cfg.learning_rate * grad
            epoch_losses.append(loss)
        trace.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)
    return encoder, trace
