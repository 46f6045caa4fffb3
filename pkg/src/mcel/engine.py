"""Pipeline orchestration: training-pair assembly, datastore construction,
prompt export for the remote generator, and loading persisted components.

A checkpoint fingerprint travels with the index and datastore so that vectors
from one encoder are never silently mixed with another's.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

from .embedder import (
    BuiltinNgramBackend,
    ContrastiveConfig,
    EmbedderBackend,
    NGramEncoder,
    RemoteEmbedderBackend,
    train,
)
from .errors import CheckpointError, McelError
from .knnstore import (
    EMPTY_NEIGHBORS,
    Datastore,
    assemble_enhanced_prompt,
    build_datastore,
)
from .mcp import (
    PROVENANCE_AUGMENTED,
    ChoiceSet,
    PromptInstance,
    augment_swap,
    make_choice_set,
)
from .ontology import Mention, Ontology
from .vecindex import IndexHardNegativeMiner, VectorIndex, with_canonical_names


def trainable_pairs(
    mentions: Sequence[Mention],
    ontology: Ontology,
    include_synonyms: bool = True,
    include_canonicals: bool = True,
) -> list[tuple[str, str]]:
    """(text, gold id) pairs for contrastive training.

    Mentions with missing or dangling gold ids are excluded; ontology
    synonyms (and optionally canonical names) become additional pairs so the
    dictionary itself anchors the embedding space.
    """
    pairs: list[tuple[str, str]] = [
        (m.text, m.gold_id)
        for m in mentions
        if m.gold_id is not None and not m.dangling_gold and m.gold_id in ontology
    ]
    if include_canonicals or include_synonyms:
        for entity in sorted(ontology, key=lambda e: e.id):
            if include_canonicals:
                pairs.append((entity.canonical_name, entity.id))
            if include_synonyms:
                pairs.extend((syn, entity.id) for syn in entity.synonyms)
    return pairs


def train_retriever(
    ontology: Ontology,
    mentions: Sequence[Mention],
    cfg: ContrastiveConfig,
    dim: int = 256,
    ngram_sizes: Sequence[int] = (2, 3, 4),
    hash_buckets: int = 4096,
    max_vocab: int = 50_000,
    include_synonyms: bool = True,
    include_canonicals: bool = True,
) -> tuple[NGramEncoder, list[float]]:
    """Build a fresh encoder over the corpus and train it contrastively."""
    pairs = trainable_pairs(
        mentions, ontology, include_synonyms, include_canonicals
    )
    if not pairs:
        raise McelError("no trainable pairs (all mentions unlabeled or dangling?)")
    corpus = [text for text, _ in pairs] + [
        name for _, name in ontology.name_rows()
    ]
    encoder = NGramEncoder.build(
        corpus,
        dim=dim,
        ngram_sizes=ngram_sizes,
        hash_buckets=hash_buckets,
        max_vocab=max_vocab,
        seed=cfg.seed,
    )
    miner = IndexHardNegativeMiner(ontology) if cfg.hard_negatives_per_pair else None
    return train(encoder, pairs, ontology, cfg, miner=miner)


def training_choice_sets(
    mentions: Sequence[Mention],
    ontology: Ontology,
    backend: EmbedderBackend,
    index: VectorIndex,
    n_options: int,
    display_name: str = "matched",
) -> list[tuple[Mention, ChoiceSet]]:
    """Labeled (mention, choice set) instances for the datastore/generator.

    Uses training mode: when the retriever misses the gold entity it is
    injected into the last option slot so every instance carries a label.
    Unlabeled and dangling mentions are skipped. ``display_name`` must match
    the evaluation-time setting, or the generator trains on differently
    rendered options than it will see.
    """
    usable = [
        m
        for m in mentions
        if m.gold_id is not None and not m.dangling_gold and m.gold_id in ontology
    ]
    if not usable:
        raise McelError("no labeled mentions to build training instances from")
    vectors = backend.embed([m.text for m in usable])
    out: list[tuple[Mention, ChoiceSet]] = []
    for mention, vec in zip(usable, vectors):
        candidates = index.top_n(vec, n_options)
        if display_name == "canonical":
            candidates = with_canonical_names(candidates, ontology)
        choice_set = make_choice_set(
            mention,
            candidates,
            gold_id=mention.gold_id,
            train_mode=True,
            gold_name=ontology.get(mention.gold_id).canonical_name,
        )
        out.append((mention, choice_set))
    return out


def export_prompt_rows(
    instances: Sequence[tuple[Mention, ChoiceSet]],
    datastore: Optional[Datastore],
    backend: EmbedderBackend,
    k_neighbors: int,
    augment_count: int = 1,
    seed: int = 13,
    max_prompt_chars: Optional[int] = None,
) -> list[tuple[PromptInstance, int]]:
    """Rendered (prompt, ordinal) rows for the generator's training export.

    Each instance contributes its original order plus ``augment_count``
    order-swapped copies (the data augmentation the ablation toggles off).
    With ``k_neighbors`` > 0 the instance's own datastore entry is excluded
    from its neighbors, mirroring the training-time self-filter.
    """
    rows: list[tuple[PromptInstance, int]] = []
    texts = [m.text for m, _ in instances]
    vectors = backend.embed(texts) if texts else []
    for (mention, choice_set), vec in zip(instances, vectors):
        if k_neighbors > 0:
            if datastore is None:
                raise McelError("k_neighbors > 0 requires a datastore")
            exclude = mention.ordinal if mention.split == datastore.split else None
            neighbors = datastore.query(vec, k_neighbors, exclude_ordinal=exclude)
        else:
            neighbors = EMPTY_NEIGHBORS
        variants = [choice_set]
        for j in range(augment_count):
            if len(choice_set.options) < 2:
                break
            variants.append(
                augment_swap(choice_set, rng_seed=seed * 1_000_003 + mention.ordinal * 31 + j)
            )
        for v_index, variant in enumerate(variants):
            prompt = assemble_enhanced_prompt(
                neighbors, variant, max_chars=max_prompt_chars
            )
            if v_index > 0:
                prompt = PromptInstance(
                    text=prompt.text,
                    expected_symbol=prompt.expected_symbol,
                    provenance=PROVENANCE_AUGMENTED,
                )
            rows.append((prompt, mention.ordinal))
    return rows


def make_datastore(
    mentions: Sequence[Mention],
    ontology: Ontology,
    backend: EmbedderBackend,
    index: VectorIndex,
    n_options: int,
    split: str = "train",
    display_name: str = "matched",
) -> Datastore:
    instances = training_choice_sets(
        mentions, ontology, backend, index, n_options, display_name=display_name
    )
    return build_datastore(instances, backend, split=split)


def resolve_embedder(
    kind: str,
    checkpoint: Optional[str | Path] = None,
    endpoint: Optional[str] = None,
) -> EmbedderBackend:
    if kind == "builtin-ngram":
        if checkpoint is None:
            raise McelError("builtin-ngram backend needs an encoder checkpoint path")
        return BuiltinNgramBackend(NGramEncoder.load(checkpoint))
    if kind == "remote":
        if not endpoint:
            raise McelError("remote embedder backend needs an endpoint URL")
        return RemoteEmbedderBackend(endpoint)
    raise McelError(f"unknown embedder backend {kind!r}")


def check_fingerprints(
    backend: EmbedderBackend,
    index: Optional[VectorIndex] = None,
    datastore: Optional[Datastore] = None,
) -> None:
    """Refuse to mix artifacts produced by different encoder checkpoints."""
    fingerprint = backend.fingerprint() if hasattr(backend, "fingerprint") else None
    if fingerprint is None:
        return
    for name, artifact in (("index", index), ("datastore", datastore)):
        if artifact is None or artifact.fingerprint is None:
            continue
        if artifact.fingerprint != fingerprint:
            raise CheckpointError(
                f"{name} was built with a different encoder checkpoint "
                f"({artifact.fingerprint[:12]}... != {fingerprint[:12]}...)"
            )
