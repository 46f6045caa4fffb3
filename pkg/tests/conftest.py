from __future__ import annotations

import pytest

from mcel.embedder import BuiltinNgramBackend, NGramEncoder
from mcel.ontology import Entity, Ontology


@pytest.fixture
def tiny_ontology() -> Ontology:
    return Ontology(
        [
            Entity("D001", "hemoglobin", ("haemoglobin",)),
            Entity("D002", "haemoglobin c"),
            Entity("D003", "diabetes"),
        ]
    )


@pytest.fixture
def tiny_backend(tiny_ontology) -> BuiltinNgramBackend:
    corpus = [name for _, name in tiny_ontology.name_rows()]
    encoder = NGramEncoder.build(corpus, dim=32, hash_buckets=16, seed=3)
    return BuiltinNgramBackend(encoder)


def write_tsv(path, rows):
    path.write_text("\n".join("\t".join(row) for row in rows) + "\n", encoding="utf-8")
    return path
