from __future__ import annotations

from mcel.ontology import SPLITS
from mcel.synthetic import SyntheticConfig, make_benchmark


def test_default_shape():
    bench = make_benchmark()
    assert len(bench.ontology) == 500
    assert len(bench.train) == 2000
    assert len(bench.dev) == 400
    assert len(bench.test) == 400


def test_same_seed_reproduces_exactly(tmp_path):
    a = make_benchmark(SyntheticConfig(seed=99))
    b = make_benchmark(SyntheticConfig(seed=99))
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a.write_to_dir(tmp_path / "a")
    b.write_to_dir(tmp_path / "b")
    for name in ("ontology.tsv", "train.tsv", "dev.tsv", "test.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_different_seeds_differ():
    a = make_benchmark(SyntheticConfig(seed=1))
    b = make_benchmark(SyntheticConfig(seed=2))
    assert [m.text for m in a.train[:50]] != [m.text for m in b.train[:50]]


def test_every_gold_resolves():
    bench = make_benchmark()
    for split in SPLITS:
        for mention in bench.split(split):
            assert mention.gold_id in bench.ontology
            assert not mention.dangling_gold


def test_aliases_are_not_dictionary_names():
    bench = make_benchmark()
    assert bench.aliases
    indexed = set(bench.ontology.name_index)
    for alias in bench.aliases.values():
        assert alias.casefold() not in indexed


def test_aliases_appear_in_training_mentions():
    bench = make_benchmark()
    train_texts = {m.text for m in bench.train}
    present = sum(1 for alias in bench.aliases.values() if alias in train_texts)
    # every aliased entity gets its alias in the coverage pass
    assert present == len(bench.aliases)


def test_shadowed_synonyms_are_shared_with_a_smaller_id():
    bench = make_benchmark()
    assert bench.shadowed
    for owner, shadow in bench.shadowed.items():
        holders = bench.ontology.lookup_by_name(shadow)
        assert owner in holders
        assert len(holders) >= 2
        assert min(holders) < owner  # the decoy wins the retrieval tie rule


def test_near_duplicate_siblings_exist():
    bench = make_benchmark()
    names = {e.canonical_name for e in bench.ontology}
    siblings = [
        n for n in names
        if n.rsplit(" ", 1)[-1] in ("c", "b", "ii") and n.rsplit(" ", 1)[0] in names
    ]
    assert len(siblings) >= 40


def test_roundtrips_through_ingestion(tmp_path):
    from mcel.ontology import ingest_mentions, ingest_ontology

    bench = make_benchmark()
    bench.write_to_dir(tmp_path)
    ontology = ingest_ontology(tmp_path / "ontology.tsv")
    assert len(ontology) == len(bench.ontology)
    assert ontology.name_index == bench.ontology.name_index
    train = ingest_mentions(tmp_path / "train.tsv", "train", ontology=ontology)
    assert len(train) == len(bench.train)
    assert [m.text for m in train] == [m.text for m in bench.train]
    assert [m.gold_id for m in train] == [m.gold_id for m in bench.train]
