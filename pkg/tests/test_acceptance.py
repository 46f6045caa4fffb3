"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Tolerances are pinned here, not configurable.

The synthetic-benchmark criteria run the full reference pipeline (seeded
train -> index -> datastore -> evaluate); numbers are compared against the
pre-registered run recorded in contracts/preregistered.json at first
implementation.
"""

from __future__ import annotations

import json
import math
import string
import time
from pathlib import Path

import numpy as np
import pytest

from mcel.embedder import (
    BuiltinNgramBackend,
    NGramEncoder,
    contrastive_loss,
    pair_loss_and_grad,
)
from mcel.evaluation import evaluate, run_ablations, sweep
from mcel.generator import ScriptedOracleBackend
from mcel.knnstore import Datastore, DatastoreEntry, assemble_enhanced_prompt
from mcel.mcp import ChoiceOption, ChoiceSet, augment_swap, make_choice_set, render_text
from mcel.synthetic import build_reference_engine, make_benchmark, reference_eval_config
from mcel.vecindex import Candidate, VectorIndex

PREREGISTERED = json.loads(
    (Path(__file__).resolve().parents[1] / "contracts" / "preregistered.json").read_text()
)

_timings: dict[str, float] = {}


def report(criterion: str, ok: bool, elapsed: float, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  [{detail}]" if detail else ""
    print(f"ACCEPTANCE {status} {criterion} ({elapsed:.1f}s){suffix}")
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def reference():
    """Benchmark + trained reference pipeline, built once for the module."""
    started = time.perf_counter()
    bench = make_benchmark()
    engine, trace = build_reference_engine(bench)
    _timings["reference_build"] = time.perf_counter() - started
    return bench, engine, trace


# --- criterion 1: loss correctness -----------------------------------------


def test_loss_correctness():
    started = time.perf_counter()
    checks: list[bool] = []

    m = np.array([1.0, 0.0])

    def on_cosine(c):
        return np.array([c, math.sqrt(1.0 - c * c)])

    # symmetric one-negative case: exactly ln 2
    pos = on_cosine(0.4)
    neg = np.array([0.4, -math.sqrt(1.0 - 0.16)])
    for tau in (0.01, 0.3, 1.0, 5.0):
        checks.append(abs(contrastive_loss(m, pos, [neg], tau) - math.log(2)) <= 1e-9)

    # k uniform negatives: exactly ln(k+1)
    for k in (1, 2, 4, 9):
        negs = [on_cosine(0.7) for _ in range(k)]
        loss = contrastive_loss(m, on_cosine(0.7), negs, 0.17)
        checks.append(abs(loss - math.log(k + 1)) <= 1e-9)

    # analytic gradient vs central finite differences on 50 random encoders
    rng = np.random.default_rng(24601)
    alphabet = list(string.ascii_lowercase[:6])
    encoders_checked = 0
    worst = 0.0
    for _ in range(50):
        corpus = [
            "".join(rng.choice(alphabet, size=rng.integers(3, 7))) for _ in range(6)
        ]
        encoder = NGramEncoder.build(
            corpus, dim=int(rng.integers(2, 9)), ngram_sizes=(2, 3),
            hash_buckets=4, max_vocab=16, seed=int(rng.integers(0, 2**31)),
        )
        assert encoder.feature_count <= 20
        words = ["".join(rng.choice(alphabet, size=rng.integers(3, 7))) for _ in range(5)]
        mention, positive, *negatives = words
        _, analytic = pair_loss_and_grad(encoder, mention, positive, negatives, tau=1.0)
        weights = encoder.weights
        numeric = np.zeros_like(weights)
        eps = 1e-6
        for i in range(weights.shape[0]):
            for j in range(weights.shape[1]):
                weights[i, j] += eps
                up, _ = pair_loss_and_grad(encoder, mention, positive, negatives, 1.0)
                weights[i, j] -= 2 * eps
                down, _ = pair_loss_and_grad(encoder, mention, positive, negatives, 1.0)
                weights[i, j] += eps
                numeric[i, j] = (up - down) / (2 * eps)
        rel = np.abs(analytic - numeric) / np.maximum.reduce(
            [np.abs(analytic), np.abs(numeric), np.full_like(numeric, 1e-6)]
        )
        worst = max(worst, float(rel.max()))
        encoders_checked += 1
    checks.append(encoders_checked >= 50)
    checks.append(worst < 1e-4)

    elapsed = time.perf_counter() - started
    checks.append(elapsed < 10.0)
    report(
        "loss-correctness (ln2, ln(k+1), 50-encoder gradient check, <10s)",
        all(checks), elapsed, f"max rel grad err {worst:.2e}",
    )


# --- criterion 2: retrieval exactness ---------------------------------------
# independent brute-force oracles, pure python, math.fsum arithmetic


def _cosine(row, query):
    dot = math.fsum(a * b for a, b in zip(row, query))
    rn = math.sqrt(math.fsum(a * a for a in row))
    qn = math.sqrt(math.fsum(b * b for b in query))
    return dot / (rn * qn)


def oracle_entity_ranking(keys, matrix, query):
    best = {}
    for (entity_id, name), row in zip(keys, matrix):
        sim = _cosine(row, query)
        cur = best.get(entity_id)
        if cur is None or sim > cur[0] or (sim == cur[0] and name < cur[1]):
            best[entity_id] = (sim, name)
    return sorted(
        ((eid, sim, name) for eid, (sim, name) in best.items()),
        key=lambda item: (-item[1], item[0]),
    )


def oracle_store_ranking(keys, ordinals, query, exclude):
    scored = [
        (ordinal, _cosine(row, query))
        for ordinal, row in zip(ordinals, keys)
        if exclude is None or ordinal != exclude
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def _random_rows(rng, rows, dim, n_entities):
    keys, vectors = [], []
    for i in range(rows):
        keys.append((f"E{int(rng.integers(0, n_entities)):05d}", f"name-{i:06d}"))
        if vectors and rng.random() < 0.08:
            vectors.append(vectors[int(rng.integers(0, len(vectors)))].copy())
        else:
            v = rng.normal(size=dim)
            vectors.append(v / np.linalg.norm(v))
    return keys, np.array(vectors)


def test_retrieval_exactness():
    started = time.perf_counter()
    rng = np.random.default_rng(777)
    instances = 0
    ok = True
    detail = ""

    sizes = [int(rng.integers(50, 800)) for _ in range(97)] + [5000, 8000, 10_000]
    for rows in sizes:
        dim = int(rng.integers(4, 12))
        keys, matrix = _random_rows(rng, rows, dim, max(10, rows // 2))
        query = rng.normal(size=dim)
        kind = instances % 3
        if kind == 0:
            n = int(rng.integers(1, 12))
            got = VectorIndex(keys, matrix).top_n(query, n)
            want = oracle_entity_ranking(keys, matrix, query)[:n]
            same_order = [c.entity_id for c in got] == [e for e, _, _ in want] and [
                c.matched_name for c in got
            ] == [nm for _, _, nm in want]
            close = all(
                abs(c.similarity - sim) <= 1e-9 for c, (_, sim, _) in zip(got, want)
            )
            if not (same_order and close):
                ok, detail = False, f"top_n mismatch at rows={rows}"
                break
        elif kind == 1:
            count = int(rng.integers(0, 10))
            gold = keys[int(rng.integers(0, len(keys)))][0]
            got_ids = VectorIndex(keys, matrix).mine_hard_negatives(query, gold, count)
            ranking = oracle_entity_ranking(keys, matrix, query)
            want_ids = [e for e, _, _ in ranking if e != gold][:count]
            if got_ids != want_ids:
                ok, detail = False, f"mine mismatch at rows={rows}"
                break
        else:
            ordinals = list(range(rows))
            entries = [
                DatastoreEntry(
                    ordinal=i,
                    mention_text=f"m{i}",
                    choice_set=ChoiceSet(
                        mention_text=f"m{i}",
                        options=(ChoiceOption("A", f"e{i}", "x"),),
                        gold_symbol="A",
                    ),
                )
                for i in ordinals
            ]
            store = Datastore(entries, matrix)
            k = int(rng.integers(1, 9))
            exclude = int(rng.integers(0, rows)) if rng.random() < 0.5 else None
            got = store.query(query, k, exclude_ordinal=exclude)
            want = oracle_store_ranking(matrix, ordinals, query, exclude)[:k]
            if [n.entry.ordinal for n in got.neighbors] != [o for o, _ in want] or any(
                abs(n.similarity - sim) > 1e-9
                for n, (_, sim) in zip(got.neighbors, want)
            ):
                ok, detail = False, f"store query mismatch at rows={rows}"
                break
        instances += 1

    elapsed = time.perf_counter() - started
    ok = ok and instances >= 100 and elapsed < 30.0
    report(
        "retrieval-exactness (top_n, mining, datastore vs brute force, <30s)",
        ok, elapsed, detail or f"{instances} instances",
    )


# --- criterion 3: MCP structural suite --------------------------------------


def test_mcp_structural_suite():
    started = time.perf_counter()
    rng = np.random.default_rng(4242)
    ok = True
    detail = ""
    cases = 0
    for case in range(1000):
        n = int(rng.integers(2, 9))
        names = [f"name {rng.integers(0, 10**6):06d}" for _ in range(n)]
        cands = [
            Candidate(entity_id=f"e{case}-{i}", matched_name=names[i],
                      similarity=1.0 - 0.05 * i, rank=i + 1)
            for i in range(n)
        ]
        gold_pos = int(rng.integers(0, n))
        cs = make_choice_set(f"mention {case}", cands, gold_id=f"e{case}-{gold_pos}")

        # symbol-content consistency
        if cs.option_for(cs.gold_symbol).entity_id != f"e{case}-{gold_pos}":
            ok, detail = False, "gold symbol does not point at the gold entity"
            break
        # render byte-determinism
        if render_text(cs) != render_text(cs):
            ok, detail = False, "render not deterministic"
            break
        # augment_swap gold tracking + positional symbols
        swapped = augment_swap(cs, rng_seed=case)
        if swapped.option_for(swapped.gold_symbol).entity_id != cs.gold_entity_id:
            ok, detail = False, "swap lost the gold entity"
            break
        if swapped.symbols != tuple("ABCDEFGHIJKLMNOPQRSTUVWXYZ"[:n]):
            ok, detail = False, "swap broke positional symbols"
            break
        if sorted(o.entity_id for o in swapped.options) != sorted(
            o.entity_id for o in cs.options
        ):
            ok, detail = False, "swap changed the option multiset"
            break
        # enhanced prompt: exactly K+1 "answer:" tokens, solved blocks labeled
        k = int(rng.integers(0, 4))
        neighbors = []
        from mcel.knnstore import Neighbor, NeighborSet

        for j in range(k):
            neighbors.append(
                Neighbor(
                    entry=DatastoreEntry(
                        ordinal=j, mention_text=f"n{j}",
                        choice_set=ChoiceSet(
                            mention_text=f"n{j}",
                            options=(
                                ChoiceOption("A", f"na{j}", "p"),
                                ChoiceOption("B", f"nb{j}", "q"),
                            ),
                            gold_symbol="B" if j % 2 else "A",
                        ),
                    ),
                    similarity=0.9 - 0.1 * j,
                )
            )
        prompt = assemble_enhanced_prompt(NeighborSet(tuple(neighbors)), cs)
        if prompt.text.count("answer:") != k + 1:
            ok, detail = False, f"expected {k + 1} answer tokens"
            break
        if not prompt.text.endswith("answer:"):
            ok, detail = False, "prompt does not end unsolved"
            break
        chunks = prompt.text.split("answer:")
        solved = [nb.entry.gold_symbol for nb in neighbors]
        if any(not chunk.startswith(f" {sym} ") for chunk, sym in zip(chunks[1:], solved)):
            ok, detail = False, "solved block not followed by its gold symbol"
            break
        cases += 1

    # self-filter leakage: every stored instance excluded from its own neighbors
    if ok:
        rng2 = np.random.default_rng(11)
        vectors = rng2.normal(size=(200, 6))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        entries = [
            DatastoreEntry(
                ordinal=i, mention_text=f"m{i}",
                choice_set=ChoiceSet(
                    mention_text=f"m{i}",
                    options=(ChoiceOption("A", f"e{i}", "x"),),
                    gold_symbol="A",
                ),
            )
            for i in range(200)
        ]
        store = Datastore(entries, vectors)
        for i in range(200):
            got = store.query(vectors[i], k=5, exclude_ordinal=i)
            if any(nb.entry.ordinal == i for nb in got.neighbors):
                ok, detail = False, f"leak at ordinal {i}"
                break

    elapsed = time.perf_counter() - started
    ok = ok and cases == 1000 and elapsed < 10.0
    report(
        "mcp-structural (1000 cases: symbols, swaps, renders, Eq.4 shape, self-filter, <10s)",
        ok, elapsed, detail or f"{cases} cases",
    )


# --- criterion 4: oracle ceiling --------------------------------------------


def test_oracle_ceiling(reference):
    started = time.perf_counter()
    bench, engine, _ = reference
    oracle_engine = type(engine)(
        ontology=engine.ontology,
        backend=engine.backend,
        index=engine.index,
        generator=ScriptedOracleBackend(),
        datastore=engine.datastore,
    )
    ok = True
    detail = ""
    for n in (1, 5, 10):
        cfg = reference_eval_config(n_options=n, generator_backend="scripted-oracle")
        result = evaluate(bench.test, oracle_engine, cfg)
        if result.accuracy != result.gold_in_candidates_rate:
            ok = False
            detail = f"N={n}: {result.accuracy} != {result.gold_in_candidates_rate}"
            break
    elapsed = time.perf_counter() - started
    report("oracle-ceiling (accuracy == recall@N for N in 1,5,10)", ok, elapsed, detail)


# --- criterion 5: synthetic benchmark bands ---------------------------------


def test_synthetic_benchmark(reference):
    started = time.perf_counter()
    bench, engine, _ = reference

    vectors = engine.backend.embed([m.text for m in bench.test])
    hits5 = sum(
        m.gold_id in [c.entity_id for c in engine.index.top_n(v, 5)]
        for m, v in zip(bench.test, vectors)
    )
    recall5 = hits5 / len(bench.test)

    reports = run_ablations(bench.test, engine, reference_eval_config())
    full = reports["full"].accuracy
    preregistered_full = PREREGISTERED["ablations"]["full"]

    checks = {
        "recall@5 >= 0.95": recall5 >= 0.95,
        "heuristic within ±2pts of pre-registered": abs(full - preregistered_full) <= 0.02,
        "full >= no-knn": full >= reports["no-knn"].accuracy,
        "full >= random-neighbors": full >= reports["random-neighbors"].accuracy,
        "symbol > generate-names": full > reports["generate-names"].accuracy,
    }
    elapsed = time.perf_counter() - started
    total = elapsed + _timings.get("reference_build", 0.0)
    checks["runtime < 5 min (incl. training)"] = total < 300.0
    failed = [name for name, passed in checks.items() if not passed]
    report(
        "synthetic-benchmark (recall, pre-registered band, ablation directions, <5min)",
        not failed, total,
        f"recall@5={recall5:.4f} full={full:.4f} "
        + (f"failed: {failed}" if failed else "all bands"),
    )


# --- criterion 6: sweep shape ------------------------------------------------


def test_sweep_shape(reference):
    started = time.perf_counter()
    bench, engine, _ = reference
    results = sweep("N", list(range(1, 11)), bench.test, engine, reference_eval_config())
    curve = [r.accuracy for _, r in results]
    peak_index = curve.index(max(curve))
    interior = 0 < peak_index < len(curve) - 1
    above_ends = curve[peak_index] > curve[0] and curve[peak_index] > curve[-1]
    elapsed = time.perf_counter() - started
    report(
        "sweep-shape (accuracy vs N rises then declines, interior maximum)",
        interior and above_ends, elapsed,
        "curve " + " ".join(f"{a:.4f}" for a in curve),
    )


# --- criterion 7: determinism ------------------------------------------------


def test_determinism(reference):
    started = time.perf_counter()
    bench, engine, _ = reference
    first = evaluate(bench.test, engine, reference_eval_config()).to_json()
    # a second, fully independent pipeline build from the same seeds
    bench2 = make_benchmark()
    engine2, _ = build_reference_engine(bench2)
    second = evaluate(bench2.test, engine2, reference_eval_config()).to_json()
    ok = first.encode() == second.encode()
    elapsed = time.perf_counter() - started
    report("determinism (two full pipeline runs, byte-identical reports)", ok, elapsed)
