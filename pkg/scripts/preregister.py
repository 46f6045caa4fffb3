#!/usr/bin/env python3
"""Record the reference synthetic-benchmark numbers and the generator exports.

Run once per benchmark/pipeline change:

    python3 scripts/preregister.py

Outputs (committed to the repository):
    contracts/preregistered.json   frozen metrics the acceptance suite checks
    contracts/synthetic_train.jsonl  prompt/symbol rows for generator training
    contracts/synthetic_dev.jsonl    labeled dev rows for symbol-accuracy evals
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

import dataclasses

from mcel.engine import export_prompt_rows, training_choice_sets
from mcel.evaluation import run_ablations, sweep
from mcel.generator import LexicalHeuristicBackend, answer
from mcel.mcp import render, write_prompts_jsonl
from mcel.synthetic import (
    REFERENCE_ENCODER,
    build_reference_engine,
    make_benchmark,
    reference_contrastive_config,
    reference_eval_config,
)


def recall_at(engine, mentions, ks=(1, 5, 10)) -> dict[str, float]:
    vectors = engine.backend.embed([m.text for m in mentions])
    hits = {k: 0 for k in ks}
    for mention, vec in zip(mentions, vectors):
        ids = [c.entity_id for c in engine.index.top_n(vec, max(ks))]
        for k in ks:
            hits[k] += mention.gold_id in ids[:k]
    return {str(k): hits[k] / len(mentions) for k in ks}


def main() -> int:
    started = time.time()
    bench = make_benchmark()
    engine, trace = build_reference_engine(bench)
    print(f"trained reference retriever in {time.time() - started:.0f}s "
          f"(loss {trace[0]:.3f} -> {trace[-1]:.3f})")

    recall = recall_at(engine, bench.test)
    print("test recall:", recall)

    base_cfg = reference_eval_config()
    ablations = run_ablations(bench.test, engine, base_cfg)
    for row, report in ablations.items():
        print(f"  {row:<17} accuracy={report.accuracy:.4f}")

    sweep_rows = sweep("N", list(range(1, 11)), bench.test, engine, base_cfg)
    print("sweep:", " ".join(f"{n}:{r.accuracy:.4f}" for n, r in sweep_rows))

    # generator training/dev exports (plain MCP, canonical display names)
    train_instances = training_choice_sets(
        bench.train, bench.ontology, engine.backend, engine.index,
        n_options=5, display_name="canonical",
    )
    dev_instances = training_choice_sets(
        bench.dev, bench.ontology, engine.backend, engine.index,
        n_options=5, display_name="canonical",
    )
    train_rows = export_prompt_rows(
        train_instances, engine.datastore, engine.backend,
        k_neighbors=0, augment_count=2, seed=13,
    )
    dev_rows = export_prompt_rows(
        dev_instances, engine.datastore, engine.backend,
        k_neighbors=0, augment_count=0, seed=13,
    )
    contracts = REPO / "contracts"
    n_train = write_prompts_jsonl(train_rows, contracts / "synthetic_train.jsonl")
    n_dev = write_prompts_jsonl(dev_rows, contracts / "synthetic_dev.jsonl")
    print(f"exported {n_train} train rows, {n_dev} dev rows")

    # baseline the dev export with the lexical heuristic (symbol accuracy)
    heuristic = LexicalHeuristicBackend()
    correct = 0
    for _, choice_set in dev_instances:
        result = answer(heuristic, render(choice_set), choice_set)
        correct += result.symbol == choice_set.gold_symbol
    dev_symbol_accuracy = correct / len(dev_instances)
    print(f"lexical-heuristic dev symbol accuracy: {dev_symbol_accuracy:.4f}")

    payload = {
        "benchmark": {
            "seed": 13,
            "entities": len(bench.ontology),
            "train": len(bench.train),
            "dev": len(bench.dev),
            "test": len(bench.test),
        },
        "pipeline": {
            "encoder": REFERENCE_ENCODER,
            "contrastive": dataclasses.asdict(reference_contrastive_config()),
            "eval": dataclasses.asdict(base_cfg),
        },
        "trained_recall": recall,
        "ablations": {row: report.accuracy for row, report in ablations.items()},
        "generate_names_no_match": ablations["generate-names"].no_match_count,
        "sweep_n_accuracy": {str(n): report.accuracy for n, report in sweep_rows},
        "dev_symbol_accuracy": {
            "lexical-heuristic": dev_symbol_accuracy,
            "instances": len(dev_instances),
        },
        "loss_trace": [trace[0], trace[-1]],
    }
    out = contracts / "preregistered.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} in {time.time() - started:.0f}s total")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
