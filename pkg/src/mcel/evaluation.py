"""End-to-end accuracy evaluation, ablation matrix, and hyper-parameter sweeps.

The evaluation loop mirrors inference exactly: embed the mention, retrieve
top-N candidates, build the (never gold-injected) choice set, attach
neighbors according to the configured mode, assemble the prompt, ask the
generator, and score the predicted entity id against gold. Both accuracy and
retriever recall use the full split size as denominator, so with the scripted
oracle backend accuracy equals recall@N exactly.

Reports are deterministic given config + seed + checkpoints: the JSON form
excludes wall-clock timing (that lives in the human-readable table), and the
only randomness (the random-instances ablation) is seeded per mention
ordinal, independent of evaluation order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embedder import EmbedderBackend, embed
from .errors import McelError
from .generator import GeneratorBackend, answer, answer_generate_names
from .knnstore import EMPTY_NEIGHBORS, Datastore, assemble_enhanced_prompt
from .mcp import make_choice_set, parse_answer
from .ontology import Mention, Ontology
from .vecindex import VectorIndex, with_canonical_names

NEIGHBOR_MODES = ("similar", "random", "none")
ANSWER_MODES = ("symbol", "generate-names")
DISPLAY_MODES = ("matched", "canonical")
ABLATION_ROWS = ("full", "no-aug", "no-knn", "random-neighbors", "generate-names")


@dataclass
class EvalConfig:
    """Evaluation-time settings; invalid combinations are normalized or rejected."""

    n_options: int = 5
    k_neighbors: int = 3
    augmentation: bool = True
    neighbor_mode: str = "similar"
    answer_mode: str = "symbol"
    display_name: str = "matched"
    generator_backend: str = "lexical-heuristic"
    embedder_backend: str = "builtin-ngram"
    max_prompt_chars: Optional[int] = None
    seed: int = 13

    def __post_init__(self) -> None:
        if not 1 <= self.n_options <= 26:
            raise McelError(f"n_options must be 1..26, got {self.n_options}")
        if self.k_neighbors < 0:
            raise McelError(f"k_neighbors must be >= 0, got {self.k_neighbors}")
        if self.neighbor_mode not in NEIGHBOR_MODES:
            raise McelError(f"neighbor_mode must be one of {NEIGHBOR_MODES}")
        if self.answer_mode not in ANSWER_MODES:
            raise McelError(f"answer_mode must be one of {ANSWER_MODES}")
        if self.display_name not in DISPLAY_MODES:
            raise McelError(f"display_name must be one of {DISPLAY_MODES}")
        # the two spellings of "no kNN" are one configuration
        if self.k_neighbors == 0:
            self.neighbor_mode = "none"
        if self.neighbor_mode == "none":
            self.k_neighbors = 0


@dataclass
class LinkEngine:
    """The assembled pipeline components evaluate() runs against."""

    ontology: Ontology
    backend: EmbedderBackend
    index: VectorIndex
    generator: GeneratorBackend
    datastore: Optional[Datastore] = None


@dataclass
class EvalReport:
    accuracy: float
    gold_in_candidates_rate: float
    invalid_output_rate: float
    no_match_count: int
    correct: int
    incorrect: int
    failed: int
    total: int
    records: list[dict] = field(repr=False, default_factory=list)
    config: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def to_json(self, include_timing: bool = False) -> str:
        payload = {
            "accuracy": self.accuracy,
            "gold_in_candidates_rate": self.gold_in_candidates_rate,
            "invalid_output_rate": self.invalid_output_rate,
            "no_match_count": self.no_match_count,
            "correct": self.correct,
            "incorrect": self.incorrect,
            "failed": self.failed,
            "total": self.total,
            "config": self.config,
            "records": self.records,
        }
        if include_timing:
            payload["wall_clock_seconds"] = self.wall_clock_seconds
        return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False)

    def save(self, path: str | Path, include_timing: bool = False) -> None:
        Path(path).write_text(self.to_json(include_timing) + "\n", encoding="utf-8")

    def format_table(self) -> str:
        rows = [
            ("accuracy", f"{self.accuracy:.4f}"),
            ("recall@N (gold in candidates)", f"{self.gold_in_candidates_rate:.4f}"),
            ("invalid output rate", f"{self.invalid_output_rate:.4f}"),
            ("no-match count", str(self.no_match_count)),
            ("correct / incorrect / failed", f"{self.correct} / {self.incorrect} / {self.failed}"),
            ("instances", str(self.total)),
            ("wall clock [s]", f"{self.wall_clock_seconds:.2f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _neighbor_rng(seed: int, ordinal: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, ordinal]))


def evaluate(
    mentions: Sequence[Mention], engine: LinkEngine, cfg: EvalConfig
) -> EvalReport:
    """Run the full pipeline over a split and aggregate an EvalReport.

    Per-instance component failures are recorded on the instance (and counted
    under ``failed``) rather than aborting the run.
    """
    if not mentions:
        raise McelError("evaluate needs at least one mention")
    if cfg.neighbor_mode != "none" and engine.datastore is None:
        raise McelError(f"neighbor_mode={cfg.neighbor_mode!r} needs a datastore")

    started = time.perf_counter()
    vectors = embed(engine.backend, [m.text for m in mentions])
    records: list[dict] = []
    correct = failed = invalid = no_match = gold_in_count = 0

    for mention, vec in zip(mentions, vectors):
        record: dict = {
            "ordinal": mention.ordinal,
            "mention": mention.text,
            "gold_id": mention.gold_id,
            "gold_in_candidates": False,
            "predicted_id": None,
            "symbol": None,
            "invalid_output": False,
            "no_match": False,
            "correct": False,
            "error": None,
        }
        try:
            candidates = engine.index.top_n(vec, cfg.n_options)
            if cfg.display_name == "canonical":
                candidates = with_canonical_names(candidates, engine.ontology)
            choice_set = make_choice_set(mention, candidates, gold_id=mention.gold_id)
            gold_in = choice_set.gold_symbol is not None
            if cfg.neighbor_mode == "none":
                neighbors = EMPTY_NEIGHBORS
            else:
                store = engine.datastore
                assert store is not None
                exclude = mention.ordinal if mention.split == store.split else None
                if cfg.neighbor_mode == "similar":
                    neighbors = store.query(vec, cfg.k_neighbors, exclude_ordinal=exclude)
                else:
                    neighbors = store.sample_random(
                        vec,
                        cfg.k_neighbors,
                        rng=_neighbor_rng(cfg.seed, mention.ordinal),
                        exclude_ordinal=exclude,
                    )
            prompt = assemble_enhanced_prompt(
                neighbors, choice_set, max_chars=cfg.max_prompt_chars
            )
            if cfg.answer_mode == "symbol":
                result = answer(engine.generator, prompt, choice_set)
                parsed = parse_answer(result.symbol, choice_set)
                if parsed.invalid:
                    invalid += 1
                    record["invalid_output"] = True
                    predicted = parsed.fallback_entity_id
                else:
                    record["symbol"] = parsed.symbol
                    predicted = choice_set.option_for(parsed.symbol).entity_id
            else:
                name_answer = answer_generate_names(
                    engine.generator, prompt, choice_set, engine.ontology
                )
                predicted = name_answer.entity_id
                if name_answer.no_match:
                    no_match += 1
                    record["no_match"] = True
                record["emitted_name"] = name_answer.emitted_name
            record["gold_in_candidates"] = gold_in
            gold_in_count += int(gold_in)
            record["predicted_id"] = predicted
            if predicted is not None and predicted == mention.gold_id:
                record["correct"] = True
                correct += 1
        except McelError as exc:
            record["error"] = str(exc)
            failed += 1
        records.append(record)

    total = len(mentions)
    records.sort(key=lambda r: r["ordinal"])
    return EvalReport(
        accuracy=correct / total,
        gold_in_candidates_rate=gold_in_count / total,
        invalid_output_rate=invalid / total,
        no_match_count=no_match,
        correct=correct,
        incorrect=total - correct - failed,
        failed=failed,
        total=total,
        records=records,
        config=dataclasses.asdict(cfg),
        wall_clock_seconds=time.perf_counter() - started,
    )


def run_ablations(
    mentions: Sequence[Mention], engine: LinkEngine, base_cfg: EvalConfig
) -> dict[str, EvalReport]:
    """The Table-3-shaped ablation matrix, all rows sharing the base seed.

    ``no-aug`` toggles the training-time augmentation flag (it is honored
    when training data is exported; at evaluation time it is config echo),
    ``no-knn`` drops the neighbor blocks, ``random-neighbors`` replaces the
    similarity query with the seeded uniform sampler, and ``generate-names``
    switches the generator to free-text name emission.
    """
    variants = {
        "full": base_cfg,
        "no-aug": dataclasses.replace(base_cfg, augmentation=False),
        "no-knn": dataclasses.replace(base_cfg, neighbor_mode="none"),
        "random-neighbors": dataclasses.replace(base_cfg, neighbor_mode="random"),
        "generate-names": dataclasses.replace(base_cfg, answer_mode="generate-names"),
    }
    return {row: evaluate(mentions, engine, cfg) for row, cfg in variants.items()}


def sweep(
    param: str,
    values: Sequence[int],
    mentions: Sequence[Mention],
    engine: LinkEngine,
    cfg: EvalConfig,
) -> list[tuple[int, EvalReport]]:
    """One evaluate() per value of N or K, everything else fixed."""
    if param not in ("N", "K"):
        raise McelError(f"sweep param must be 'N' or 'K', got {param!r}")
    if not values:
        raise McelError("sweep needs at least one value")
    out: list[tuple[int, EvalReport]] = []
    for value in values:
        if param == "N":
            variant = dataclasses.replace(cfg, n_options=int(value))
        else:
            variant = dataclasses.replace(
                cfg,
                k_neighbors=int(value),
                neighbor_mode="none" if int(value) == 0 else "similar",
            )
        out.append((int(value), evaluate(mentions, engine, variant)))
    return out


def write_sweep_csv(
    param: str, results: Sequence[tuple[int, EvalReport]], path: str | Path
) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([param, "accuracy", "gold_in_candidates_rate"])
        for value, report in results:
            writer.writerow(
                [value, f"{report.accuracy:.6f}", f"{report.gold_in_candidates_rate:.6f}"]
            )
