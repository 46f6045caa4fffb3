"""Command-line entry point.

One executable, one verb per pipeline stage: synth, ingest, train-retriever,
index, build-datastore, link, evaluate, ablate, sweep, export-prompts.
Defaults < config file < flags; the effective configuration is echoed to
stderr on every run so any output can be reproduced. Usage errors exit 2,
data errors exit 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .embedder import BuiltinNgramBackend, ContrastiveConfig, NGramEncoder
from .engine import (
    check_fingerprints,
    export_prompt_rows,
    make_datastore,
    resolve_embedder,
    train_retriever,
    training_choice_sets,
)
from .errors import McelError
from .evaluation import (
    ABLATION_ROWS,
    EvalConfig,
    LinkEngine,
    evaluate,
    run_ablations,
    sweep,
    write_sweep_csv,
)
from .generator import resolve_backend
from .knnstore import Datastore, assemble_enhanced_prompt
from .mcp import make_choice_set, write_prompts_jsonl
from .ontology import dangling_count, ingest_mentions, ingest_ontology
from .synthetic import SyntheticConfig, make_benchmark
from .vecindex import VectorIndex, build_index

DEFAULT_SEED = 13


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _echo_config(command: str, args: argparse.Namespace) -> None:
    payload = {
        key: value
        for key, value in sorted(vars(args).items())
        if key not in ("func", "config") and not key.startswith("_")
    }
    _log(f"mcel {__version__} :: {command} :: config {json.dumps(payload, default=str)}")


def _require_paths(*paths: Optional[str]) -> None:
    for path in paths:
        if path is not None and not Path(path).exists():
            raise McelError(f"input path does not exist: {path}")


def _load_config_file(path: str) -> dict[str, str]:
    """Flat key-value config: one `flag-name = value` per line, # comments."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise McelError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _apply_config_defaults(
    parser: argparse.ArgumentParser, values: dict[str, str]
) -> None:
    """Config-file values become parser defaults, so flags still win."""
    known = {}
    for action in parser._actions:  # noqa: SLF001 - argparse has no public hook
        for option in action.option_strings:
            known[option.lstrip("-")] = action
    for key, raw in values.items():
        action = known.get(key)
        if action is None:
            raise McelError(f"config file sets unknown option {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        parser.set_defaults(**{action.dest: value})


# --- engine assembly from flags ---


def _load_embedder(args: argparse.Namespace):
    return resolve_embedder(
        getattr(args, "embedder", "builtin-ngram"),
        checkpoint=getattr(args, "checkpoint", None),
        endpoint=getattr(args, "embed_endpoint", None),
    )


def _load_engine(args: argparse.Namespace) -> LinkEngine:
    _require_paths(args.ontology, getattr(args, "index", None))
    ontology = ingest_ontology(args.ontology, format=args.ontology_format)
    backend = _load_embedder(args)
    index = VectorIndex.load(args.index)
    datastore = None
    if getattr(args, "datastore", None):
        _require_paths(args.datastore)
        datastore = Datastore.load(args.datastore)
    check_fingerprints(backend, index=index, datastore=datastore)
    generator = resolve_backend(
        args.generator, endpoint=getattr(args, "generator_endpoint", None)
    )
    return LinkEngine(
        ontology=ontology,
        backend=backend,
        index=index,
        generator=generator,
        datastore=datastore,
    )


def _eval_config(args: argparse.Namespace) -> EvalConfig:
    return EvalConfig(
        n_options=args.n_options,
        k_neighbors=args.k_neighbors,
        augmentation=not getattr(args, "no_augmentation", False),
        neighbor_mode=args.neighbor_mode,
        answer_mode=getattr(args, "answer_mode", "symbol"),
        display_name=getattr(args, "display_name", "matched"),
        generator_backend=args.generator,
        embedder_backend=getattr(args, "embedder", "builtin-ngram"),
        max_prompt_chars=getattr(args, "max_prompt_chars", None),
        seed=args.seed,
    )


# --- subcommand implementations ---


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg = SyntheticConfig(
        n_entities=args.entities,
        n_train=args.train,
        n_dev=args.dev,
        n_test=args.test,
        seed=args.seed,
    )
    benchmark = make_benchmark(cfg)
    benchmark.write_to_dir(args.out_dir)
    _log(
        f"wrote synthetic benchmark to {args.out_dir}: "
        f"{len(benchmark.ontology)} entities, "
        f"{len(benchmark.train)}/{len(benchmark.dev)}/{len(benchmark.test)} "
        "train/dev/test mentions"
    )
    return 0


def _cmd_ingest(args: argparse.Namespace) -> int:
    _require_paths(args.ontology, args.mentions)
    ontology = ingest_ontology(args.ontology, format=args.ontology_format)
    print(f"ontology: {len(ontology)} entities, {len(ontology.name_index)} indexed names")
    if args.mentions:
        mentions = ingest_mentions(
            args.mentions, args.split, ontology=ontology, format=args.mentions_format
        )
        print(
            f"mentions[{args.split}]: {len(mentions)} records, "
            f"{dangling_count(mentions)} dangling gold ids"
        )
    return 0


def _cmd_train_retriever(args: argparse.Namespace) -> int:
    _require_paths(args.ontology, args.mentions)
    ontology = ingest_ontology(args.ontology, format=args.ontology_format)
    mentions = ingest_mentions(
        args.mentions, "train", ontology=ontology, format=args.mentions_format
    )
    cfg = ContrastiveConfig(
        temperature=args.temperature,
        batch_size=args.batch_size,
        hard_negatives_per_pair=args.hard_negatives,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    encoder, trace = train_retriever(
        ontology,
        mentions,
        cfg,
        dim=args.dim,
        hash_buckets=args.hash_buckets,
        max_vocab=args.max_vocab,
    )
    encoder.save(args.out)
    _log(f"loss trace: {' '.join(f'{ls:.4f}' for ls in trace)}")
    _log(f"saved encoder checkpoint to {args.out} ({encoder.fingerprint()[:12]}...)")
    return 0


def _cmd_index(args: argparse.Namespace) -> int:
    _require_paths(args.ontology, args.checkpoint)
    ontology = ingest_ontology(args.ontology, format=args.ontology_format)
    backend = BuiltinNgramBackend(NGramEncoder.load(args.checkpoint))
    index = build_index(ontology, backend)
    index.save(args.out)
    _log(f"indexed {len(index)} name rows over {index.distinct_entities} entities")
    return 0


def _cmd_build_datastore(args: argparse.Namespace) -> int:
    _require_paths(args.ontology, args.checkpoint, args.index, args.mentions)
    ontology = ingest_ontology(args.ontology, format=args.ontology_format)
    backend = BuiltinNgramBackend(NGramEncoder.load(args.checkpoint))
    index = VectorIndex.load(args.index)
    check_fingerprints(backend, index=index)
    mentions = ingest_mentions(
        args.mentions, "train", ontology=ontology, format=args.mentions_format
    )
    store = make_datastore(
        mentions, ontology, backend, index, args.n_options,
        display_name=args.display_name,
    )
    store.save(args.out)
    _log(f"datastore: {len(store)} entries -> {args.out}")
    return 0


def _cmd_link(args: argparse.Namespace) -> int:
    engine = _load_engine(args)
    cfg = _eval_config(args)
    vec = engine.backend.embed([args.mention])[0]
    candidates = engine.index.top_n(vec, cfg.n_options)
    if cfg.display_name == "canonical":
        from .vecindex import with_canonical_names

        candidates = with_canonical_names(candidates, engine.ontology)
    choice_set = make_choice_set(args.mention, candidates)
    print("candidates:")
    for cand in candidates:
        print(f"  {cand.rank}. {cand.entity_id}  {cand.matched_name}  ({cand.similarity:.4f})")
    if cfg.neighbor_mode == "similar" and engine.datastore is not None and cfg.k_neighbors:
        neighbors = engine.datastore.query(vec, cfg.k_neighbors)
    else:
        from .knnstore import EMPTY_NEIGHBORS

        neighbors = EMPTY_NEIGHBORS
    if len(neighbors):
        print("neighbors:")
        for n in neighbors.neighbors:
            gold = n.entry.choice_set.option_for(n.entry.gold_symbol)
            print(
                f"  ({n.similarity:.4f}) {n.entry.mention_text!r} -> "
                f"{n.entry.gold_symbol}. {gold.display_name} [{gold.entity_id}]"
            )
    prompt = assemble_enhanced_prompt(neighbors, choice_set, max_chars=cfg.max_prompt_chars)
    print(f"prompt: {prompt.text}")
    from .generator import answer as ask

    result = ask(engine.generator, prompt, choice_set)
    chosen = choice_set.option_for(result.symbol)
    print("scores: " + " ".join(f"{s}={p:.4f}" for s, p in result.scores.items()))
    print(f"answer: {result.symbol} -> {chosen.entity_id} ({chosen.display_name})")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    engine = _load_engine(args)
    _require_paths(args.mentions)
    mentions = ingest_mentions(
        args.mentions, args.split, ontology=engine.ontology, format=args.mentions_format
    )
    report = evaluate(mentions, engine, _eval_config(args))
    print(report.format_table())
    if args.report:
        report.save(args.report, include_timing=args.include_timing)
        _log(f"wrote report to {args.report}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    engine = _load_engine(args)
    _require_paths(args.mentions)
    mentions = ingest_mentions(
        args.mentions, args.split, ontology=engine.ontology, format=args.mentions_format
    )
    reports = run_ablations(mentions, engine, _eval_config(args))
    width = max(len(row) for row in ABLATION_ROWS)
    for row in ABLATION_ROWS:
        report = reports[row]
        extra = f"  no-match={report.no_match_count}" if row == "generate-names" else ""
        print(f"{row:<{width}}  accuracy={report.accuracy:.4f}{extra}")
    if args.report_dir:
        out_dir = Path(args.report_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for row, report in reports.items():
            report.save(out_dir / f"{row}.json", include_timing=args.include_timing)
        _log(f"wrote {len(reports)} reports to {out_dir}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    engine = _load_engine(args)
    _require_paths(args.mentions)
    mentions = ingest_mentions(
        args.mentions, args.split, ontology=engine.ontology, format=args.mentions_format
    )
    values = [int(v) for v in args.values.split(",") if v.strip()]
    results = sweep(args.param, values, mentions, engine, _eval_config(args))
    for value, report in results:
        print(f"{args.param}={value}  accuracy={report.accuracy:.4f}  "
              f"recall={report.gold_in_candidates_rate:.4f}")
    if args.csv:
        write_sweep_csv(args.param, results, args.csv)
        _log(f"wrote sweep table to {args.csv}")
    return 0


def _cmd_export_prompts(args: argparse.Namespace) -> int:
    _require_paths(args.ontology, args.checkpoint, args.index, args.mentions)
    ontology = ingest_ontology(args.ontology, format=args.ontology_format)
    backend = BuiltinNgramBackend(NGramEncoder.load(args.checkpoint))
    index = VectorIndex.load(args.index)
    check_fingerprints(backend, index=index)
    datastore = None
    if args.datastore:
        _require_paths(args.datastore)
        datastore = Datastore.load(args.datastore)
        check_fingerprints(backend, datastore=datastore)
    mentions = ingest_mentions(
        args.mentions, args.split, ontology=ontology, format=args.mentions_format
    )
    instances = training_choice_sets(
        mentions, ontology, backend, index, args.n_options,
        display_name=args.display_name,
    )
    rows = export_prompt_rows(
        instances,
        datastore,
        backend,
        k_neighbors=args.k_neighbors,
        augment_count=0 if args.no_augmentation else args.augment_count,
        seed=args.seed,
        max_prompt_chars=args.max_prompt_chars,
    )
    count = write_prompts_jsonl(rows, args.out)
    _log(f"exported {count} prompt rows to {args.out}")
    return 0


# --- parser wiring ---


def _add_ontology_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--ontology", required=True, help="entity dictionary file")
    sub.add_argument(
        "--ontology-format", choices=("tsv-dict", "jsonl"), default="tsv-dict"
    )


def _add_mentions_flags(sub: argparse.ArgumentParser, required: bool = True) -> None:
    sub.add_argument("--mentions", required=required, help="mention file")
    sub.add_argument("--mentions-format", choices=("tsv", "jsonl"), default="tsv")
    sub.add_argument("--split", choices=("train", "dev", "test"), default="test")


def _add_engine_flags(sub: argparse.ArgumentParser) -> None:
    _add_ontology_flags(sub)
    sub.add_argument("--checkpoint", required=True, help="encoder checkpoint")
    sub.add_argument("--index", required=True, help="vector index file")
    sub.add_argument("--datastore", default=None, help="kNN datastore file")
    sub.add_argument(
        "--embedder", choices=("builtin-ngram", "remote"), default="builtin-ngram"
    )
    sub.add_argument(
        "--embed-endpoint",
        default=os.environ.get("MCEL_EMBED_ENDPOINT"),
        help="remote embedder URL (env: MCEL_EMBED_ENDPOINT)",
    )
    sub.add_argument(
        "--generator",
        choices=("scripted-oracle", "lexical-heuristic", "remote-seq2seq"),
        default="lexical-heuristic",
    )
    sub.add_argument(
        "--generator-endpoint",
        default=os.environ.get("MCEL_GENERATOR_ENDPOINT"),
        help="remote generator URL (env: MCEL_GENERATOR_ENDPOINT)",
    )


def _add_eval_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--n-options", type=int, default=5)
    sub.add_argument("--k-neighbors", type=int, default=3)
    sub.add_argument(
        "--neighbor-mode", choices=("similar", "random", "none"), default="similar"
    )
    sub.add_argument(
        "--answer-mode", choices=("symbol", "generate-names"), default="symbol"
    )
    sub.add_argument(
        "--display-name", choices=("matched", "canonical"), default="matched"
    )
    sub.add_argument("--no-augmentation", action="store_true")
    sub.add_argument("--max-prompt-chars", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcel",
        description="Multiple-choice entity linking engine",
    )
    parser.add_argument("--version", action="version", version=f"mcel {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def sub(name: str, func, help: str) -> argparse.ArgumentParser:
        p = subparsers.add_parser(name, help=help)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.set_defaults(func=func)
        return p

    p = sub("synth", _cmd_synth, "generate the seeded synthetic benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--entities", type=int, default=500)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--dev", type=int, default=400)
    p.add_argument("--test", type=int, default=400)

    p = sub("ingest", _cmd_ingest, "validate dataset files and report counts")
    _add_ontology_flags(p)
    _add_mentions_flags(p, required=False)

    p = sub("train-retriever", _cmd_train_retriever, "contrastively train the encoder")
    _add_ontology_flags(p)
    _add_mentions_flags(p)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=4e-4)
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--hard-negatives", type=int, default=4)
    p.add_argument("--hash-buckets", type=int, default=4096)
    p.add_argument("--max-vocab", type=int, default=50000)

    p = sub("index", _cmd_index, "embed all entity names into a vector index")
    _add_ontology_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub("build-datastore", _cmd_build_datastore, "index solved training instances")
    _add_ontology_flags(p)
    _add_mentions_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-options", type=int, default=5)
    p.add_argument("--display-name", choices=("matched", "canonical"), default="matched")

    p = sub("link", _cmd_link, "link one mention and show all intermediate stages")
    _add_engine_flags(p)
    _add_eval_flags(p)
    p.add_argument("--mention", required=True)

    p = sub("evaluate", _cmd_evaluate, "accuracy over a split")
    _add_engine_flags(p)
    _add_mentions_flags(p)
    _add_eval_flags(p)
    p.add_argument("--report", default=None, help="JSON report output path")
    p.add_argument("--include-timing", action="store_true")

    p = sub("ablate", _cmd_ablate, "run the ablation matrix")
    _add_engine_flags(p)
    _add_mentions_flags(p)
    _add_eval_flags(p)
    p.add_argument("--report-dir", default=None)
    p.add_argument("--include-timing", action="store_true")

    p = sub("sweep", _cmd_sweep, "accuracy curve over N or K")
    _add_engine_flags(p)
    _add_mentions_flags(p)
    _add_eval_flags(p)
    p.add_argument("--param", choices=("N", "K"), required=True)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--csv", default=None)

    p = sub("export-prompts", _cmd_export_prompts, "JSONL prompt/symbol training export")
    _add_ontology_flags(p)
    _add_mentions_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--datastore", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--n-options", type=int, default=5)
    p.add_argument("--k-neighbors", type=int, default=0)
    p.add_argument("--augment-count", type=int, default=1)
    p.add_argument("--no-augmentation", action="store_true")
    p.add_argument("--max-prompt-chars", type=int, default=None)
    p.add_argument("--display-name", choices=("matched", "canonical"), default="matched")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    # two-pass parse so a --config file can supply defaults that flags override
    preliminary, _ = parser.parse_known_args(argv)
    if getattr(preliminary, "config", None):
        try:
            values = _load_config_file(preliminary.config)
            for action in parser._subparsers._group_actions:  # noqa: SLF001
                sub_parser = action.choices.get(preliminary.command)
                if sub_parser is not None:
                    _apply_config_defaults(sub_parser, values)
        except (OSError, McelError) as exc:
            _log(f"error: {exc}")
            return 1
    args = parser.parse_args(argv)
    _echo_config(args.command, args)
    try:
        return args.func(args)
    except (McelError, OSError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
