"""mcel: multiple-choice entity linking.

Dense candidate retrieval with a contrastively trained character n-gram
embedder, multiple-choice prompt construction with kNN-retrieved solved
examples, pluggable answer-selection backends, and an evaluation/ablation
harness.
"""

from .embedder import (
    BuiltinNgramBackend,
    ContrastiveConfig,
    NGramEncoder,
    RemoteEmbedderBackend,
    contrastive_loss,
    embed,
    score,
    train,
)
from .errors import McelError
from .evaluation import EvalConfig, EvalReport, LinkEngine, evaluate, run_ablations, sweep
from .generator import (
    Answer,
    LexicalHeuristicBackend,
    RemoteSeq2SeqBackend,
    ScriptedOracleBackend,
    answer,
    answer_generate_names,
)
from .knnstore import Datastore, NeighborSet, assemble_enhanced_prompt, build_datastore
from .mcp import (
    ChoiceSet,
    PromptInstance,
    augment_swap,
    make_choice_set,
    parse_answer,
    render,
)
from .ontology import Entity, Mention, Ontology, ingest_mentions, ingest_ontology
from .synthetic import SyntheticConfig, make_benchmark
from .vecindex import Candidate, VectorIndex, build_index

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "BuiltinNgramBackend",
    "Candidate",
    "ChoiceSet",
    "ContrastiveConfig",
    "Datastore",
    "Entity",
    "EvalConfig",
    "EvalReport",
    "LexicalHeuristicBackend",
    "LinkEngine",
    "McelError",
    "Mention",
    "NGramEncoder",
    "NeighborSet",
    "Ontology",
    "PromptInstance",
    "RemoteEmbedderBackend",
    "RemoteSeq2SeqBackend",
    "ScriptedOracleBackend",
    "SyntheticConfig",
    "VectorIndex",
    "answer",
    "answer_generate_names",
    "assemble_enhanced_prompt",
    "augment_swap",
    "build_datastore",
    "build_index",
    "contrastive_loss",
    "embed",
    "evaluate",
    "ingest_mentions",
    "ingest_ontology",
    "make_benchmark",
    "make_choice_set",
    "parse_answer",
    "render",
    "run_ablations",
    "score",
    "sweep",
    "train",
]
