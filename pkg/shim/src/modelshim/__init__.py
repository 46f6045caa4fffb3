"""model-shim: HTTP boundary serving /embed and /generate for the linking
engine, plus the generator fine-tuning entry point."""

from .model import CharVocab, ModelConfig, OptionMatcher, load_checkpoint, save_checkpoint
from .service import ShimConfig, create_app

__version__ = "0.1.0"

__all__ = [
    "CharVocab",
    "ModelConfig",
    "OptionMatcher",
    "ShimConfig",
    "create_app",
    "load_checkpoint",
    "save_checkpoint",
]
