"""The generator model behind /generate: a character-level option matcher.

Desk-scale replacement for a pretrained seq2seq backbone: a shared
character-convolution encoder turns the mention and each option name into
unit vectors, an interaction MLP plus a per-position bias scores every
option, and the output distribution lives over the answer-symbol vocabulary.
Training maximizes the likelihood of the single-token answer sequence with
teacher forcing; decoding restricted to the request's allowed symbols gives
the renormalized score map the wire contract requires.

The same encoder serves /embed (the fixed-size text vector).
"""

from __future__ import annotations

import string
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .template import Block, PromptFormatError, parse_prompt

SYMBOLS = string.ascii_uppercase
PAD = 0
MAX_SEGMENT = 40


@dataclass
class ModelConfig:
    chars: list[str] = field(default_factory=list)
    dim: int = 128
    hidden: int = 64
    dropout: float = 0.15
    max_options: int = 26


class CharVocab:
    """Deterministic character inventory; unknown characters map to PAD."""

    def __init__(self, chars: Sequence[str]) -> None:
        self.chars = sorted(set(chars))
        self.index = {c: i + 1 for i, c in enumerate(self.chars)}

    def __len__(self) -> int:
        return len(self.chars) + 1

    def encode_segment(self, text: str) -> list[int]:
        """Fixed-width token ids with space sentinels; PAD-filled on the right."""
        clipped = f" {text} "[:MAX_SEGMENT]
        ids = [self.index.get(c, PAD) for c in clipped]
        return ids + [PAD] * (MAX_SEGMENT - len(ids))

    @classmethod
    def from_corpus(cls, texts: Sequence[str]) -> "CharVocab":
        return cls({c for text in texts for c in text})


class SegmentEncoder(nn.Module):
    """Char embedding -> two residual convolutions -> pooled unit vector."""

    def __init__(self, vocab_size: int, dim: int) -> None:
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, dim, padding_idx=PAD)
        self.conv1 = nn.Conv1d(dim, dim, kernel_size=5, padding=2)
        self.conv2 = nn.Conv1d(dim, dim, kernel_size=5, padding=2)
        self.project = nn.Linear(2 * dim, dim)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        mask = (token_ids != PAD).float().unsqueeze(1)
        hidden = self.embedding(token_ids).transpose(1, 2)
        hidden = torch.relu(self.conv1(hidden)) * mask + hidden
        hidden = torch.relu(self.conv2(hidden)) * mask + hidden
        mean = (hidden * mask).sum(-1) / mask.sum(-1).clamp(min=1.0)
        peak = (hidden + (mask - 1.0) * 1e4).amax(-1)
        vector = self.project(torch.cat([mean, peak], dim=-1))
        return F.normalize(vector, dim=-1)


class OptionMatcher(nn.Module):
    def __init__(self, vocab: CharVocab, cfg: Optional[ModelConfig] = None) -> None:
        super().__init__()
        cfg = cfg or ModelConfig()
        cfg.chars = vocab.chars
        self.cfg = cfg
        self.vocab = vocab
        self.encoder = SegmentEncoder(len(vocab), cfg.dim)
        self.score = nn.Sequential(
            nn.Linear(2 * cfg.dim + 1, cfg.hidden),
            nn.ReLU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.hidden, 1),
        )
        self.position_bias = nn.Parameter(torch.zeros(cfg.max_options))

    def forward(
        self,
        mention_ids: torch.Tensor,  # (B, L)
        option_ids: torch.Tensor,  # (B, O, L)
        option_mask: torch.Tensor,  # (B, O) bool
    ) -> torch.Tensor:
        batch, n_options, width = option_ids.shape
        mention_vec = self.encoder(mention_ids)
        option_vec = self.encoder(option_ids.reshape(batch * n_options, width))
        option_vec = option_vec.reshape(batch, n_options, -1)
        mention_exp = mention_vec.unsqueeze(1).expand_as(option_vec)
        cosine = (mention_exp * option_vec).sum(-1, keepdim=True)
        features = torch.cat(
            [mention_exp * option_vec, (mention_exp - option_vec).abs(), cosine], dim=-1
        )
        logits = self.score(features).squeeze(-1) + self.position_bias[:n_options]
        return logits.masked_fill(~option_mask, -1e9)

    # --- inference over wire-format prompts ---

    def _final_block(self, prompt: str) -> Optional[Block]:
        try:
            return parse_prompt(prompt)[-1]
        except PromptFormatError:
            return None

    @torch.no_grad()
    def answer(
        self, prompt: str, allowed_symbols: Sequence[str]
    ) -> tuple[str, dict[str, float], str]:
        """Single-token constrained decode: (symbol, renormalized scores, raw)."""
        self.eval()
        block = self._final_block(prompt)
        full_logits = torch.full((len(SYMBOLS),), -1e9)
        if block is not None and block.options:
            mention = torch.tensor([self.vocab.encode_segment(block.mention)])
            options = torch.tensor(
                [[self.vocab.encode_segment(name) for _, name in block.options]]
            )
            mask = torch.ones(1, len(block.options), dtype=torch.bool)
            logits = self.forward(mention, options, mask)[0]
            for (symbol, _), value in zip(block.options, logits):
                full_logits[SYMBOLS.index(symbol)] = value
        raw_id = int(full_logits.argmax())
        raw = SYMBOLS[raw_id] if full_logits[raw_id] > -1e9 else ""
        allowed_ids = [SYMBOLS.index(s) for s in allowed_symbols]
        restricted = torch.softmax(full_logits[allowed_ids], dim=0)
        scores = {s: float(p) for s, p in zip(allowed_symbols, restricted)}
        top = restricted.max()
        best = next(i for i in range(len(allowed_symbols)) if restricted[i] == top)
        return allowed_symbols[best], scores, raw

    @torch.no_grad()
    def encode_texts(self, texts: Sequence[str]) -> list[list[float]]:
        self.eval()
        batch = torch.tensor([self.vocab.encode_segment(t) for t in texts])
        return self.encoder(batch).tolist()


def save_checkpoint(
    model: OptionMatcher, path: str | Path, epochs_done: int, losses: list[float]
) -> None:
    torch.save(
        {
            "format": "modelshim-matcher-v1",
            "config": asdict(model.cfg),
            "state": model.state_dict(),
            "epochs_done": epochs_done,
            "losses": losses,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[OptionMatcher, int, list[float]]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != "modelshim-matcher-v1":
        raise ValueError(f"{path} is not a matcher checkpoint")
    cfg = ModelConfig(**payload["config"])
    model = OptionMatcher(CharVocab(cfg.chars), cfg)
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload.get("epochs_done", 0), payload.get("losses", [])
