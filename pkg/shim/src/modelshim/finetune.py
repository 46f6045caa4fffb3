"""Fine-tune the generator on the engine's prompt/symbol JSONL export.

    python3 -m modelshim.finetune --train train.jsonl --out checkpoint.pt \
        --epochs 8 [--dev dev.jsonl] [--resume]

Each JSONL row carries {"prompt": ..., "symbol": ...}. The objective is the
likelihood of the one-token answer sequence under teacher forcing
(cross-entropy on the gold symbol), with light label smoothing. Per-epoch
mean loss is logged; with --resume the optimizer picks up from the saved
weights, so the loss continues from the prior run's region instead of
restarting from scratch.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import torch
import torch.nn.functional as F

from .model import CharVocab, ModelConfig, OptionMatcher, load_checkpoint, save_checkpoint
from .template import PromptFormatError, parse_prompt


def load_rows(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                if not isinstance(row["prompt"], str) or not isinstance(row["symbol"], str):
                    raise TypeError("prompt and symbol must be strings")
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise SystemExit(f"{path}:{lineno}: malformed row: {exc}")
            rows.append(row)
    if not rows:
        raise SystemExit(f"{path}: no training rows")
    return rows


def prepare(rows: list[dict], vocab: CharVocab) -> list[tuple[list[int], list[list[int]], int]]:
    data = []
    for row in rows:
        try:
            block = parse_prompt(row["prompt"])[-1]
        except PromptFormatError as exc:
            raise SystemExit(f"unparseable prompt: {exc}")
        target = next(
            (i for i, (sym, _) in enumerate(block.options) if sym == row["symbol"]), None
        )
        if target is None:
            raise SystemExit(f"gold symbol {row['symbol']!r} not among the options")
        data.append(
            (
                vocab.encode_segment(block.mention),
                [vocab.encode_segment(name) for _, name in block.options],
                target,
            )
        )
    return data


def batches(data, batch_size, generator):
    order = torch.randperm(len(data), generator=generator).tolist()
    for start in range(0, len(order), batch_size):
        yield [data[i] for i in order[start : start + batch_size]]


def collate(items):
    width = max(len(m) for m, _, _ in items)
    n_options = max(len(o) for _, o, _ in items)
    mention = torch.zeros(len(items), width, dtype=torch.long)
    options = torch.zeros(len(items), n_options, width, dtype=torch.long)
    mask = torch.zeros(len(items), n_options, dtype=torch.bool)
    target = torch.zeros(len(items), dtype=torch.long)
    for row, (m_ids, option_ids, t) in enumerate(items):
        mention[row, : len(m_ids)] = torch.tensor(m_ids)
        for col, ids in enumerate(option_ids):
            options[row, col, : len(ids)] = torch.tensor(ids)
            mask[row, col] = True
        target[row] = t
    return mention, options, mask, target


def symbol_accuracy(model: OptionMatcher, rows: list[dict]) -> float:
    hit = 0
    for row in rows:
        block = parse_prompt(row["prompt"])[-1]
        symbol, _, _ = model.answer(row["prompt"], [s for s, _ in block.options])
        hit += symbol == row["symbol"]
    return hit / len(rows)


def finetune(
    train_path: str | Path,
    out_path: str | Path,
    epochs: int = 8,
    lr: float = 2e-3,
    batch_size: int = 128,
    seed: int = 13,
    resume: bool = False,
    dev_path: str | Path | None = None,
    log=print,
) -> tuple[OptionMatcher, list[float]]:
    torch.manual_seed(seed)
    torch.set_num_threads(max(1, torch.get_num_threads()))
    rows = load_rows(train_path)

    epochs_done = 0
    prior_losses: list[float] = []
    if resume and Path(out_path).exists():
        model, epochs_done, prior_losses = load_checkpoint(out_path)
        log(f"resuming from {out_path} after {epochs_done} epochs")
    else:
        vocab = CharVocab.from_corpus([r["prompt"] for r in rows])
        model = OptionMatcher(vocab, ModelConfig())
    data = prepare(rows, model.vocab)

    dev_rows = load_rows(dev_path) if dev_path else None
    optimizer = torch.optim.Adam(model.parameters(), lr=lr, weight_decay=1e-5)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=14, gamma=0.3)
    generator = torch.Generator().manual_seed(seed + epochs_done)

    losses = list(prior_losses)
    for epoch in range(epochs):
        started = time.time()
        model.train()
        total = 0.0
        steps = 0
        for batch in batches(data, batch_size, generator):
            mention, options, mask, target = collate(batch)
            loss = F.cross_entropy(
                model(mention, options, mask), target, label_smoothing=0.05
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item()
            steps += 1
        scheduler.step()
        mean_loss = total / steps
        losses.append(mean_loss)
        line = (
            f"epoch {epochs_done + epoch + 1:2d} loss {mean_loss:.4f} "
            f"({time.time() - started:.0f}s)"
        )
        if dev_rows:
            line += f" dev_symbol_acc {symbol_accuracy(model, dev_rows):.4f}"
        log(line)
    save_checkpoint(model, out_path, epochs_done + epochs, losses)
    log(f"saved checkpoint to {out_path}")
    return model, losses


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="fine-tune the answer generator")
    parser.add_argument("--train", required=True, help="prompt/symbol JSONL")
    parser.add_argument("--out", required=True, help="checkpoint path")
    parser.add_argument("--epochs", type=int, default=8)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--seed", type=int, default=13)
    parser.add_argument("--resume", action="store_true")
    parser.add_argument("--dev", default=None, help="dev JSONL for per-epoch accuracy")
    args = parser.parse_args(argv)
    finetune(
        args.train,
        args.out,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        resume=args.resume,
        dev_path=args.dev,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
