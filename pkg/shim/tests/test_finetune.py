from __future__ import annotations

import math

import pytest
import torch

from modelshim.finetune import finetune, load_rows, symbol_accuracy
from modelshim.model import CharVocab, load_checkpoint


def test_toy_finetune_saves_loadable_checkpoint(toy_model):
    model, path, losses = toy_model
    assert path.exists()
    assert all(math.isfinite(loss) for loss in losses)
    loaded, epochs_done, saved_losses = load_checkpoint(path)
    assert epochs_done == 30
    assert saved_losses == losses
    # identical weights after the round trip
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert torch.equal(a, b)


def test_toy_finetune_learns_the_toy_set(toy_model, toy_jsonl):
    model, _, losses = toy_model
    assert losses[-1] < losses[0]
    rows = load_rows(toy_jsonl)
    assert symbol_accuracy(model, rows) == 1.0


def test_resume_continues_from_prior_loss_region(toy_jsonl, tmp_path):
    out = tmp_path / "resume.pt"
    _, first = finetune(toy_jsonl, out, epochs=12, lr=5e-3, batch_size=6, seed=3,
                        log=lambda _: None)
    _, combined = finetune(toy_jsonl, out, epochs=3, lr=5e-4, batch_size=6, seed=3,
                           resume=True, log=lambda _: None)
    resumed = combined[len(first):]
    # no reset to scratch: resumed losses stay near the converged region,
    # far below the from-scratch starting loss
    assert max(resumed) < first[0] * 0.7
    _, epochs_done, _ = load_checkpoint(out)
    assert epochs_done == 15


def test_three_row_file_one_epoch(tmp_path):
    import json

    rows = [
        {"prompt": "mention: aa options: A. aa B. bb answer:", "symbol": "A"},
        {"prompt": "mention: bb options: A. aa B. bb answer:", "symbol": "B"},
        {"prompt": "mention: ab options: A. aa B. cc answer:", "symbol": "A"},
    ]
    path = tmp_path / "three.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    out = tmp_path / "three.pt"
    _, losses = finetune(path, out, epochs=1, log=lambda _: None)
    assert out.exists()
    assert len(losses) == 1 and math.isfinite(losses[0])


def test_malformed_rows_abort(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"prompt": "mention: m options: A. x answer:"}\n', encoding="utf-8")
    with pytest.raises(SystemExit):
        finetune(bad, tmp_path / "out.pt", epochs=1, log=lambda _: None)


def test_answer_contract_on_trained_model(toy_model):
    model, _, _ = toy_model
    prompt = "mention: watterfall options: A. sunlight B. waterfall C. riverbed answer:"
    symbol, scores, raw = model.answer(prompt, ["A", "B", "C"])
    assert symbol == "B"
    assert set(scores) == {"A", "B", "C"}
    assert sum(scores.values()) == pytest.approx(1.0, abs=1e-6)
    assert raw in ("A", "B", "C")


def test_answer_covers_symbols_missing_from_prompt(toy_model):
    model, _, _ = toy_model
    prompt = "mention: sunlite options: A. waterfall B. sunlight answer:"
    symbol, scores, _ = model.answer(prompt, ["A", "B", "C", "D"])
    assert set(scores) == {"A", "B", "C", "D"}
    assert sum(scores.values()) == pytest.approx(1.0, abs=1e-6)
    assert symbol == "B"
    assert scores["C"] < 1e-6 and scores["D"] < 1e-6


def test_deterministic_inference(toy_model):
    model, _, _ = toy_model
    prompt = "mention: river bed options: A. riverbed B. sunlight answer:"
    first = model.answer(prompt, ["A", "B"])
    second = model.answer(prompt, ["A", "B"])
    assert first == second


def test_vocab_handles_unknown_chars(toy_model):
    model, _, _ = toy_model
    symbol, scores, _ = model.answer(
        "mention: ünseen chärs options: A. waterfall B. sunlight answer:",
        ["A", "B"],
    )
    assert symbol in ("A", "B")
    assert sum(scores.values()) == pytest.approx(1.0, abs=1e-6)


def test_char_vocab_is_deterministic():
    a = CharVocab.from_corpus(["zebra", "apple"])
    b = CharVocab.from_corpus(["apple", "zebra"])
    assert a.chars == b.chars
    assert a.encode_segment("ape") == b.encode_segment("ape")
