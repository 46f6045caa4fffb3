from __future__ import annotations

import json
from pathlib import Path

import pytest

from modelshim.finetune import finetune

REPO = Path(__file__).resolve().parents[2]
CONTRACTS = REPO / "contracts"

TOY_ROWS = [
    {"prompt": "mention: waterfall options: A. waterfall B. sunlight answer:", "symbol": "A"},
    {"prompt": "mention: sunlite options: A. waterfall B. sunlight answer:", "symbol": "B"},
    {"prompt": "mention: sunligt options: A. sunlight B. riverbed answer:", "symbol": "A"},
    {"prompt": "mention: riverbd options: A. waterfall B. riverbed answer:", "symbol": "B"},
    {"prompt": "mention: watrfall options: A. riverbed B. waterfall answer:", "symbol": "B"},
    {"prompt": "mention: river bed options: A. riverbed B. sunlight answer:", "symbol": "A"},
]


@pytest.fixture(scope="session")
def toy_jsonl(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("toy") / "toy.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in TOY_ROWS) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def toy_model(toy_jsonl, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "toy.pt"
    model, losses = finetune(
        toy_jsonl, out, epochs=30, lr=5e-3, batch_size=6, seed=3, log=lambda _: None
    )
    return model, out, losses
