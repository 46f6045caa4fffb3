"""HTTP service exposing /embed and /generate over the fine-tuned model.

The wire format is pinned by the shared schema files in contracts/ at the
repository root; a recorded golden-pair suite runs against both this service
and the engine's client. Inference is request-serialized (one small CPU
model), and max_new_tokens is clamped to 1: the generator's whole job is the
single answer-symbol token.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .model import SYMBOLS, OptionMatcher, load_checkpoint
from .template import PromptFormatError, truncate_prompt

logger = logging.getLogger("modelshim")


@dataclass
class ShimConfig:
    encoder_model: str = "charconv-segment-v1"
    generator_model: str = "charconv-matcher-v1"
    device: str = "cpu"
    max_prompt_chars: int = 4096
    port: int = 8100
    checkpoint: Optional[str] = None


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": message})


def create_app(config: Optional[ShimConfig] = None, model: Optional[OptionMatcher] = None) -> FastAPI:
    config = config or ShimConfig()
    if model is None and config.checkpoint:
        model, _, _ = load_checkpoint(config.checkpoint)
    app = FastAPI(title="model-shim", version="0.1.0")
    lock = threading.Lock()
    app.state.config = config
    app.state.model = model

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": app.state.model is not None}

    @app.post("/embed")
    async def embed(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _bad_request("body is not valid JSON")
        texts = body.get("texts") if isinstance(body, dict) else None
        if (
            not isinstance(texts, list)
            or not texts
            or any(not isinstance(t, str) or not t for t in texts)
        ):
            return _bad_request("texts must be a non-empty list of non-empty strings")
        if app.state.model is None:
            return JSONResponse(status_code=503, content={"detail": "model not loaded"})
        with lock:
            vectors = app.state.model.encode_texts(texts)
        return {"vectors": vectors}

    @app.post("/generate")
    async def generate(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _bad_request("body is not valid JSON")
        if not isinstance(body, dict):
            return _bad_request("body must be a JSON object")
        prompt = body.get("prompt")
        symbols = body.get("allowed_symbols")
        max_new_tokens = body.get("max_new_tokens", 1)
        if not isinstance(prompt, str) or not prompt:
            return _bad_request("prompt must be a non-empty string")
        if (
            not isinstance(symbols, list)
            or not symbols
            or any(not isinstance(s, str) or len(s) != 1 or s not in SYMBOLS for s in symbols)
        ):
            return _bad_request("allowed_symbols must be a non-empty list of A-Z letters")
        if not isinstance(max_new_tokens, int) or max_new_tokens < 1:
            return _bad_request("max_new_tokens must be a positive integer")
        # the contract is a single answer token, whatever was requested
        if app.state.model is None:
            return JSONResponse(status_code=503, content={"detail": "model not loaded"})

        effective = prompt
        if len(prompt) > config.max_prompt_chars:
            try:
                truncated = truncate_prompt(prompt, config.max_prompt_chars)
            except PromptFormatError:
                truncated = None
            if truncated is None:
                return JSONResponse(
                    status_code=413,
                    content={"detail": "prompt exceeds the maximum length even after truncation"},
                )
            logger.warning(
                "truncated prompt from %d to %d chars (dropped leading blocks)",
                len(prompt), len(truncated),
            )
            effective = truncated

        with lock:
            symbol, scores, raw = app.state.model.answer(effective, symbols)
        return {"symbol": symbol, "scores": scores, "raw": raw}

    return app
