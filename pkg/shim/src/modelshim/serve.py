"""Run the shim: python3 -m modelshim.serve --checkpoint ckpt.pt --port 8100"""

from __future__ import annotations

import argparse

import uvicorn

from .service import ShimConfig, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="serve /embed and /generate")
    parser.add_argument("--checkpoint", default=None, help="matcher checkpoint path")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8100)
    parser.add_argument("--max-prompt-chars", type=int, default=4096)
    args = parser.parse_args(argv)
    config = ShimConfig(
        checkpoint=args.checkpoint,
        port=args.port,
        max_prompt_chars=args.max_prompt_chars,
    )
    uvicorn.run(create_app(config), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
