"""Serve the scoring service from the command line."""

from __future__ import annotations

import argparse
from pathlib import Path


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description="Few-shot template scoring service")
    parser.add_argument("--manifest-dir", type=Path, required=True,
                        help="Directory containing <dataset>/manifest.json entries.")
    parser.add_argument("--model", default="toy",
                        help="'toy' or 'hf:<model-or-path>' (default: toy).")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    args = parser.parse_args(argv)

    import uvicorn

    from .app import create_app

    app = create_app(args.manifest_dir, model_id=args.model)
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
