"""Single-threaded stdio request loop.

One JSON object per line on stdin, one response per request on stdout, in
order.  Malformed or unserveable requests get an ``{"id", "error"}`` response
and the process stays alive; the loop ends at EOF.
"""
from __future__ import annotations

import argparse
import json
import sys

from .model import LinearOracleModel, WeightFileError


def serve(model: LinearOracleModel, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for raw in stdin:
        raw = raw.strip()
        if not raw:
            continue
        request_id = None
        try:
            request = json.loads(raw)
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
            request_id = request.get("id")
            op = request.get("op")
            if op == "info":
                body = model.info()
            elif op == "predict":
                body = model.predict(request.get("payload") or {})
            elif op == "gradient":
                body = model.gradient(request.get("payload") or {}, request.get("target"))
            else:
                raise ValueError(f"unknown op {op!r}")
            response = {"id": request_id, **body}
        except Exception as exc:  # keep serving after any bad request
            response = {"id": request_id, "error": str(exc)}
        stdout.write(json.dumps(response, sort_keys=True, separators=(",", ":")) + "\n")
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="linear-oracle",
        description="Serve a linear-softmax model over the stdio JSON oracle protocol.",
    )
    parser.add_argument("weights", help="identity-encoder model weight JSON")
    parser.add_argument("--n-tokens", type=int, required=True, help="served text length")
    parser.add_argument("--n-regions", type=int, required=True, help="served region count")
    args = parser.parse_args(argv)
    try:
        model = LinearOracleModel.from_file(args.weights, args.n_tokens, args.n_regions)
    except WeightFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    serve(model)
    return 0


if __name__ == "__main__":
    sys.exit(main())
