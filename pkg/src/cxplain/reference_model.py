"""Reference external model for the stdio bridge.

Serves ``y = x[:, 0]`` by default, or ``sigmoid(w . x + b)`` with
``--sigmoid W1,W2,... B``. ``--hang`` never answers predict requests and
``--garbage`` answers with malformed JSON; both exist to test bridge errors.

    python -m cxplain.reference_model
"""

import argparse
import json
import math
import sys


def _predict(args, rows):
    if args.sigmoid:
        w = [float(v) for v in args.sigmoid[0].split(",")]
        b = float(args.sigmoid[1])
        out = []
        for r in rows:
            z = sum(wi * xi for wi, xi in zip(w, r)) + b
            out.append([1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))])
        return out
    return [[float(r[0])] for r in rows]


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--sigmoid", nargs=2, metavar=("W", "B"))
    ap.add_argument("--hang", action="store_true")
    ap.add_argument("--garbage", action="store_true")
    args = ap.parse_args(argv)
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("op") == "hello":
            reply = {"k": 1, "name": "sigmoid_linear" if args.sigmoid else "echo_first_feature"}
        elif msg.get("op") == "predict":
            if args.hang:
                continue
            if args.garbage:
                sys.stdout.write("{not json\n")
                sys.stdout.flush()
                continue
            reply = {"id": msg["id"], "y": _predict(args, msg["x"])}
        else:
            reply = {"error": f"unknown op {msg.get('op')!r}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
