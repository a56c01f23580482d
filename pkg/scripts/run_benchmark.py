"""Run the full pipeline for one config and print the headline numbers.

    python scripts/run_benchmark.py                       # digit task (falls back to patch images)
    python scripts/run_benchmark.py --config scripts/configs/quick.json --threads 2
    python scripts/run_benchmark.py --set evaluation.run_uncertainty=false
"""

import argparse
import json
import sys
from pathlib import Path

from cxplain.cli import main as cli_main

HERE = Path(__file__).resolve().parent


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(HERE / "configs" / "digits.json"))
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    common = ["--config", args.config, "--threads", str(args.threads)]
    for s in args.set:
        common += ["--set", s]
    for cmd in ("targets", "train", "ensemble", "benchmark"):
        code = cli_main([cmd, *common])
        if code:
            print(f"{cmd} failed with exit code {code}", file=sys.stderr)
            return code

    cfg = json.loads(Path(args.config).read_text())
    overrides = dict(s.split("=", 1) for s in args.set)
    run = Path(json.loads(overrides["output_dir"]) if "output_dir" in overrides else cfg.get("output_dir", "runs/default"))
    summary = json.loads((run / "benchmark_summary.json").read_text())
    print(f"results in {run}")
    print(f"dataset: {summary['dataset']['name']}  test accuracy: {summary['target_model'].get('test_accuracy')}")
    for name, stats in summary.get("delta_log_odds", {}).items():
        print(f"  dlogodds {name:13s} median {stats['median']:8.3f}  IQR [{stats['q1']:.3f}, {stats['q3']:.3f}]")
    for pair, r in summary.get("mww", {}).items():
        print(f"  MWW {pair:28s} p = {r['p_value']:.3g}")
    if "uncertainty" in summary:
        u = summary["uncertainty"]
        for M, z in u["mean_fisher_z"].items():
            print(f"  mean Fisher z  M={M:3s} {z:7.3f}")
        print(f"  mean Fisher z  random {u['random_mean_fisher_z']:7.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
