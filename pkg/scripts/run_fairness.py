"""Train the equal-opportunity classifier on biased synthetic data, shrink it, and print the report.

    python3 scripts/run_fairness.py --out runs/fairness [--seed 0] [--config cfg.json]
"""

import argparse
import json
from pathlib import Path

from constrained_nn.cli import cmd_evaluate, cmd_shrink, cmd_train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/fairness")
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    out = Path(args.out)
    summary = cmd_train(args.config, out, args.seed, plots=True)
    shrunk = cmd_shrink(out, config_path=args.config)
    rows = cmd_evaluate(out, config_path=args.config, plots=True)
    print(json.dumps(summary, indent=2, default=str))
    print(f"shrink: nnz={shrunk['nnz']} objective {shrunk['objective_before']:.4f} -> {shrunk['objective_after']:.4f}")
    print(f"{'split':6} {'classifier':22} {'mode':13} {'acc':>7} {'rec_A':>7} {'rec_Ac':>7} {'gap':>7}")
    for r in rows:
        print(f"{r['split']:6} {r['classifier']:22} {r['mode']:13} {r['accuracy']:7.4f} "
              f"{r['recall_A']:7.4f} {r['recall_Ac']:7.4f} {r['recall_gap']:7.4f}")


if __name__ == "__main__":
    main()
