"""Feasibility of the averaged rates as the multiplier bound kappa grows.

    python3 scripts/kappa_sweep.py --out runs/kappa [--kappas 0.5 1 2 4] [--seeds 0 1 2] [--T 20000]
"""

import argparse
import json
from pathlib import Path

from constrained_nn.cli import cmd_verify_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/kappa")
    ap.add_argument("--kappas", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--T", type=int, default=20000)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from constrained_nn.config import default_train_dict
    train = default_train_dict()
    train["optimizer"]["T"] = args.T
    cfg_path = out / "bound_config.json"
    cfg_path.write_text(json.dumps({"train": train, "kappas": args.kappas, "seeds": args.seeds}, indent=2))
    verdict = cmd_verify_bound(cfg_path, out, plots=True)
    for row in verdict["summary"]:
        print(f"kappa={row['kappa']:<5g} mean max_j g_j = {row['mean_max_g']:.5f} (s.e. {row['se']:.5f})")
    print("PASS" if verdict["pass"] else "FAIL")


if __name__ == "__main__":
    main()
