"""Width scaling of the linearization error and of the output at initialization.

    python3 scripts/linearization_scaling.py --out runs/linearization [--replicates 2000]
"""

import argparse
import json
from pathlib import Path

from constrained_nn.cli import cmd_verify_linearization


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/linearization")
    ap.add_argument("--replicates", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "linearization_config.json"
    cfg.write_text(json.dumps({"replicates": args.replicates, "seed": args.seed}))
    verdict = cmd_verify_linearization(cfg, out, plots=True)
    print(json.dumps(verdict["fits"], indent=2))
    for name, check in verdict["checks"].items():
        print(f"{name:28} {'PASS' if check['pass'] else 'FAIL'}")


if __name__ == "__main__":
    main()
