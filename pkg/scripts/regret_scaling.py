"""Average regret of online projected gradient steps with and without a constant gradient bias.

    python3 scripts/regret_scaling.py --out runs/regret [--seeds 10] [--bias 0.1]
"""

import argparse
import json
from pathlib import Path

from constrained_nn.cli import cmd_verify_regret


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/regret")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--bias", type=float, default=0.1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "regret_config.json"
    cfg.write_text(json.dumps({"seeds": args.seeds, "bias": args.bias}))
    verdict = cmd_verify_regret(cfg, out, plots=True)
    print(json.dumps(verdict["fit"], indent=2))
    for name, check in verdict["checks"].items():
        print(f"{name:20} {'PASS' if check['pass'] else 'FAIL'}")


if __name__ == "__main__":
    main()
