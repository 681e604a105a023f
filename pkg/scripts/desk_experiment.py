"""Compare the training regimes on synthetic URLs at desk scale.

    python scripts/desk_experiment.py --epochs 3
"""

import argparse
import json

from bytexformer.experiments import run_desk_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-train", type=int, default=10_000)
    ap.add_argument("--n-test", type=int, default=2_000)
    ap.add_argument("--frac", type=float, default=0.2)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    res = run_desk_experiment(args.n_train, args.n_test, args.frac, epochs=args.epochs, seed=args.seed)
    print(json.dumps({"test_auc": res.test_auc, "seconds": res.seconds,
                      "frozen_unchanged": res.frozen_unchanged}, indent=2))


if __name__ == "__main__":
    main()
