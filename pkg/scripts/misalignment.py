"""Optimal p under registration error: kernels shifted by N(0, eps^2) per axis.

    python scripts/misalignment.py --eps 0,1,2,4 -o misalignment.csv
"""
import argparse

from fba import shake


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-o", "--output", default="misalignment.csv")
    ap.add_argument("--eps", default="0,1,2,4", help="comma-separated shift std values (pixels)")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    eps = [float(e) for e in args.eps.split(",")]
    cfg = shake.StudyConfig(trials=args.trials, seed=args.seed)
    results = shake.run_misalignment_study(cfg, shake.default_ground_truth(args.size), eps)
    shake.results_to_csv(results, args.output)
    for e, r in zip(eps, results):
        print(f"eps = {e:g}: argmin p = {r.argmin_p:g}, min MSE {r.mse.min():.4e}, "
              f"MSE at p=0 {r.mse[0]:.4e}")


if __name__ == "__main__":
    main()
