"""MSE, bias^2 and variance of FBA as a function of p on synthetic bursts.

    python scripts/p_sweep.py --trials 100 -o p_sweep.csv
"""
import argparse
import time

from fba import shake


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-o", "--output", default="p_sweep.csv")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--M", type=int, default=16)
    ap.add_argument("--noise", type=float, default=0.04)
    ap.add_argument("--texp", type=float, default=1 / 3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = shake.StudyConfig(M=args.M, s=args.noise, t_exp=args.texp, trials=args.trials, seed=args.seed)
    t0 = time.perf_counter()
    res = shake.run_study(cfg, shake.default_ground_truth(args.size))
    shake.results_to_csv([res], args.output)
    print(f"{args.trials} trials in {time.perf_counter() - t0:.1f} s -> {args.output}")
    print(f"argmin p = {res.argmin_p:g}")
    print(" p      mse        bias2      variance")
    for p, m, b, v in zip(res.ps, res.mse, res.bias2, res.variance):
        if p in (0, 1, 2, 3, 5, 8, 11, 15, 20, 30, 40, 50):
            print(f"{p:3g}  {m:.4e}  {b:.4e}  {v:.4e}")


if __name__ == "__main__":
    main()
