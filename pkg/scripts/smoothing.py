"""Sensitivity of FBA to the width of the magnitude smoothing.

    python scripts/smoothing.py --scales 0,0.5,1,2,3,6 -o smoothing.csv
"""
import argparse

import numpy as np

from fba import shake


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-o", "--output", default="smoothing.csv")
    ap.add_argument("--scales", default="0,0.5,1,2,3,6")
    ap.add_argument("--p", default="11", help="comma-separated p values")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    scales = [float(s) for s in args.scales.split(",")]
    ps = tuple(float(p) for p in args.p.split(","))
    cfg = shake.StudyConfig(trials=args.trials, seed=args.seed, ps=ps)
    results = shake.run_smoothing_study(cfg, shake.default_ground_truth(args.size), scales)
    shake.results_to_csv(results, args.output)
    for sc, r in zip(scales, results):
        print(f"scale {sc:g}: " + ", ".join(f"p={p:g} RMSE {np.sqrt(m):.5f}" for p, m in zip(r.ps, r.mse)))


if __name__ == "__main__":
    main()
