"""Equivalent PSF of the aggregation for simulated tremor kernel sets.

Reports several compactness measures per p, since they do not all agree:
the energy fraction in the central 3x3 window, the signed mass in that
window, and the peak value.

    python scripts/psf_concentration.py --sets 100 --save-example psf_example.npz
"""
import argparse

import numpy as np

from fba import core, shake


def measures(k):
    c = k.shape[0] // 2
    w = k[c - 1:c + 2, c - 1:c + 2]
    return core.central_concentration(k), w.sum() / k.sum(), k.max(), np.abs(k).sum()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sets", type=int, default=100)
    ap.add_argument("--M", type=int, default=14)
    ap.add_argument("--texp", type=float, default=1 / 3)
    ap.add_argument("--p", default="0,3,11,25")
    ap.add_argument("--ks", type=float, default=None, help="optional magnitude smoothing divisor")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save-example", default=None, help="write the first set's PSFs to this .npz")
    args = ap.parse_args()

    ps = [float(p) for p in args.p.split(",")]
    cfg = shake.StudyConfig(M=args.M, t_exp=args.texp, trials=args.sets, seed=args.seed)
    table = np.zeros((args.sets, len(ps), 4))
    example = {}
    for t in range(args.sets):
        ks = [k.grid for k in shake.trial_kernels(cfg, t)]
        for j, p in enumerate(ps):
            psf = core.equivalent_psf(ks, p=p, ks_equivalent=args.ks).kernel
            table[t, j] = measures(psf)
            if t == 0:
                example[f"p{p:g}"] = psf
    if args.save_example:
        np.savez(args.save_example, **example)
    print(f"{args.sets} sets of {args.M} kernels, medians:")
    print("   p   3x3 energy   3x3 mass   peak     L1")
    for j, p in enumerate(ps):
        e, m, pk, l1 = np.median(table[:, j], axis=0)
        print(f"{p:4g}   {e:.4f}      {m:.4f}     {pk:.4f}   {l1:.3f}")


if __name__ == "__main__":
    main()
