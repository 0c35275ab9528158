"""Corner reprojection error of burst registration on synthetic homographies.

    python scripts/registration_accuracy.py --trials 100 --size 512
"""
import argparse
import time

import numpy as np

from fba import shake
from fba.image import PlanarImage
from fba.registration import (Homography, RegistrationError, RegistrationParams, corner_error,
                              fit_homography, register_burst, warp_image)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--perturb", type=float, default=0.05, help="max corner displacement / size")
    ap.add_argument("--noise", type=float, default=0.01)
    ap.add_argument("--no-refine", action="store_true", help="features only, skip photometric refinement")
    ap.add_argument("--threshold", type=float, default=0.5)
    args = ap.parse_args()

    n = args.size
    gt = shake.default_ground_truth(n)
    corners = np.array([[0, 0], [n - 1, 0], [0, n - 1], [n - 1, n - 1]], float)
    params = RegistrationParams(photometric_refine=not args.no_refine)
    errs = []
    t0 = time.perf_counter()
    for trial in range(args.trials):
        rng = np.random.default_rng(1000 + trial)
        H = Homography(fit_homography(corners, corners + rng.uniform(-args.perturb, args.perturb, (4, 2)) * n))
        ref = PlanarImage(gt.data + args.noise * rng.standard_normal(gt.data.shape))
        moved = PlanarImage(warp_image(gt, H)[0].data + args.noise * rng.standard_normal(gt.data.shape))
        try:
            out = register_burst([ref, moved], params)
            errs.append(corner_error(out.homographies[1], H.inverse(), (n, n)))
        except RegistrationError:
            errs.append(np.inf)
    errs = np.array(errs)
    print(f"{args.trials} trials in {time.perf_counter() - t0:.1f} s")
    print(f"under {args.threshold} px: {np.sum(errs < args.threshold)}/{args.trials}")
    print(f"median {np.median(errs):.4f} px, 90th percentile {np.percentile(errs, 90):.4f} px, "
          f"worst {errs.max():.4f} px")


if __name__ == "__main__":
    main()
