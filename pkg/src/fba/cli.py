"""Command-line interface.

Subcommands: ``deblur``, ``baseline``, ``simulate``, ``psf`` and
``multi-burst``.  Exit status is 0 on success, 1 when processing fails
(e.g. a frame cannot be registered) and 2 for usage or I/O errors.

Any long option can also be given in a ``key = value`` file passed with
``--config``; options on the command line take precedence.
"""

from __future__ import annotations

import argparse
import csv
import glob
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import fft as sfft

from . import baselines, core, shake
from .image import ImageIOError, PlanarImage, as_planar, read_image, write_image
from .registration import RegistrationError, RegistrationParams, register_burst
from .sharpen import DENOISERS, SharpenConfig, noise_aware_sharpen

log = logging.getLogger("fba")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
IMAGE_EXTS = (".png", ".pfm")


class UsageError(ValueError):
    pass


# ----------------------------------------------------------------- config


@dataclass
class JobConfig:
    subcommand: str
    inputs: list[str]
    output: str
    fba: core.FbaConfig = field(default_factory=core.FbaConfig)
    sharpen: SharpenConfig | None = field(default_factory=SharpenConfig)
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    register: bool = True
    dump_weights: str | None = None
    dump_contributions: str | None = None
    threads: int = 1
    bits: int = 16


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    if not os.path.isfile(path):
        raise ImageIOError(f"{path}: no such config file")
    out = {}
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (t.strip() for t in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions if a.option_strings}
    defaults = {}
    for key, raw in values.items():
        if key in ("config", "help") or key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        act = actions[key]
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            v = _parse_bool(raw)
            defaults[key] = v if isinstance(act, argparse._StoreTrueAction) else not v
        else:
            v = act.type(raw) if act.type else raw
            if act.choices is not None and v not in act.choices:
                raise UsageError(f"config key {key!r}: invalid choice {v!r}")
            defaults[key] = v
    parser.set_defaults(**defaults)


def parse_grid(text: str) -> tuple[float, ...]:
    """``"11"``, ``"0,3,11"`` or ``"start:stop[:step]"`` (stop inclusive)."""
    try:
        if ":" in text:
            parts = [float(t) for t in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1.0
            if step <= 0 or stop < start:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            vals = tuple(float(start + i * step) for i in range(n))
        else:
            vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}") from None
    if not vals or any(not np.isfinite(v) or v < 0 for v in vals):
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}")
    return vals


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


# ----------------------------------------------------------------- parser


def _add_input_output(p: argparse.ArgumentParser, multi: bool = False) -> None:
    if multi:
        p.add_argument("inputs", nargs="+", metavar="BURST_DIR", help="one directory per burst (at least two)")
        p.add_argument("-o", "--output", required=True, help="output directory (one image per burst)")
    else:
        p.add_argument("inputs", nargs="+", metavar="INPUT",
                       help="frame files, glob patterns or a directory of PNG/PFM frames (frame 0 is the reference)")
        p.add_argument("-o", "--output", required=True, help="output image (.png or .pfm)")
    p.add_argument("--bits", type=int, choices=(8, 16), default=16, help="PNG bit depth (default 16)")


def _add_registration(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("registration")
    g.add_argument("--sigma-min", type=float, default=1.8, help="smallest feature scale kept (default 1.8)")
    g.add_argument("--ransac-tol", type=float, default=2.0, help="inlier transfer error in pixels (default 2)")
    g.add_argument("--ransac-iters", type=_positive_int, default=2000, help="RANSAC iterations (default 2000)")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--skip-unregistered", action="store_true", help="drop frames that fail to register")
    g.add_argument("--no-register", action="store_true", help="frames are already aligned")
    g.add_argument("--no-photometric-refine", action="store_true",
                   help="keep the feature-based homography without intensity refinement")


def _add_fba(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("aggregation")
    g.add_argument("--p", type=float, default=11.0, help="weight exponent (default 11)")
    g.add_argument("--ks", type=float, default=50.0, help="smoothing divisor: sigma = min(h, w) / ks (default 50)")
    g.add_argument("--smoothing-scale", type=float, default=1.0, help="multiplier on the smoothing sigma (default 1)")
    g.add_argument("--max-pool", action="store_true", help="use the p -> infinity (maximum) rule")
    g.add_argument("--taper", type=int, nargs="?", const=16, default=0,
                   help="cosine border roll-off width before the FFT (16 px if given without value)")


def _add_sharpen(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("sharpening")
    g.add_argument("--no-sharpen", action="store_true", help="skip the noise-aware sharpening")
    g.add_argument("--rho", type=float, default=2.0, help="Gaussian width of the unsharp mask (default 2)")
    g.add_argument("--delta", type=float, default=0.4, help="fraction of removed noise added back (default 0.4)")
    g.add_argument("--denoiser", choices=DENOISERS, default="nl-means", help="denoiser (default nl-means)")
    g.add_argument("--denoise-strength", type=float, default=0.8, help="denoiser strength (default 0.8)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key = value file with option defaults")
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fba", description="Burst deblurring by Fourier weighted accumulation.")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="COMMAND")

    p = sub.add_parser("deblur", help="register, aggregate and sharpen one burst")
    _add_input_output(p)
    _add_registration(p)
    _add_fba(p)
    _add_sharpen(p)
    g = p.add_argument_group("diagnostics")
    g.add_argument("--dump-weights", metavar="DIR", help="write per-frame weight maps as 16-bit PNG heatmaps")
    g.add_argument("--dump-contributions", metavar="DIR",
                   help="write per-frame contributions (PFM) and their energy shares (CSV)")
    _add_common(p)

    p = sub.add_parser("baseline", help="run a lucky-imaging comparison method")
    _add_input_output(p)
    _add_registration(p)
    g = p.add_argument_group("method")
    g.add_argument("--method", choices=("average", "lfa", "joshi", "freq-pct"), default="average",
                   help="baseline method (default average)")
    g.add_argument("--k", type=_positive_int, default=1, help="lfa: number of frames kept (default 1)")
    g.add_argument("--block", type=_positive_int, default=100, help="lfa: energy block size (default 100)")
    g.add_argument("--lambda", dest="lam", type=float, default=50.0, help="joshi: selectivity (default 50)")
    g.add_argument("--fraction", type=float, default=0.1, help="freq-pct: fraction of frames kept (default 0.1)")
    _add_common(p)

    p = sub.add_parser("simulate", help="Monte-Carlo bias/variance study on synthetic bursts")
    p.add_argument("-o", "--output", required=True, help="CSV file")
    p.add_argument("--study", choices=("p-sweep", "misalignment", "smoothing"), default="p-sweep",
                   help="which sweep to run (default p-sweep)")
    p.add_argument("--p", type=parse_grid, default=tuple(float(i) for i in range(51)),
                   help="p grid: value, comma list or start:stop[:step] (default 0:50)")
    p.add_argument("--M", type=_positive_int, default=16, help="frames per burst (default 16)")
    p.add_argument("--noise", type=float, default=0.04, help="noise std s (default 0.04)")
    p.add_argument("--texp", type=float, default=1 / 3, help="exposure time in seconds (default 1/3)")
    p.add_argument("--trials", type=_positive_int, default=100, help="bursts per grid point (default 100)")
    p.add_argument("--epsilon", type=parse_grid, default=(0.0, 1.0, 2.0, 4.0),
                   help="misalignment levels for --study misalignment (default 0,1,2,4)")
    p.add_argument("--smoothing-scales", type=parse_grid, default=(0.0, 1.0, 3.0, 6.0),
                   help="multipliers for --study smoothing (default 0,1,3,6)")
    p.add_argument("--ks", type=float, default=50.0, help="smoothing divisor (default 50)")
    p.add_argument("--smoothing-scale", type=float, default=1.0, help="smoothing multiplier (default 1)")
    p.add_argument("--size", type=_positive_int, default=128, help="ground-truth side in pixels (default 128)")
    p.add_argument("--ground-truth", metavar="IMAGE", help="ground-truth image instead of the built-in scene")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    _add_common(p)

    p = sub.add_parser("psf", help="equivalent PSF of the aggregation for given kernels")
    p.add_argument("inputs", nargs="*", metavar="KERNEL", help="kernel images (normalized to unit mass)")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--simulate", type=_positive_int, metavar="N", help="use N simulated tremor kernels")
    p.add_argument("--texp", type=float, default=1 / 3, help="exposure for simulated kernels (default 1/3)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--p", type=parse_grid, default=(0.0, 11.0), help="p values (default 0,11)")
    p.add_argument("--grid", type=_positive_int, default=41, help="kernel grid size (default 41)")
    p.add_argument("--max-pool", action="store_true", help="also report the maximum rule")
    _add_common(p)

    p = sub.add_parser("multi-burst", help="deblur several bursts independently (e.g. one per exposure)")
    _add_input_output(p, multi=True)
    p.add_argument("--format", choices=("png", "pfm"), default="png", help="output format (default png)")
    _add_registration(p)
    _add_fba(p)
    _add_sharpen(p)
    _add_common(p)
    return parser


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.subcommand]
        _apply_config(sub, read_config_file(args.config))
        args = parser.parse_args(argv)
    return args


# ----------------------------------------------------------------- inputs


def resolve_inputs(items: Sequence[str]) -> list[str]:
    paths: list[str] = []
    for item in items:
        if os.path.isdir(item):
            found = sorted(os.path.join(item, f) for f in os.listdir(item) if f.lower().endswith(IMAGE_EXTS))
            if not found:
                raise ImageIOError(f"{item}: no PNG or PFM frames in directory")
            paths.extend(found)
        elif glob.has_magic(item):
            found = sorted(glob.glob(item))
            if not found:
                raise ImageIOError(f"{item}: pattern matches no files")
            paths.extend(found)
        else:
            if not os.path.isfile(item):
                raise ImageIOError(f"{item}: no such file")
            paths.append(item)
    if not paths:
        raise UsageError("no input frames")
    return paths


def _check_output(path: str, is_dir: bool = False) -> None:
    target = path if is_dir else (os.path.dirname(os.path.abspath(path)) or ".")
    if is_dir:
        os.makedirs(target, exist_ok=True)
    if not os.path.isdir(target) or not os.access(target, os.W_OK):
        raise ImageIOError(f"{target}: output directory is not writable")


def job_from_args(args: argparse.Namespace, inputs: list[str] | None = None) -> JobConfig:
    try:
        return _job_from_args(args, inputs)
    except (UsageError, ImageIOError):
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _job_from_args(args: argparse.Namespace, inputs: list[str] | None) -> JobConfig:
    fba_cfg = core.FbaConfig(p=args.p, ks=args.ks, smoothing_scale=args.smoothing_scale,
                             max_pool=args.max_pool, taper=args.taper) if hasattr(args, "ks") else core.FbaConfig()
    sharpen = None
    if hasattr(args, "no_sharpen") and not args.no_sharpen:
        sharpen = SharpenConfig(rho=args.rho, delta=args.delta, denoiser=args.denoiser,
                                strength=args.denoise_strength)
    reg = RegistrationParams(sigma_min=args.sigma_min, ransac_tol=args.ransac_tol, ransac_iters=args.ransac_iters,
                             seed=args.seed, skip_unregistered=args.skip_unregistered,
                             photometric_refine=not args.no_photometric_refine)
    return JobConfig(subcommand=args.subcommand, inputs=inputs if inputs is not None else resolve_inputs(args.inputs),
                     output=args.output, fba=fba_cfg, sharpen=sharpen, registration=reg,
                     register=not args.no_register, dump_weights=getattr(args, "dump_weights", None),
                     dump_contributions=getattr(args, "dump_contributions", None),
                     threads=args.threads, bits=args.bits)


def load_aligned(job: JobConfig) -> list[PlanarImage]:
    """Read, register and crop the burst to the common valid rectangle."""
    frames = [read_image(p) for p in job.inputs]
    shape = frames[0].data.shape
    for path, f in zip(job.inputs, frames):
        if f.data.shape != shape:
            raise ImageIOError(f"{path}: dimensions {f.data.shape} differ from {shape}")
    if len(frames) == 1 or not job.register:
        return frames
    reg = register_burst(frames, job.registration, threads=job.threads)
    for i in reg.skipped:
        log.warning("frame %d (%s) skipped: registration failed", i, job.inputs[i])
    r0, c0, r1, c1 = reg.crop
    if r1 - r0 < 1 or c1 - c0 < 1:
        raise RegistrationError("frames share no common valid region")
    log.info("registered %d frames, crop %s", len(reg.frames), reg.crop)
    return reg.cropped()


# --------------------------------------------------------------- commands


def _heatmap(w: np.ndarray) -> PlanarImage:
    # DC in the middle; weights already lie in [0, 1]
    return PlanarImage(np.clip(sfft.fftshift(w), 0.0, 1.0))


def run_deblur(job: JobConfig) -> PlanarImage:
    frames = load_aligned(job)
    out = core.fba(frames, job.fba)
    if job.dump_weights:
        _check_output(job.dump_weights, is_dir=True)
        for i, w in enumerate(core.weight_maps(frames, job.fba)):
            write_image(_heatmap(w), os.path.join(job.dump_weights, f"weight_{i:03d}.png"), bits=16)
    if job.dump_contributions:
        _check_output(job.dump_contributions, is_dir=True)
        contribs, shares = core.frame_contributions(frames, job.fba)
        for i, c in enumerate(contribs):
            write_image(c, os.path.join(job.dump_contributions, f"contribution_{i:03d}.pfm"))
        with open(os.path.join(job.dump_contributions, "shares.csv"), "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(["frame", "share"])
            for i, s in enumerate(shares):
                wr.writerow([i, repr(float(s))])
    if job.sharpen is not None:
        out = noise_aware_sharpen(out, job.sharpen)
    return out


def cmd_deblur(args: argparse.Namespace) -> int:
    job = job_from_args(args)
    _check_output(job.output)
    write_image(run_deblur(job), job.output, bits=job.bits)
    return EXIT_OK


def run_baseline(args: argparse.Namespace, job: JobConfig) -> PlanarImage:
    frames = load_aligned(job)
    if args.method == "average":
        out = baselines.align_and_average(frames)
    elif args.method == "lfa":
        if args.k > len(frames):
            raise UsageError(f"--k {args.k} exceeds the number of frames ({len(frames)})")
        out = baselines.lucky_frame_average(frames, K=args.k, block=args.block)
    elif args.method == "joshi":
        out = baselines.sharpness_selectivity_average(frames, lam=args.lam)
    else:
        out = baselines.frequency_percentile_fusion(frames, top_fraction=args.fraction)
    return out


def cmd_baseline(args: argparse.Namespace) -> int:
    job = job_from_args(args)
    _check_output(job.output)
    write_image(run_baseline(args, job), job.output, bits=job.bits)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    _check_output(args.output)
    if args.trials < 2:
        raise UsageError("--trials must be at least 2")
    if args.ground_truth:
        gt = read_image(args.ground_truth)
    else:
        gt = shake.default_ground_truth(args.size)
    try:
        cfg = shake.StudyConfig(M=args.M, s=args.noise, t_exp=args.texp, ps=args.p, trials=args.trials,
                                seed=args.seed, ks=args.ks, smoothing_scale=args.smoothing_scale)
        cfg.tremor_params
        core.FbaConfig(ks=args.ks, smoothing_scale=args.smoothing_scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.study == "p-sweep":
        results = [shake.run_study(cfg, gt)]
    elif args.study == "misalignment":
        results = shake.run_misalignment_study(cfg, gt, args.epsilon)
    else:
        results = shake.run_smoothing_study(cfg, gt, args.smoothing_scales)
    shake.results_to_csv(results, args.output)
    for r in results:
        log.info("epsilon=%g smoothing=%g argmin p=%g", r.config.epsilon, r.config.smoothing_scale, r.argmin_p)
    return EXIT_OK


def _load_kernel(path: str) -> np.ndarray:
    k = read_image(path).luma()
    if k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise UsageError(f"{path}: kernel dimensions must be odd, got {k.shape}")
    if np.any(k < 0) or k.sum() <= 0:
        raise UsageError(f"{path}: kernel must be nonnegative with positive mass")
    return k / k.sum()


def cmd_psf(args: argparse.Namespace) -> int:
    if args.simulate and args.inputs:
        raise UsageError("give kernel images or --simulate, not both")
    if args.simulate:
        try:
            params = shake.TremorParams(t_exp=args.texp, grid=args.grid + 1 - args.grid % 2)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        kernels = [shake.simulate_kernel(params, shake.stream(args.seed, 0, i, shake.KERNEL_STREAM)).grid
                   for i in range(args.simulate)]
    elif args.inputs:
        kernels = [_load_kernel(p) for p in resolve_inputs(args.inputs)]
    else:
        raise UsageError("no kernels: give kernel images or --simulate N")
    _check_output(args.output, is_dir=True)
    runs = [(f"p{p:g}", p, False) for p in args.p]
    if args.max_pool:
        runs.append(("maxpool", 0.0, True))
    rows = []
    for name, p, mp in runs:
        psf = core.equivalent_psf(kernels, p=p, grid=args.grid, max_pool=mp)
        write_image(PlanarImage(psf.kernel), os.path.join(args.output, f"psf_{name}.pfm"))
        rows.append([name, repr(float(p)) if not mp else "inf", repr(psf.concentration), repr(psf.mass)])
    with open(os.path.join(args.output, "psf_metrics.csv"), "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["name", "p", "concentration", "mass"])
        wr.writerows(rows)
    for r in rows:
        print(f"{r[0]}: concentration={float(r[2]):.6f} mass={float(r[3]):.9f}")
    return EXIT_OK


def cmd_multi_burst(args: argparse.Namespace) -> int:
    if len(args.inputs) < 2:
        raise UsageError("multi-burst needs at least two burst directories")
    _check_output(args.output, is_dir=True)
    ext = "." + args.format
    status = EXIT_OK
    for d in args.inputs:
        name = os.path.basename(os.path.normpath(d)) or "burst"
        try:
            job = job_from_args(args, inputs=resolve_inputs([d]))
            job.output = os.path.join(args.output, name + ext)
            write_image(run_deblur(job), job.output, bits=job.bits)
            log.info("%s -> %s", d, job.output)
        except (ImageIOError, UsageError) as exc:
            print(f"fba: {d}: {exc}", file=sys.stderr)
            status = max(status, EXIT_USAGE)
        except (RegistrationError, ValueError) as exc:
            print(f"fba: {d}: {exc}", file=sys.stderr)
            status = max(status, EXIT_FAILURE)
    return status


COMMANDS = {"deblur": cmd_deblur, "baseline": cmd_baseline, "simulate": cmd_simulate,
            "psf": cmd_psf, "multi-burst": cmd_multi_burst}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except (UsageError, ImageIOError, argparse.ArgumentTypeError, ValueError) as exc:
        print(f"fba: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        with sfft.set_workers(args.threads):
            return COMMANDS[args.subcommand](args)
    except (UsageError, ImageIOError) as exc:
        print(f"fba: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"fba: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RegistrationError, core.EmptyAccumulatorError, ValueError) as exc:
        print(f"fba: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
