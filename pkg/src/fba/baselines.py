"""Lucky-imaging style comparison methods.

All functions take a list of aligned frames (PlanarImage or H x W [x C]
arrays) and return a PlanarImage.  Sharpness measures are computed on the
luma plane and the resulting per-pixel weights are applied to every channel.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .image import PlanarImage, as_planar

_LAPLACE = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def _stack(frames: Sequence) -> np.ndarray:
    if len(frames) == 0:
        raise ValueError("empty burst")
    imgs = [as_planar(f) for f in frames]
    shape = imgs[0].data.shape
    if any(im.data.shape != shape for im in imgs):
        raise ValueError("frames differ in dimensions")
    return np.stack([im.data for im in imgs])


def _luma(frame) -> np.ndarray:
    return as_planar(frame).luma()


def laplacian(plane: np.ndarray) -> np.ndarray:
    """5-point Laplacian with mirrored borders."""
    return ndimage.convolve(np.asarray(plane, dtype=np.float64), _LAPLACE, mode="mirror")


def align_and_average(frames: Sequence) -> PlanarImage:
    return PlanarImage(_stack(frames).mean(axis=0))


def dirichlet_energy(frame, block: int = 100) -> tuple[np.ndarray, float]:
    """Block-integrated squared gradient magnitude (central differences).

    Returns the per-pixel energy map (sum over a ``block x block`` window
    around each pixel, mirrored borders) and the total squared gradient
    energy of the frame.
    """
    v = _luma(frame)
    gy, gx = np.gradient(v)
    g2 = gx ** 2 + gy ** 2
    local = ndimage.uniform_filter(g2, size=block, mode="mirror") * (block * block)
    return local, float(g2.sum())


def lucky_frame_average(frames: Sequence, K: int = 1, block: int = 100) -> PlanarImage:
    """Mean of the K frames with the largest total Dirichlet energy."""
    stack = _stack(frames)
    M = len(stack)
    if not 1 <= K <= M:
        raise ValueError(f"K must lie in [1, {M}], got {K}")
    energy = np.array([dirichlet_energy(f, block)[1] for f in stack])
    order = np.lexsort((np.arange(M), -energy))  # high energy first, then index
    return PlanarImage(stack[order[:K]].mean(axis=0))


def sharpness_selectivity_weights(frames: Sequence, lam: float = 50.0) -> np.ndarray:
    """Per-pixel weights ``(|L v_i| / max|L v_i|) ** gamma`` with
    ``gamma = lam * |L vbar| / max|L vbar|``, normalized over frames.

    Pixels where every weight vanishes fall back to uniform weights.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    stack = _stack(frames)
    lumas = [_luma(f) for f in stack]
    lap = np.stack([np.abs(laplacian(l)) for l in lumas])
    peak = lap.reshape(len(lap), -1).max(axis=1)
    tex = np.divide(lap, peak[:, None, None], out=np.zeros_like(lap), where=peak[:, None, None] > 0)
    lbar = np.abs(laplacian(np.mean(lumas, axis=0)))
    gamma = lam * lbar / lbar.max() if lbar.max() > 0 else np.zeros_like(lbar)
    # work in the log domain: gamma can be ~50, so raw powers underflow
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = np.where(tex > 0, gamma[None] * np.log(np.where(tex > 0, tex, 1.0)),
                        np.where(gamma[None] > 0, -np.inf, 0.0))
    top = logw.max(axis=0)
    alive = np.isfinite(top)
    w = np.where(alive[None], np.exp(logw - np.where(alive, top, 0.0)[None]), 1.0)
    return w / w.sum(axis=0)


def sharpness_selectivity_average(frames: Sequence, lam: float = 50.0) -> PlanarImage:
    stack = _stack(frames)
    w = sharpness_selectivity_weights(stack, lam)
    return PlanarImage((w[..., None] * stack).sum(axis=0))


def frequency_percentile_fusion(frames: Sequence, top_fraction: float = 0.1) -> PlanarImage:
    """Per frequency, average the ``max(1, round(f * M))`` coefficients with the
    largest (channel-mean) magnitude; ties go to the lower frame index."""
    if not 0 < top_fraction <= 1:
        raise ValueError(f"top_fraction must lie in (0, 1], got {top_fraction}")
    stack = _stack(frames)
    M = len(stack)
    n_sel = max(1, int(round(top_fraction * M)))
    spectra = sfft.fft2(stack, axes=(1, 2), norm="ortho")  # (M, h, w, C)
    mag = np.abs(spectra).mean(axis=3)
    order = np.argsort(-mag, axis=0, kind="stable")[:n_sel]
    picked = np.take_along_axis(spectra, order[..., None], axis=0)
    out = sfft.ifft2(picked.mean(axis=0), axes=(0, 1), norm="ortho").real
    return PlanarImage(out)
