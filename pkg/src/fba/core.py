"""Fourier Burst Accumulation.

Each aligned frame contributes its Fourier coefficients with a per-frequency
weight proportional to ``|smoothed magnitude| ** p``; the output is the
inverse transform of the weighted average.  ``p = 0`` is the plain mean and
``p -> inf`` keeps, at every frequency, the frame(s) with the largest
magnitude.

The streaming :class:`FbaAccumulator` needs one frame at a time.  Its sums
are stored relative to a running per-bin maximum magnitude, so arbitrarily
large ``p`` never overflows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .image import MagnitudeMap, PlanarImage, Spectrum, as_planar, gaussian_blur, gaussian_kernel1d

#: Magnitudes are floored here; a bin where every frame is below it gets 1/M.
EPS = 1e-12
#: Relative tolerance used to declare tied maxima in max-pool mode.
TIE_TOL = 1e-9


class EmptyAccumulatorError(ValueError):
    """finalize() called before any frame was accumulated."""


@dataclass(frozen=True)
class FbaConfig:
    """Aggregation parameters.

    ``p`` may be any nonnegative real.  ``max_pool`` selects the exact
    ``p -> inf`` rule and ignores ``p``.  The weight-smoothing Gaussian has
    ``sigma = smoothing_scale * min(h, w) / ks`` frequency bins.  ``taper``
    is the width in pixels of an optional raised-cosine border roll-off
    applied before the FFT (0 disables it).
    """

    p: float = 11.0
    ks: float = 50.0
    smoothing_scale: float = 1.0
    max_pool: bool = False
    taper: int = 0

    def __post_init__(self):
        if not self.p >= 0:
            raise ValueError(f"p must be nonnegative, got {self.p}")
        if not self.ks > 0:
            raise ValueError(f"ks must be positive, got {self.ks}")
        if not self.smoothing_scale >= 0:
            raise ValueError(f"smoothing_scale must be nonnegative, got {self.smoothing_scale}")
        if self.taper < 0:
            raise ValueError(f"taper must be nonnegative, got {self.taper}")


def smoothing_sigma(shape: tuple[int, int], ks: float = 50.0, smoothing_scale: float = 1.0) -> float:
    h, w = shape
    return smoothing_scale * min(h, w) / ks


def _values(m) -> np.ndarray:
    if isinstance(m, MagnitudeMap):
        return m.values
    if isinstance(m, Spectrum):
        return np.abs(m.bins)
    return np.asarray(m, dtype=np.float64)


def fourier_weights(magnitudes: Sequence, p: float = 11.0, max_pool: bool = False) -> list[np.ndarray]:
    """Per-frequency weights ``m_i^p / sum_j m_j^p`` for M magnitude maps.

    Magnitudes are floored at :data:`EPS`, so bins where every frame is
    (numerically) zero get the uniform weight 1/M.  In ``max_pool`` mode
    the q maxima tied within :data:`TIE_TOL` share weight 1/q.
    """
    if len(magnitudes) == 0:
        raise ValueError("need at least one magnitude map")
    maps = [_values(m) for m in magnitudes]
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ValueError("magnitude maps differ in shape")
    m = np.maximum(np.stack(maps), EPS)
    top = m.max(axis=0)
    if max_pool:
        w = (m >= top * (1.0 - TIE_TOL)).astype(np.float64)
    else:
        if p < 0:
            raise ValueError(f"p must be nonnegative, got {p}")
        w = (m / top) ** p
    w /= w.sum(axis=0)
    return list(w)


def smooth_magnitude(spectrum, image_dims: tuple[int, int] | None = None, ks: float = 50.0,
                     smoothing_scale: float = 1.0) -> MagnitudeMap:
    """Periodic Gaussian smoothing of a Fourier magnitude.

    ``spectrum`` may be a :class:`Spectrum` (its modulus is taken) or an
    already-computed magnitude array / MagnitudeMap, e.g. a channel mean.
    """
    mag = _values(spectrum)
    dims = image_dims if image_dims is not None else mag.shape
    sigma = smoothing_sigma(dims, ks, smoothing_scale)
    return MagnitudeMap(gaussian_blur(mag, sigma, mode="wrap"))


# ------------------------------------------------------------ helpers


def cosine_taper(frame: np.ndarray, width: int) -> np.ndarray:
    """Roll the outer ``width`` pixels smoothly toward the per-channel mean."""
    if width <= 0:
        return frame
    h, w = frame.shape[:2]

    def ramp(n):
        d = np.minimum(np.arange(n), np.arange(n)[::-1]).astype(np.float64)
        return np.where(d < width, 0.5 - 0.5 * np.cos(np.pi * (d + 0.5) / width), 1.0)

    win = np.outer(ramp(h), ramp(w))[:, :, None]
    mean = frame.mean(axis=(0, 1), keepdims=True)
    return mean + win * (frame - mean)


def _hermitian_full(half: np.ndarray, width: int) -> np.ndarray:
    """Rebuild a full-width symmetric map ``f(-k) = f(k)`` from its rfft half."""
    h, wh = half.shape
    full = np.empty((h, width), dtype=half.dtype)
    full[:, :wh] = half
    # column c >= wh mirrors column width - c of row -r; slices avoid temporaries
    full[0, wh:] = half[0, width - wh:0:-1]
    full[1:, wh:] = half[:0:-1, width - wh:0:-1]
    return full


def _wrapped_kernel_rfft(k: np.ndarray, n: int) -> np.ndarray:
    """rfft of a centered odd-length kernel folded onto a length-``n`` circle."""
    r = len(k) // 2
    circ = np.zeros(n)
    np.add.at(circ, np.arange(-r, r + 1) % n, k)
    return sfft.rfft(circ)


_CHUNK = 1 << 16  # samples per FFT block while smoothing


def _smooth_half(mag: np.ndarray, width: int, sigma: float) -> np.ndarray:
    """Periodic Gaussian smoothing of a symmetric half-grid map.

    Same result as wrapping the sampled kernel on the full grid, but done as
    per-axis FFT convolutions over small blocks, so the cost is
    O(m log m) and only one extra half-grid array is allocated.
    """
    h, wh = mag.shape
    k = gaussian_kernel1d(sigma)
    t0 = _wrapped_kernel_rfft(k, h)[:, None]
    step = max(1, _CHUNK // h)
    for c0 in range(0, wh, step):
        sl = slice(c0, c0 + step)
        mag[:, sl] = sfft.irfft(sfft.rfft(mag[:, sl], axis=0) * t0, n=h, axis=0)
    # along columns every row needs its full period: rebuild it from row -r
    t1 = _wrapped_kernel_rfft(k, width)
    out = np.empty_like(mag)
    step = max(1, _CHUNK // width)
    for r0 in range(0, h, step):
        rows = np.arange(r0, min(h, r0 + step))
        full = np.empty((len(rows), width))
        full[:, :wh] = mag[rows]
        full[:, wh:] = mag[(-rows) % h, width - wh:0:-1]
        out[rows] = sfft.irfft(sfft.rfft(full, axis=1) * t1, n=width, axis=1)[:, :wh]
    return out


def _frame_array(frame) -> np.ndarray:
    if isinstance(frame, PlanarImage):
        return frame.data
    a = np.asarray(frame, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        return as_planar(a).data  # raises with the usual message
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite samples")
    return a  # no defensive copy while streaming


def _channel_mean_magnitude_half(spectra: np.ndarray) -> np.ndarray:
    if spectra.shape[0] == 1:
        return np.abs(spectra[0])
    return np.abs(spectra).mean(axis=0)


def _power_inplace(x: np.ndarray, p: float) -> np.ndarray:
    """``x ** p`` computed in place; integer exponents by repeated squaring,
    which is several times faster than the generic power ufunc."""
    if p != int(p) or p > 64:
        return np.power(x, p, out=x)
    n = int(p)
    if n == 0:
        x.fill(1.0)
        return x
    base = x.copy() if n > 1 else x
    first = True
    while n:
        if n & 1:
            if first:
                x[...] = base
                first = False
            else:
                x *= base
        n >>= 1
        if n:
            base *= base
    return x


# --------------------------------------------------------- accumulator


class FbaAccumulator:
    """Streaming aggregation state.

    Holds the weighted spectrum sum, the weight sum and a running per-bin
    maximum ``scale``; true sums equal the stored ones times ``scale**p``.
    Spectra are kept on the real-FFT half grid.  The result does not depend
    on the order in which frames are added, and two partial accumulators can
    be combined with :meth:`merge`.
    """

    def __init__(self, shape: tuple[int, int], channels: int, config: FbaConfig | None = None):
        self.config = config or FbaConfig()
        self.shape = tuple(shape)
        self.channels = channels
        h, w = self.shape
        half = (h, w // 2 + 1)
        self.weighted_sum = np.zeros((channels,) + half, dtype=np.complex128)
        self.weight_sum = np.zeros(half)
        self.scale = np.zeros(half)
        self.frames_seen = 0
        self.imag_residue = 0.0

    @classmethod
    def like(cls, frame, config: FbaConfig | None = None) -> "FbaAccumulator":
        img = as_planar(frame)
        return cls(img.shape, img.channels, config)

    def _spectra(self, frame) -> tuple[np.ndarray, np.ndarray]:
        a = _frame_array(frame)
        if a.shape[:2] != self.shape or a.shape[2] != self.channels:
            raise ValueError(
                f"frame of shape {a.shape} does not match accumulator "
                f"{self.shape + (self.channels,)}")
        a = cosine_taper(a, self.config.taper)
        spectra = sfft.rfft2(a, axes=(0, 1), norm="ortho").transpose(2, 0, 1)
        mag = _channel_mean_magnitude_half(spectra)
        cfg = self.config
        sigma = smoothing_sigma(self.shape, cfg.ks, cfg.smoothing_scale)
        if sigma > 0:
            mag = _smooth_half(mag, self.shape[1], sigma)
        np.maximum(mag, EPS, out=mag)
        return spectra, mag

    def add(self, frame) -> "FbaAccumulator":
        spectra, m = self._spectra(frame)
        self._add_weighted(spectra, m, None)
        self.frames_seen += 1
        return self

    def _add_weighted(self, num, m, den):
        """Fold in sums ``(num, den)`` stored relative to per-bin scale ``m``.

        ``den=None`` stands for all ones.  ``num`` and ``m`` are overwritten.
        """
        if self.config.max_pool:
            new = m > self.scale * (1.0 + TIE_TOL)
            tie = ~new & (m >= self.scale * (1.0 - TIE_TOL))
            # a new maximum can drop previously tied entries below tolerance
            if den is None:
                den = np.ones_like(m)
            self.weighted_sum[:, new] = num[:, new]
            self.weight_sum[new] = den[new]
            self.weighted_sum[:, tie] += num[:, tie]
            self.weight_sum[tie] += den[tie]
            np.maximum(self.scale, m, out=self.scale)
            return
        p = self.config.p
        grow = m > self.scale
        if np.any(grow):
            factor = np.ones_like(m)
            factor[grow] = (self.scale[grow] / m[grow]) ** p
            self.weighted_sum *= factor
            self.weight_sum *= factor
            np.maximum(self.scale, m, out=self.scale)
        r = _power_inplace(np.divide(m, self.scale, out=m), p)
        if den is None:
            self.weight_sum += r
        else:
            den *= r
            self.weight_sum += den
        for c in range(self.channels):
            num[c] *= r
            self.weighted_sum[c] += num[c]

    def merge(self, other: "FbaAccumulator") -> "FbaAccumulator":
        """Combine two partial accumulators into a new one (associative)."""
        if other.shape != self.shape or other.channels != self.channels:
            raise ValueError("cannot merge accumulators of different dimensions")
        if other.config != self.config:
            raise ValueError("cannot merge accumulators with different configs")
        out = FbaAccumulator(self.shape, self.channels, self.config)
        out.weighted_sum[:] = self.weighted_sum
        out.weight_sum[:] = self.weight_sum
        out.scale[:] = self.scale
        out.frames_seen = self.frames_seen
        if other.frames_seen:
            out._add_weighted(other.weighted_sum.copy(), other.scale.copy(), other.weight_sum.copy())
            out.frames_seen += other.frames_seen
        return out

    def finalize(self) -> PlanarImage:
        if self.frames_seen == 0:
            raise EmptyAccumulatorError("no frames accumulated")
        spec = self.weighted_sum / np.maximum(self.weight_sum, EPS)
        h, w = self.shape
        # bins that must be real for a real image: DC column and Nyquist column
        cols = [0] + ([w // 2] if w % 2 == 0 else [])
        self.imag_residue = float(np.max(np.abs(spec[:, 0, cols].imag)))
        out = sfft.irfft2(spec, s=self.shape, axes=(1, 2), norm="ortho")
        return PlanarImage(out.transpose(1, 2, 0))


def accumulate(acc: FbaAccumulator, frame, config: FbaConfig | None = None) -> FbaAccumulator:
    if config is not None and config != acc.config:
        raise ValueError("config differs from the accumulator's config")
    return acc.add(frame)


def finalize(acc: FbaAccumulator) -> PlanarImage:
    return acc.finalize()


def fba(frames: Iterable, config: FbaConfig | None = None) -> PlanarImage:
    """Aggregate an iterable of aligned frames (consumed one at a time)."""
    config = config or FbaConfig()
    acc = None
    for f in frames:
        if acc is None:
            acc = FbaAccumulator.like(f, config)
        acc.add(f)
    if acc is None:
        raise EmptyAccumulatorError("empty burst")
    return acc.finalize()


# ------------------------------------------------------ multi-p evaluation


def burst_spectra(frames: Sequence, config: FbaConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Half-grid spectra ``(M, C, h, w//2+1)`` and smoothed channel-mean
    magnitudes ``(M, h, w//2+1)`` for a burst."""
    config = config or FbaConfig()
    first = as_planar(frames[0])
    acc = FbaAccumulator(first.shape, first.channels, config)
    pairs = [acc._spectra(f) for f in frames]
    return np.stack([s for s, _ in pairs]), np.stack([m for _, m in pairs])


def fba_sweep(spectra: np.ndarray, mags: np.ndarray, shape: tuple[int, int],
              ps: Sequence[float], max_pool: bool = False) -> np.ndarray:
    """FBA outputs for several ``p`` sharing one set of transforms.

    Returns an array ``(len(ps), h, w, C)``.  ``max_pool=True`` appends
    nothing; it evaluates the max-pool rule instead of every ``p``.
    """
    top = mags.max(axis=0)
    logr = np.log(mags / top)
    outs = []
    for p in ps:
        if max_pool:
            w = (mags >= top * (1.0 - TIE_TOL)).astype(np.float64)
        else:
            w = np.exp(p * logr) if p > 0 else np.ones_like(mags)
        w /= w.sum(axis=0)
        spec = np.einsum("mhw,mchw->chw", w, spectra)
        out = sfft.irfft2(spec, s=shape, axes=(1, 2), norm="ortho")
        outs.append(out.transpose(1, 2, 0))
    return np.stack(outs)


# -------------------------------------------------------- analysis tools


def _full_weights(frames: Sequence, config: FbaConfig) -> tuple[list, np.ndarray]:
    imgs = [as_planar(f) for f in frames]
    if not imgs:
        raise ValueError("empty burst")
    shape, channels = imgs[0].shape, imgs[0].channels
    for im in imgs:
        if im.shape != shape or im.channels != channels:
            raise ValueError("frames differ in dimensions")
    spectra = np.stack([
        sfft.fft2(cosine_taper(im.data, config.taper), axes=(0, 1), norm="ortho").transpose(2, 0, 1)
        for im in imgs])
    mags = [smooth_magnitude(np.abs(s).mean(axis=0), shape, config.ks, config.smoothing_scale)
            for s in spectra]
    weights = fourier_weights(mags, config.p, config.max_pool)
    return weights, spectra


def weight_maps(frames: Sequence, config: FbaConfig | None = None) -> list[np.ndarray]:
    """Full-grid per-frame weights (DC at index ``[0, 0]``)."""
    return _full_weights(frames, config or FbaConfig())[0]


def frame_contributions(frames: Sequence, config: FbaConfig | None = None):
    """Split the FBA output into per-frame components.

    Returns ``(contributions, shares)`` where contribution i is
    ``F^-1(w_i * v_i_hat)`` (they sum to the FBA output) and ``shares[i]`` is
    its fraction of the total weighted spectral energy.
    """
    config = config or FbaConfig()
    weights, spectra = _full_weights(frames, config)
    contribs, energy = [], []
    for w, s in zip(weights, spectra):
        ws = w[None] * s
        energy.append(float(np.sum(np.abs(ws) ** 2)))
        plane = sfft.ifft2(ws, axes=(1, 2), norm="ortho").real
        contribs.append(PlanarImage(plane.transpose(1, 2, 0)))
    total = sum(energy)
    shares = np.array(energy) / total if total > 0 else np.full(len(energy), 1.0 / len(energy))
    return contribs, shares


@dataclass(frozen=True, eq=False)
class EquivalentPsf:
    """Aggregated point spread function and its central concentration.

    ``concentration`` is the fraction of the kernel's squared energy that
    falls in the central 3x3 window.
    """

    kernel: np.ndarray
    concentration: float

    @property
    def mass(self) -> float:
        return float(self.kernel.sum())


def central_concentration(k: np.ndarray) -> float:
    k = np.asarray(k, dtype=np.float64)
    cy, cx = k.shape[0] // 2, k.shape[1] // 2
    e = k ** 2
    return float(e[cy - 1:cy + 2, cx - 1:cx + 2].sum() / e.sum())


def embed_centered(k: np.ndarray, size: int) -> np.ndarray:
    """Place an odd-sized kernel in the middle of a ``size x size`` grid."""
    k = np.asarray(k, dtype=np.float64)
    h, w = k.shape
    if h % 2 == 0 or w % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {k.shape}")
    if h > size or w > size:
        raise ValueError(f"kernel {k.shape} larger than grid {size}")
    out = np.zeros((size, size))
    r0, c0 = size // 2 - h // 2, size // 2 - w // 2
    out[r0:r0 + h, c0:c0 + w] = k
    return out


def equivalent_psf(kernels: Sequence, p: float = 11.0, ks_equivalent: float | None = None,
                   grid: int = 41, max_pool: bool = False) -> EquivalentPsf:
    """PSF of the aggregation for known kernels, using the noise-free weights
    ``|k_i_hat|^p / sum_j |k_j_hat|^p``.

    Kernels (arrays or objects with a ``grid`` attribute) are embedded
    centered on a common odd grid of at least ``grid`` cells.  If
    ``ks_equivalent`` is given, magnitudes are smoothed with
    ``sigma = grid / ks_equivalent`` before weighting.
    """
    arrays = [np.asarray(getattr(k, "grid", k), dtype=np.float64) for k in kernels]
    if not arrays:
        raise ValueError("need at least one kernel")
    size = max([grid] + [max(a.shape) for a in arrays])
    size += 1 - size % 2
    emb = [embed_centered(a, size) for a in arrays]
    spectra = [sfft.fft2(sfft.ifftshift(e), norm="ortho") for e in emb]
    mags = [np.abs(s) for s in spectra]
    if ks_equivalent:
        mags = [smooth_magnitude(m, (size, size), ks_equivalent, 1.0) for m in mags]
    weights = fourier_weights(mags, p, max_pool)
    acc = sum(w * s for w, s in zip(weights, spectra))
    k_fba = sfft.fftshift(sfft.ifft2(acc, norm="ortho").real)
    return EquivalentPsf(k_fba, central_concentration(k_fba))
