"""Pixel containers, the unitary 2D FFT pair, Gaussian filtering and image I/O.

All transforms use the unitary (``norm="ortho"``) convention, so that
``ifft2(fft2(x)) == x`` and Parseval holds without extra factors.  The DC bin
of a real plane with ``N`` samples is ``sum(x) / sqrt(N)``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import fft as sfft
from scipy import ndimage

#: Luma coefficients (ITU-R BT.601) used wherever a single plane is needed.
LUMA = np.array([0.299, 0.587, 0.114])


class ImageIOError(OSError):
    """Raised when an image file cannot be read or written."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PlanarImage:
    """H x W x C float image, C in {1, 3}, nominal range [0, 1].

    The sample array is copied on construction and made read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3:
            raise ValueError(f"expected a 2D or 3D array, got shape {a.shape}")
        h, w, c = a.shape
        if h < 1 or w < 1:
            raise ValueError(f"image dimensions must be positive, got {h}x{w}")
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        if not np.all(np.isfinite(a)):
            raise ValueError("image contains non-finite samples")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def plane(self, c: int) -> np.ndarray:
        return self.data[:, :, c]

    def planes(self) -> list[np.ndarray]:
        return [self.data[:, :, c] for c in range(self.channels)]

    def luma(self) -> np.ndarray:
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ LUMA

    def crop(self, rect: tuple[int, int, int, int]) -> "PlanarImage":
        """Crop to ``(row0, col0, row1, col1)`` (half-open)."""
        r0, c0, r1, c1 = rect
        return PlanarImage(self.data[r0:r1, c0:c1])

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Complex unitary DFT of one real plane."""

    bins: np.ndarray

    @property
    def height(self) -> int:
        return self.bins.shape[0]

    @property
    def width(self) -> int:
        return self.bins.shape[1]


@dataclass(frozen=True, eq=False)
class MagnitudeMap:
    """Nonnegative real value per frequency bin (periodic grid)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("magnitudes must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def as_planar(x) -> PlanarImage:
    return x if isinstance(x, PlanarImage) else PlanarImage(x)


def fft2(plane) -> Spectrum:
    """Unitary forward 2D DFT of a real plane (any size, no padding)."""
    a = np.asarray(plane, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"fft2 expects a non-empty 2D plane, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("fft2 input contains non-finite samples")
    return Spectrum(sfft.fft2(a, norm="ortho"))


def ifft2(spectrum: Spectrum | np.ndarray, return_residue: bool = False):
    """Unitary inverse 2D DFT, discarding the imaginary residue.

    With ``return_residue=True`` returns ``(plane, max_abs_imag)``.
    """
    bins = spectrum.bins if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    if bins.ndim != 2 or bins.size == 0:
        raise ValueError(f"ifft2 expects a non-empty 2D spectrum, got shape {bins.shape}")
    z = sfft.ifft2(bins, norm="ortho")
    if return_residue:
        return z.real.copy(), float(np.max(np.abs(z.imag)))
    return z.real.copy()


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled unit-mass Gaussian truncated at radius ``ceil(4 sigma)``."""
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(x, sigma: float, mode: str | None = None):
    """Separable Gaussian filter.

    MagnitudeMap inputs are filtered with periodic boundaries (the DFT grid
    wraps); arrays and PlanarImages use mirrored boundaries unless ``mode``
    says otherwise.  3D arrays are filtered along the first two axes only.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if isinstance(x, MagnitudeMap):
        return MagnitudeMap(gaussian_blur(x.values, sigma, mode or "wrap"))
    if isinstance(x, PlanarImage):
        return PlanarImage(gaussian_blur(x.data, sigma, mode or "mirror"))
    a = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return a.copy()
    mode = mode or "mirror"
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(a, k, axis=0, mode=mode)
    return ndimage.correlate1d(out, k, axis=1, mode=mode)


# ---------------------------------------------------------------- file I/O


def _read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ImageIOError(f"{path}: not a PFM file")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        c = 3 if header == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(), dtype=dtype)
    if raw.size != w * h * c:
        raise ImageIOError(f"{path}: truncated PFM payload")
    # PFM stores rows bottom-to-top
    return raw.reshape(h, w, c)[::-1].astype(np.float64)


def _write_pfm(path: str, data: np.ndarray) -> None:
    h, w, c = data.shape
    header = b"PF\n" if c == 3 else b"Pf\n"
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1], dtype="<f4").tobytes())


def read_image(path) -> PlanarImage:
    """Read an 8/16-bit PNG or a PFM file into [0, 1] floats (no gamma decode)."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageIOError(f"{path}: no such file")
    if path.lower().endswith(".pfm"):
        return PlanarImage(_read_pfm(path))
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"{path}: unreadable image")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageIOError(f"{path}: unsupported bit depth {raw.dtype}")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[:, :, :3]
        if raw.shape[2] == 2:  # gray + alpha
            raw = raw[:, :, :1]
        else:
            raw = raw[:, :, ::-1]  # BGR -> RGB
    return PlanarImage(raw.astype(np.float64) / scale)


def write_image(image, path, bits: int = 16) -> None:
    """Write PNG (8 or 16 bit, clamped to [0, 1]) or PFM (float32, unclamped)."""
    path = os.fspath(path)
    img = as_planar(image)
    try:
        if path.lower().endswith(".pfm"):
            _write_pfm(path, img.data)
            return
        if bits not in (8, 16):
            raise ImageIOError(f"{path}: unsupported bit depth {bits}")
        top = 255.0 if bits == 8 else 65535.0
        q = np.round(np.clip(img.data, 0.0, 1.0) * top)
        q = q.astype(np.uint8 if bits == 8 else np.uint16)
        if img.channels == 3:
            q = q[:, :, ::-1]
        else:
            q = q[:, :, 0]
        if not cv2.imwrite(path, q):
            raise ImageIOError(f"{path}: could not write image")
    except cv2.error as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
