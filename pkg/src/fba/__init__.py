"""Fourier weighted burst accumulation for hand-shake deblurring."""

from .core import (
    EmptyAccumulatorError,
    EquivalentPsf,
    FbaAccumulator,
    FbaConfig,
    accumulate,
    equivalent_psf,
    fba,
    finalize,
    fourier_weights,
    frame_contributions,
    smooth_magnitude,
)
from .image import MagnitudeMap, PlanarImage, Spectrum, fft2, ifft2, read_image, write_image
from .registration import (
    Homography,
    RegistrationError,
    RegistrationParams,
    detect_features,
    estimate_homography,
    match_features,
    register_burst,
    warp_image,
)
from .sharpen import SharpenConfig, noise_aware_sharpen

__version__ = "0.1.0"
