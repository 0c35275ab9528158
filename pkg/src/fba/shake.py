"""Camera-shake simulation and Monte-Carlo bias/variance studies.

Kernels come from a random 2D camera trajectory: per-axis white Gaussian
noise is shaped by a band-pass velocity spectrum (flat 2-12 Hz, 4th-order
Butterworth roll-offs on both sides) and integrated over the exposure.
The trajectory is rasterized by bilinear splatting, so every kernel is
nonnegative, carries unit mass and has (numerically) zero first moment.

Studies synthesize bursts ``v_i = u * k_i + n_i`` with circular convolution
and evaluate FBA for a grid of ``p`` values on the same bursts.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft

from .core import FbaConfig, burst_spectra, fba_sweep
from .image import PlanarImage, as_planar

KERNEL_STREAM, NOISE_STREAM, SHIFT_STREAM = 0, 1, 2

CSV_FIELDS = ["p", "epsilon", "T_exp", "M", "s", "trials", "mse", "bias2", "variance"]


def stream(seed: int, trial: int, frame: int, purpose: int) -> np.random.Generator:
    """Independent counter-based generator for one (trial, frame, purpose)."""
    ss = np.random.SeedSequence(seed, spawn_key=(trial, frame, purpose))
    return np.random.Generator(np.random.Philox(ss))


# ------------------------------------------------------------- kernels


@dataclass(frozen=True, eq=False)
class BlurKernel:
    """Nonnegative kernel on an odd grid; index ``(n//2, n//2)`` is the origin."""

    grid: np.ndarray

    def __post_init__(self):
        g = np.array(self.grid, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] % 2 == 0 or g.shape[1] % 2 == 0:
            raise ValueError(f"kernel grid must be 2D with odd sides, got {g.shape}")
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise ValueError("kernel entries must be finite and nonnegative")
        g.flags.writeable = False
        object.__setattr__(self, "grid", g)

    @property
    def mass(self) -> float:
        return float(self.grid.sum())

    def _coords(self):
        h, w = self.grid.shape
        ys = np.arange(h) - h // 2
        xs = np.arange(w) - w // 2
        return ys, xs

    @property
    def first_moment(self) -> np.ndarray:
        """``(mu_x, mu_y)`` in pixels relative to the grid center."""
        ys, xs = self._coords()
        m = self.mass
        if m <= 0:
            return np.zeros(2)
        return np.array([(self.grid.sum(axis=0) * xs).sum() / m,
                         (self.grid.sum(axis=1) * ys).sum() / m])

    @property
    def second_moment(self) -> np.ndarray:
        """Central 2x2 covariance (x, y order)."""
        ys, xs = self._coords()
        X, Y = np.meshgrid(xs, ys)
        m = self.mass
        mx, my = self.first_moment
        dx, dy = X - mx, Y - my
        g = self.grid / m
        return np.array([[(g * dx * dx).sum(), (g * dx * dy).sum()],
                         [(g * dx * dy).sum(), (g * dy * dy).sum()]])

    @property
    def rms_radius(self) -> float:
        return float(math.sqrt(max(np.trace(self.second_moment), 0.0)))

    def normalized(self) -> "BlurKernel":
        m = self.mass
        if m <= 0:
            raise ValueError("cannot normalize a zero-mass kernel")
        return BlurKernel(self.grid / m)


def dirac(size: int = 41) -> BlurKernel:
    g = np.zeros((size, size))
    g[size // 2, size // 2] = 1.0
    return BlurKernel(g)


def _splat(points_xy: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    """Bilinear splat of weighted points (relative to the center) onto a grid.

    Preserves total mass and the first moment exactly.
    """
    c = size // 2
    x = points_xy[:, 0] + c
    y = points_xy[:, 1] + c
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0
    g = np.zeros(size * size)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            idx = (y0 + dy) * size + (x0 + dx)
            g += np.bincount(idx, weights * wy * wx, minlength=size * size)
    return g.reshape(size, size)


def _grid_for(extent: float, size: int) -> int:
    """Smallest odd grid >= ``size`` holding offsets up to ``extent`` plus a margin."""
    need = 2 * (int(math.ceil(extent)) + 2) + 1
    return max(size, need)


def shift_kernel(k: BlurKernel, dx: float, dy: float) -> BlurKernel:
    """Translate a kernel by a subpixel offset using linear interpolation.

    The grid grows (symmetrically) rather than losing mass at the border.
    """
    g = k.grid
    if k.mass <= 0:
        raise ValueError("cannot shift a zero-mass kernel")
    if dx == 0 and dy == 0:
        return BlurKernel(g)
    ys, xs = np.nonzero(g)
    h = g.shape[0] // 2
    pts = np.stack([xs - h + dx, ys - h + dy], axis=1).astype(np.float64)
    size = _grid_for(np.abs(pts).max(), g.shape[0])
    return BlurKernel(_splat(pts, g[ys, xs], size))


def center_kernel(k: BlurKernel) -> BlurKernel:
    """Translate so that the first moment vanishes (mass preserved)."""
    if k.mass <= 0:
        raise ValueError("cannot center a zero-mass kernel")
    if k.grid.shape[0] != k.grid.shape[1]:
        raise ValueError("kernel grid must be square")
    mu = k.first_moment
    if np.all(np.abs(mu) < 1e-12):
        return BlurKernel(k.grid)
    return shift_kernel(k, -mu[0], -mu[1])


@dataclass(frozen=True)
class TremorParams:
    """Parametric hand-tremor model.

    ``t_exp`` is the exposure in seconds (0 <= t_exp <= 1; 0 gives a Dirac).  ``amplitude`` is
    the RMS displacement (pixels) of the stationary trajectory process; the
    default makes the mean trajectory diameter close to 10 px at 1/3 s.
    """

    t_exp: float = 1.0 / 3.0
    band: tuple[float, float] = (2.0, 12.0)
    sample_rate: float = 2000.0
    amplitude: float = 2.5
    grid: int = 41
    order: int = 4

    def __post_init__(self):
        if not 0 <= self.t_exp <= 1:
            raise ValueError(f"t_exp must lie in [0, 1], got {self.t_exp}")
        lo, hi = self.band
        if not 0 < lo < hi:
            raise ValueError(f"invalid tremor band {self.band}")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.grid % 2 == 0:
            raise ValueError("kernel grid must be odd")


_FILTER_LEN = 8192


def _position_filter(params: TremorParams) -> tuple[np.ndarray, float]:
    f = sfft.rfftfreq(_FILTER_LEN, d=1.0 / params.sample_rate)
    lo, hi = params.band
    n = 2 * params.order
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = 1.0 / np.sqrt((1.0 + (lo / f) ** n) * (1.0 + (f / hi) ** n))
        g = bp / (2 * np.pi * f)  # velocity band-pass, integrated to position
    g[0] = 0.0
    # variance of irfft(g * rfft(white)) for unit white noise, full spectrum
    full = np.concatenate([g, g[1:-1][::-1]]) if _FILTER_LEN % 2 == 0 else np.concatenate([g, g[1:][::-1]])
    std = math.sqrt((full ** 2).sum() / _FILTER_LEN)
    return g, std


def simulate_trajectory(params: TremorParams, rng: np.random.Generator) -> np.ndarray:
    """Camera path ``(n, 2)`` in pixels over one exposure (mean removed)."""
    n = max(1, int(round(params.t_exp * params.sample_rate)) + 1)
    if params.t_exp == 0:
        return np.zeros((1, 2))
    g, std = _position_filter(params)
    noise = rng.standard_normal((2, _FILTER_LEN))
    path = sfft.irfft(sfft.rfft(noise, axis=1) * g, n=_FILTER_LEN, axis=1)
    path = path[:, :n].T * (params.amplitude / std)
    return path - path.mean(axis=0)


def simulate_kernel(params: TremorParams, rng: np.random.Generator) -> BlurKernel:
    """Random shake kernel: rasterized trajectory, unit mass, centered."""
    path = simulate_trajectory(params, rng)
    size = _grid_for(np.abs(path).max(), params.grid)
    w = np.full(len(path), 1.0 / len(path))
    k = BlurKernel(_splat(path, w, size)).normalized()
    return center_kernel(k)


def trajectory_diameter(params: TremorParams, rng: np.random.Generator) -> float:
    path = simulate_trajectory(params, rng)
    d = path[:, None, :] - path[None, ::8, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


# ------------------------------------------------------------ synthesis


def kernel_otf(k, shape: tuple[int, int]) -> np.ndarray:
    """Half-grid transfer function of a centered kernel for circular convolution."""
    g = np.asarray(getattr(k, "grid", k), dtype=np.float64)
    h, w = shape
    pad = np.zeros(shape)
    c = g.shape[0] // 2
    ys, xs = np.nonzero(g)
    np.add.at(pad, ((ys - c) % h, (xs - c) % w), g[ys, xs])
    return sfft.rfft2(pad)


def convolve_periodic(u, k) -> np.ndarray:
    """Circular convolution of an H x W x C image with a centered kernel."""
    a = as_planar(u).data
    otf = kernel_otf(k, a.shape[:2])
    spec = sfft.rfft2(a, axes=(0, 1))
    return sfft.irfft2(spec * otf[:, :, None], s=a.shape[:2], axes=(0, 1))


def synthesize_burst(ground_truth, kernels: Sequence, s: float, rng=None,
                     noise_rngs: Sequence | None = None) -> list[PlanarImage]:
    """Frames ``u * k_i + n_i`` with white Gaussian noise of std ``s``.

    Either one generator ``rng`` (used sequentially) or one generator per
    frame in ``noise_rngs``.
    """
    u = as_planar(ground_truth)
    if noise_rngs is None:
        rng = rng if rng is not None else np.random.default_rng()
        noise_rngs = [rng] * len(kernels)
    frames = []
    for k, r in zip(kernels, noise_rngs):
        v = convolve_periodic(u, k)
        if s > 0:
            v = v + s * r.standard_normal(v.shape)
        frames.append(PlanarImage(v))
    return frames


# --------------------------------------------------------------- studies


@dataclass(frozen=True)
class StudyConfig:
    """One Monte-Carlo configuration: ``trials`` bursts of ``M`` frames."""

    M: int = 16
    s: float = 0.04
    t_exp: float = 1.0 / 3.0
    epsilon: float = 0.0
    ps: tuple[float, ...] = tuple(float(p) for p in range(51))
    trials: int = 100
    seed: int = 0
    ks: float = 50.0
    smoothing_scale: float = 1.0
    tremor: TremorParams = field(default_factory=TremorParams)
    groups: int = 10

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.ps) == 0:
            raise ValueError("p grid is empty")
        if any(p < 0 for p in self.ps):
            raise ValueError("p values must be nonnegative")
        if self.s < 0 or self.epsilon < 0:
            raise ValueError("noise and misalignment must be nonnegative")

    @property
    def tremor_params(self) -> TremorParams:
        return dataclasses.replace(self.tremor, t_exp=self.t_exp)


@dataclass
class StudyResult:
    """Per-p MSE with its bias^2 / variance split and Monte-Carlo standard errors.

    Variance uses the population (1/T) convention, so ``mse == bias2 +
    variance`` holds exactly.  Standard errors of bias^2 and variance come
    from a delete-a-group jackknife over trial groups.
    """

    config: StudyConfig
    ps: np.ndarray
    mse: np.ndarray
    bias2: np.ndarray
    variance: np.ndarray
    mse_se: np.ndarray
    bias2_se: np.ndarray
    variance_se: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return self.config.trials

    @property
    def argmin_p(self) -> float:
        return float(self.ps[int(np.argmin(self.mse))])

    def rows(self) -> list[dict]:
        c = self.config
        out = []
        for i, p in enumerate(self.ps):
            row = {"p": float(p), "epsilon": c.epsilon, "T_exp": c.t_exp, "M": c.M, "s": c.s,
                   "trials": c.trials, "mse": float(self.mse[i]), "bias2": float(self.bias2[i]),
                   "variance": float(self.variance[i])}
            row.update(self.extra)
            out.append(row)
        return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def results_to_csv(results: Sequence[StudyResult], path=None) -> str:
    """Serialize results (one row per grid point); returns the CSV text."""
    extra = []
    for r in results:
        for key in r.extra:
            if key not in extra:
                extra.append(key)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS + extra)
    for r in results:
        for row in r.rows():
            writer.writerow([_fmt(row.get(k, "")) for k in CSV_FIELDS + extra])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as f:
            f.write(text)
    return text


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


def trial_kernels(config: StudyConfig, trial: int) -> list[BlurKernel]:
    params = config.tremor_params
    kernels = []
    for i in range(config.M):
        k = simulate_kernel(params, stream(config.seed, trial, i, KERNEL_STREAM))
        if config.epsilon > 0:
            dx, dy = config.epsilon * stream(config.seed, trial, i, SHIFT_STREAM).standard_normal(2)
            k = shift_kernel(k, dx, dy)
        kernels.append(k)
    return kernels


def trial_burst(config: StudyConfig, ground_truth, trial: int) -> list[PlanarImage]:
    kernels = trial_kernels(config, trial)
    rngs = [stream(config.seed, trial, i, NOISE_STREAM) for i in range(config.M)]
    return synthesize_burst(ground_truth, kernels, config.s, noise_rngs=rngs)


Estimator = Callable[[list, StudyConfig, int], np.ndarray]


def fba_estimator(frames: list, config: StudyConfig, trial: int) -> np.ndarray:
    """FBA outputs ``(P, h, w, C)`` for every p of the study grid."""
    fcfg = FbaConfig(p=0.0, ks=config.ks, smoothing_scale=config.smoothing_scale)
    spectra, mags = burst_spectra(frames, fcfg)
    return fba_sweep(spectra, mags, frames[0].shape, config.ps)


def run_study(config: StudyConfig, ground_truth, estimator: Estimator = fba_estimator) -> StudyResult:
    """Monte-Carlo MSE / bias^2 / variance of FBA as a function of p."""
    if config.trials < 2:
        raise ValueError("at least 2 trials are needed to estimate a variance")
    u = as_planar(ground_truth).data
    P, T = len(config.ps), config.trials
    G = max(2, min(config.groups, T))
    group_sum = np.zeros((G, P) + u.shape)
    group_n = np.zeros(G)
    trial_mse = np.zeros((T, P))
    for t in range(T):
        frames = trial_burst(config, u, t)
        outs = estimator(frames, config, t)
        g = t % G
        group_sum[g] += outs
        group_n[g] += 1
        trial_mse[t] = ((outs - u) ** 2).reshape(P, -1).mean(axis=1)

    axes = tuple(range(1, u.ndim + 1))
    mean = group_sum.sum(axis=0) / T
    bias2 = ((mean - u) ** 2).mean(axis=axes)
    mse = trial_mse.mean(axis=0)
    variance = mse - bias2

    # delete-a-group jackknife
    jb, jv = np.zeros((G, P)), np.zeros((G, P))
    for g in range(G):
        n = T - group_n[g]
        m_g = (group_sum.sum(axis=0) - group_sum[g]) / n
        jb[g] = ((m_g - u) ** 2).mean(axis=axes)
        keep = np.arange(T) % G != g
        jv[g] = trial_mse[keep].mean(axis=0) - jb[g]

    def jk_se(est):
        return np.sqrt((G - 1) / G * ((est - est.mean(axis=0)) ** 2).sum(axis=0))

    return StudyResult(
        config=config, ps=np.asarray(config.ps, dtype=np.float64), mse=mse, bias2=bias2,
        variance=variance, mse_se=trial_mse.std(axis=0, ddof=1) / math.sqrt(T),
        bias2_se=jk_se(jb), variance_se=jk_se(jv))


def run_misalignment_study(config: StudyConfig, ground_truth, epsilons: Sequence[float],
                           estimator: Estimator = fba_estimator) -> list[StudyResult]:
    """run_study for each registration-error level (kernels shifted after centering)."""
    return [run_study(dataclasses.replace(config, epsilon=float(e)), ground_truth, estimator)
            for e in epsilons]


def run_smoothing_study(config: StudyConfig, ground_truth, scales: Sequence[float]) -> list[StudyResult]:
    """run_study for each weight-smoothing multiplier (same bursts for every scale)."""
    out = []
    for sc in scales:
        r = run_study(dataclasses.replace(config, smoothing_scale=float(sc)), ground_truth)
        r.extra["smoothing_scale"] = float(sc)
        out.append(r)
    return out


def default_ground_truth(size: int = 128) -> PlanarImage:
    """Grayscale test scene: the scikit-image ``camera`` photograph, resized."""
    from skimage import data, transform

    img = data.camera().astype(np.float64) / 255.0
    img = transform.resize(img, (size, size), anti_aliasing=True, order=3)
    return PlanarImage(np.clip(img, 0.0, 1.0))
