"""Burst registration: features, robust homography, resampling.

Every frame is mapped onto the first one by a single homography estimated
from difference-of-Gaussians features.  Features finer than ``min_scale``
are discarded since camera shake destroys small-scale structure first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .image import PlanarImage, as_planar


class RegistrationError(RuntimeError):
    """Raised when a frame cannot be aligned to the reference."""

    def __init__(self, message: str, frame: int | None = None):
        self.frame = frame
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)


# ------------------------------------------------------------- features


@dataclass(frozen=True, eq=False)
class Feature:
    x: float
    y: float
    scale: float
    orientation: float
    response: float
    descriptor: np.ndarray


@dataclass(frozen=True)
class DetectorParams:
    sigma0: float = 1.6
    intervals: int = 3
    contrast: float = 0.03
    edge_ratio: float = 10.0
    max_features: int = 2000
    border: int = 8


def _gaussian_octaves(gray: np.ndarray, p: DetectorParams):
    S = p.intervals
    k = 2.0 ** (1.0 / S)
    # assume the input already carries sigma 0.5 of blur
    base = ndimage.gaussian_filter(gray, math.sqrt(max(p.sigma0 ** 2 - 0.25, 0.01)))
    octaves = []
    img = base
    while min(img.shape) >= 32:
        levels = [img]
        for s in range(1, S + 3):
            prev = p.sigma0 * k ** (s - 1)
            inc = math.sqrt((prev * k) ** 2 - prev ** 2)
            levels.append(ndimage.gaussian_filter(levels[-1], inc))
        octaves.append(np.stack(levels))
        img = levels[S][::2, ::2]
    return octaves


def _refine(D: np.ndarray, s, y, x, iters: int = 5):
    """Quadratic sub-sample refinement of DoG extrema (vectorized)."""
    ns, h, w = D.shape
    s, y, x = s.copy(), y.copy(), x.copy()
    ok = np.ones(len(s), dtype=bool)
    off = np.zeros((len(s), 3))
    val = np.zeros(len(s))
    for _ in range(iters):
        s = np.clip(s, 1, ns - 2)
        y = np.clip(y, 1, h - 2)
        x = np.clip(x, 1, w - 2)
        c = D[s, y, x]
        ds = 0.5 * (D[s + 1, y, x] - D[s - 1, y, x])
        dy = 0.5 * (D[s, y + 1, x] - D[s, y - 1, x])
        dx = 0.5 * (D[s, y, x + 1] - D[s, y, x - 1])
        dss = D[s + 1, y, x] + D[s - 1, y, x] - 2 * c
        dyy = D[s, y + 1, x] + D[s, y - 1, x] - 2 * c
        dxx = D[s, y, x + 1] + D[s, y, x - 1] - 2 * c
        dsy = 0.25 * (D[s + 1, y + 1, x] - D[s + 1, y - 1, x] - D[s - 1, y + 1, x] + D[s - 1, y - 1, x])
        dsx = 0.25 * (D[s + 1, y, x + 1] - D[s + 1, y, x - 1] - D[s - 1, y, x + 1] + D[s - 1, y, x - 1])
        dyx = 0.25 * (D[s, y + 1, x + 1] - D[s, y + 1, x - 1] - D[s, y - 1, x + 1] + D[s, y - 1, x - 1])
        H = np.stack([np.stack([dss, dsy, dsx], -1), np.stack([dsy, dyy, dyx], -1),
                      np.stack([dsx, dyx, dxx], -1)], -2)
        g = np.stack([ds, dy, dx], -1)
        det = np.linalg.det(H)
        good = np.abs(det) > 1e-18
        H[~good] = np.eye(3)
        off = -np.linalg.solve(H, g[..., None])[..., 0]
        off[~good] = 0
        ok &= good
        val = c + 0.5 * (g * off).sum(-1)
        step = np.round(np.clip(off, -1e6, 1e6)).astype(int)
        moving = np.any(np.abs(off) > 0.5, axis=1)
        if not moving.any():
            break
        s = s + np.where(moving, step[:, 0], 0)
        y = y + np.where(moving, step[:, 1], 0)
        x = x + np.where(moving, step[:, 2], 0)
    ok &= np.all(np.abs(off) <= 0.6, axis=1)
    ok &= (s >= 1) & (s <= ns - 2)
    return s, y, x, off, val, dxx, dyy, dyx, ok


def _orientation(gx, gy, y, x, sigma):
    """Dominant gradient direction from a 36-bin weighted histogram."""
    h, w = gx.shape
    r = int(math.ceil(3 * 1.5 * sigma))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    wgt = np.exp(-(yy ** 2 + xx ** 2) / (2 * (1.5 * sigma) ** 2))
    ys = np.clip(np.round(y).astype(int) + yy, 0, h - 1)
    xs = np.clip(np.round(x).astype(int) + xx, 0, w - 1)
    mag = np.hypot(gx[ys, xs], gy[ys, xs]) * wgt
    ang = np.arctan2(gy[ys, xs], gx[ys, xs]) % (2 * np.pi)
    b = (ang / (2 * np.pi) * 36).astype(int) % 36
    hist = np.bincount(b.ravel(), mag.ravel(), minlength=36)
    hist = np.convolve(np.concatenate([hist[-2:], hist, hist[:2]]), np.ones(5) / 5, mode="valid")
    i = int(np.argmax(hist))
    l, c, rr = hist[i - 1], hist[i], hist[(i + 1) % 36]
    den = l - 2 * c + rr
    frac = 0.5 * (l - rr) / den if den != 0 else 0.0
    return ((i + 0.5 + frac) / 36.0 * 2 * np.pi) % (2 * np.pi)


def _descriptors(gx, gy, ys, xs, sigmas, thetas) -> np.ndarray:
    """4x4 spatial x 8 orientation histograms of rotated gradients."""
    n = len(ys)
    u = (np.arange(16) - 7.5) / 4.0  # cell coordinates in [-2, 2)
    cu, cv = np.meshgrid(u, u)  # cv along rows
    cu, cv = cu.ravel(), cv.ravel()
    cell = 3.0 * sigmas[:, None]
    cos, sin = np.cos(thetas)[:, None], np.sin(thetas)[:, None]
    px = xs[:, None] + cell * (cu * cos - cv * sin)
    py = ys[:, None] + cell * (cu * sin + cv * cos)
    coords = np.stack([py.ravel(), px.ravel()])
    sgx = ndimage.map_coordinates(gx, coords, order=1, mode="nearest").reshape(n, -1)
    sgy = ndimage.map_coordinates(gy, coords, order=1, mode="nearest").reshape(n, -1)
    # rotate gradients into the keypoint frame
    rx = sgx * cos + sgy * sin
    ry = -sgx * sin + sgy * cos
    mag = np.hypot(rx, ry) * np.exp(-(cu ** 2 + cv ** 2) / 8.0)[None]
    ob = (np.arctan2(ry, rx) % (2 * np.pi)) / (2 * np.pi) * 8
    o0 = np.floor(ob).astype(int) % 8
    of = ob - np.floor(ob)
    spatial = (np.floor(cv + 2).astype(int).clip(0, 3) * 4 + np.floor(cu + 2).astype(int).clip(0, 3))
    desc = np.zeros((n, 16 * 8))
    rows = np.repeat(np.arange(n), 256)
    for ob_, wt in ((o0, 1 - of), ((o0 + 1) % 8, of)):
        idx = rows * 128 + np.tile(spatial, n) * 8 + ob_.ravel()
        desc += np.bincount(idx, (mag * wt).ravel(), minlength=n * 128).reshape(n, 128)
    desc /= np.maximum(np.linalg.norm(desc, axis=1, keepdims=True), 1e-12)
    desc = np.minimum(desc, 0.2)
    desc /= np.maximum(np.linalg.norm(desc, axis=1, keepdims=True), 1e-12)
    return desc


def detect_features(image, min_scale: float = 1.8, params: DetectorParams | None = None) -> list[Feature]:
    """DoG keypoints with gradient-histogram descriptors, strongest first.

    Only keypoints whose scale (pixels, full resolution) is at least
    ``min_scale`` are returned.
    """
    p = params or DetectorParams()
    img = as_planar(image)
    if img.height < 32 or img.width < 32:
        raise ValueError(f"image {img.height}x{img.width} is smaller than 32x32")
    gray = img.luma()
    S = p.intervals
    thr = p.contrast / S
    found = []
    for o, G in enumerate(_gaussian_octaves(gray, p)):
        D = G[1:] - G[:-1]
        mx = ndimage.maximum_filter(D, size=3, mode="nearest")
        mn = ndimage.minimum_filter(D, size=3, mode="nearest")
        cand = ((D == mx) | (D == mn)) & (np.abs(D) > 0.5 * thr)
        cand[0], cand[-1] = False, False
        b = p.border
        cand[:, :b], cand[:, -b:], cand[:, :, :b], cand[:, :, -b:] = False, False, False, False
        s0, y0, x0 = np.nonzero(cand)
        if len(s0) == 0:
            continue
        s, y, x, off, val, dxx, dyy, dyx, ok = _refine(D, s0, y0, x0)
        off = np.where(ok[:, None], off, 0.0)  # diverged candidates are dropped below
        tr, det = dxx + dyy, dxx * dyy - dyx ** 2
        r = p.edge_ratio
        ok &= (np.abs(val) >= thr) & (det > 0) & (tr ** 2 * r < (r + 1) ** 2 * det)
        level = s + off[:, 0]
        scale = p.sigma0 * 2.0 ** (o + level / S)
        ok &= scale >= min_scale
        fy, fx = y + off[:, 1], x + off[:, 2]
        h, w = D.shape[1:]
        ok &= (fy >= b) & (fy < h - b) & (fx >= b) & (fx < w - b)
        idx = np.nonzero(ok)[0]
        if len(idx) == 0:
            continue
        # deduplicate keypoints that converged to the same sample
        key = np.stack([s[idx], y[idx], x[idx]], 1)
        _, first = np.unique(key, axis=0, return_index=True)
        idx = idx[np.sort(first)]
        for lev in np.unique(s[idx]):
            sel = idx[s[idx] == lev]
            L = G[lev]
            gy, gx = np.gradient(L)
            sig_oct = p.sigma0 * 2.0 ** (level[sel] / S)
            th = np.array([_orientation(gx, gy, fy[i], fx[i], so) for i, so in zip(sel, sig_oct)])
            desc = _descriptors(gx, gy, fy[sel], fx[sel], sig_oct, th)
            f = 2.0 ** o
            for j, i in enumerate(sel):
                # octave sample (i, j) sits at full-res pixel (i * f, j * f)
                found.append(Feature(x=float(fx[i] * f), y=float(fy[i] * f), scale=float(scale[i]),
                                     orientation=float(th[j]), response=float(abs(val[i])),
                                     descriptor=desc[j]))
    found.sort(key=lambda ft: (-ft.response, ft.y, ft.x))
    return found[: p.max_features]


# ------------------------------------------------------------- matching


@dataclass(frozen=True, eq=False)
class MatchSet:
    """Correspondences ``src[k] -> dst[k]`` with descriptor distances."""

    src_idx: np.ndarray
    dst_idx: np.ndarray
    distance: np.ndarray
    src: np.ndarray
    dst: np.ndarray

    def __len__(self) -> int:
        return len(self.src)

    @classmethod
    def from_points(cls, src, dst) -> "MatchSet":
        src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
        dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
        n = len(src)
        return cls(np.arange(n), np.arange(n), np.zeros(n), src, dst)


def _points(features: Sequence[Feature]) -> np.ndarray:
    return np.array([[f.x, f.y] for f in features], dtype=np.float64).reshape(-1, 2)


def match_features(a: Sequence[Feature], b: Sequence[Feature], ratio_threshold: float = 0.8) -> MatchSet:
    """Nearest-neighbor matching of ``a`` into ``b`` with the ratio test.

    When several features of ``a`` pick the same feature of ``b`` only the
    closest one is kept.
    """
    if not 0 < ratio_threshold <= 1:
        raise ValueError(f"ratio_threshold must lie in (0, 1], got {ratio_threshold}")
    empty = MatchSet(np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2)))
    if len(a) == 0 or len(b) == 0:
        return empty
    da = np.array([f.descriptor for f in a])
    db = np.array([f.descriptor for f in b])
    d2 = (da ** 2).sum(1)[:, None] + (db ** 2).sum(1)[None] - 2 * da @ db.T
    d = np.sqrt(np.maximum(d2, 0))
    if len(b) == 1:
        nn = np.zeros(len(a), dtype=int)
        ok = np.ones(len(a), dtype=bool)
    else:
        part = np.argpartition(d, 1, axis=1)[:, :2]
        dd = np.take_along_axis(d, part, axis=1)
        order = np.argsort(dd, axis=1)
        nn = np.take_along_axis(part, order, axis=1)[:, 0]
        d1, d2nd = np.sort(dd, axis=1).T
        ok = d1 <= ratio_threshold * d2nd
        ok &= ~((d1 == 0) & (d2nd == 0))
    src = np.nonzero(ok)[0]
    dst = nn[src]
    dist = d[src, dst]
    # unique destinations: keep the closest source
    order = np.lexsort((src, dist))
    _, first = np.unique(dst[order], return_index=True)
    keep = np.sort(order[first])
    src, dst, dist = src[keep], dst[keep], dist[keep]
    return MatchSet(src, dst, dist, _points(a)[src], _points(b)[dst])


# ----------------------------------------------------------- homography


@dataclass(frozen=True, eq=False)
class Homography:
    """Projective map of (x, y) pixel coordinates, ``m[2, 2] == 1``."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2]) > 1e-15:
            m = m / m[2, 2]
        if not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is not invertible")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Homography":
        return cls(np.array([[1, 0, dx], [0, 1, dy], [0, 0, 1.0]]))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def apply(self, pts) -> np.ndarray:
        return _project(self.m, np.asarray(pts, dtype=np.float64).reshape(-1, 2))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.m @ other.m)


def _project(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    q = pts @ m[:2, :2].T + m[:2, 2]
    w = pts @ m[2, :2] + m[2, 2]
    return q / w[:, None]


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(1)).mean()
    s = math.sqrt(2) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """DLT design matrix rows; works on ``(..., n, 2)`` arrays."""
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    z, o = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -o, z, z, z, u * x, u * y, u], -1)
    r2 = np.stack([z, z, z, -x, -y, -o, v * x, v * y, v], -1)
    return np.concatenate([r1, r2], axis=-2)


def fit_homography(src, dst) -> np.ndarray:
    """Normalized DLT least-squares fit (>= 4 correspondences)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    Ts, Td = _normalizer(src), _normalizer(dst)
    ns = src @ Ts[:2, :2].T + Ts[:2, 2]
    nd = dst @ Td[:2, :2].T + Td[:2, 2]
    A = _dlt_rows(ns, nd)
    _, _, vt = np.linalg.svd(A)
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(Td) @ hn @ Ts
    return m / m[2, 2]


def _transfer_errors(ms: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Symmetric transfer error ``max(|H x - x'|, |H^-1 x' - x|)`` for a stack of H."""
    with np.errstate(all="ignore"):
        inv = np.linalg.inv(ms)
        fw = np.einsum("kij,nj->kni", ms, np.c_[src, np.ones(len(src))])
        bw = np.einsum("kij,nj->kni", inv, np.c_[dst, np.ones(len(dst))])
        ef = np.hypot(fw[..., 0] / fw[..., 2] - dst[:, 0], fw[..., 1] / fw[..., 2] - dst[:, 1])
        eb = np.hypot(bw[..., 0] / bw[..., 2] - src[:, 0], bw[..., 1] / bw[..., 2] - src[:, 1])
        e = np.maximum(ef, eb)
    return np.where(np.isfinite(e), e, np.inf)


def estimate_homography(matches: MatchSet, inlier_tol: float = 2.0, max_iters: int = 2000,
                        rng_seed: int = 0, frame: int | None = None,
                        min_inlier_ratio: float = 0.3) -> tuple[Homography, np.ndarray]:
    """RANSAC over 4-point samples, then normalized-DLT refit on the inliers.

    Returns the homography mapping ``matches.src`` onto ``matches.dst`` and
    the boolean inlier mask.
    """
    src, dst = matches.src, matches.dst
    n = len(src)
    if n < 4:
        raise RegistrationError(f"{n} matches, at least 4 are required", frame)
    rng = np.random.default_rng(rng_seed)
    samples = np.stack([rng.choice(n, 4, replace=False) for _ in range(max_iters)])
    Ts, Td = _normalizer(src), _normalizer(dst)
    ns = src @ Ts[:2, :2].T + Ts[:2, 2]
    nd = dst @ Td[:2, :2].T + Td[:2, 2]
    best_count, best_m = -1, None
    chunk = max(1, 200_000 // max(n, 1))
    for start in range(0, max_iters, chunk):
        smp = samples[start:start + chunk]
        A = _dlt_rows(ns[smp], nd[smp])
        _, sv, vt = np.linalg.svd(A)
        hn = vt[:, -1].reshape(-1, 3, 3)
        ms = np.linalg.inv(Td)[None] @ hn @ Ts[None]
        # rank-deficient (degenerate) samples
        bad = sv[:, 7] < 1e-10 * sv[:, 0]
        counts = (_transfer_errors(ms, src, dst) <= inlier_tol).sum(axis=1)
        counts[bad] = -1
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_m = int(counts[k]), ms[k]
    if best_m is None or best_count < 4:
        raise RegistrationError("no consistent homography found", frame)
    mask = _transfer_errors(best_m[None], src, dst)[0] <= inlier_tol
    m = best_m
    for _ in range(3):
        if mask.sum() < 4:
            break
        m = fit_homography(src[mask], dst[mask])
        new = _transfer_errors(m[None], src, dst)[0] <= inlier_tol
        if np.array_equal(new, mask):
            break
        mask = new
    if mask.mean() < min_inlier_ratio:
        raise RegistrationError(f"inlier ratio {mask.mean():.2f} below {min_inlier_ratio}", frame)
    try:
        return Homography(m), mask
    except ValueError as exc:
        raise RegistrationError(str(exc), frame) from exc


def refine_homography(frame, reference, h: Homography, iters: int = 10, step: int = 2,
                      tol: float = 1e-4) -> Homography:
    """Gauss-Newton photometric refinement of ``h`` (frame -> reference).

    Minimizes ``sum (frame(h^-1 x) - reference(x))^2`` over reference pixels
    whose preimage is inside the frame, sampled every ``step`` pixels.  The
    result is returned only if it lowers the residual; otherwise ``h``.
    """
    a = as_planar(frame).luma()
    ref = as_planar(reference).luma()
    H, W = ref.shape
    coef = ndimage.spline_filter(a, order=3, mode="mirror")
    gy, gx = np.gradient(a)
    yy, xx = np.mgrid[step // 2:H:step, step // 2:W:step]
    x, y = xx.ravel().astype(np.float64), yy.ravel().astype(np.float64)
    target = ref[yy, xx].ravel()
    # work in centered, unit-scale coordinates for conditioning
    s = 2.0 / max(H, W)
    T = np.array([[s, 0, -s * (W - 1) / 2], [0, s, -s * (H - 1) / 2], [0, 0, 1.0]])
    Ti = np.linalg.inv(T)
    xn, yn = x * s + T[0, 2], y * s + T[1, 2]

    def residual(g):
        m = Ti @ g @ T
        p = _project(m, np.stack([x, y], 1))
        inside = (p[:, 0] >= 0) & (p[:, 0] <= a.shape[1] - 1) & (p[:, 1] >= 0) & (p[:, 1] <= a.shape[0] - 1)
        c = np.stack([p[:, 1], p[:, 0]])
        val = ndimage.map_coordinates(coef, c, order=3, mode="mirror", prefilter=False)
        return val - target, inside, c

    def cost(g):
        r, inside, _ = residual(g)
        return float(np.mean(r[inside] ** 2)) if inside.mean() > 0.3 else np.inf

    g = T @ np.linalg.inv(h.m) @ Ti
    g = g / g[2, 2]
    start = best = cost(g)
    g_best = g
    for _ in range(iters):
        r, inside, c = residual(g)
        if inside.mean() <= 0.3:
            break
        ix = ndimage.map_coordinates(gx, c, order=1, mode="nearest") / s
        iy = ndimage.map_coordinates(gy, c, order=1, mode="nearest") / s
        den = g[2, 0] * xn + g[2, 1] * yn + 1.0
        u = (g[0, 0] * xn + g[0, 1] * yn + g[0, 2]) / den
        v = (g[1, 0] * xn + g[1, 1] * yn + g[1, 2]) / den
        J = np.stack([ix * xn, ix * yn, ix, iy * xn, iy * yn, iy,
                      -(ix * u + iy * v) * xn, -(ix * u + iy * v) * yn], 1) / den[:, None]
        J, rr = J[inside], r[inside]
        try:
            d = np.linalg.solve(J.T @ J + 1e-9 * np.eye(8), -J.T @ rr)
        except np.linalg.LinAlgError:
            break
        g = g + np.append(d, 0.0).reshape(3, 3)
        c_new = cost(g)
        if c_new < best:
            best, g_best = c_new, g
        if np.max(np.abs(d)) < tol:
            break
    if not best < start:
        return h
    try:
        return Homography(np.linalg.inv(Ti @ g_best @ T))
    except ValueError:
        return h


# ------------------------------------------------------------ resampling


def warp_image(image, h: Homography, out_size: tuple[int, int] | None = None) -> tuple[PlanarImage, np.ndarray]:
    """Resample so that ``out(h(x)) = image(x)`` (cubic spline, inverse mapping).

    ``out_size`` is ``(height, width)``; returns the warped image and a
    boolean mask of output pixels whose preimage lies inside the source.
    """
    img = as_planar(image)
    H, W = out_size if out_size is not None else img.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    pts = np.stack([xx.ravel(), yy.ravel()], 1)
    src = _project(np.linalg.inv(h.m), pts)
    sx, sy = src[:, 0], src[:, 1]
    tol = 1e-6
    valid = (sx >= -tol) & (sx <= img.width - 1 + tol) & (sy >= -tol) & (sy <= img.height - 1 + tol)
    coords = np.stack([sy, sx])
    out = np.stack([
        ndimage.map_coordinates(img.plane(c), coords, order=3, mode="mirror").reshape(H, W)
        for c in range(img.channels)], axis=-1)
    return PlanarImage(out), valid.reshape(H, W)


def largest_rectangle(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Largest axis-aligned all-True rectangle ``(row0, col0, row1, col1)``."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    heights = np.zeros(w, dtype=int)
    best, rect = 0, (0, 0, 0, 0)
    for r in range(h):
        heights = np.where(mask[r], heights + 1, 0)
        stack: list[int] = []
        for c in range(w + 1):
            cur = heights[c] if c < w else 0
            while stack and heights[stack[-1]] >= cur:
                top = stack.pop()
                left = stack[-1] + 1 if stack else 0
                area = heights[top] * (c - left)
                if area > best:
                    best = int(area)
                    rect = (int(r - heights[top] + 1), left, r + 1, c)
            stack.append(c)
    return rect


# ----------------------------------------------------------------- burst


@dataclass(frozen=True)
class RegistrationParams:
    sigma_min: float = 1.8
    ratio: float = 0.8
    ransac_tol: float = 2.0
    ransac_iters: int = 2000
    seed: int = 0
    skip_unregistered: bool = False
    photometric_refine: bool = True


@dataclass
class RegisteredBurst:
    frames: list[PlanarImage]
    homographies: list[Homography]
    mask: np.ndarray
    crop: tuple[int, int, int, int]
    indices: list[int]
    skipped: list[int] = field(default_factory=list)

    def cropped(self) -> list[PlanarImage]:
        return [f.crop(self.crop) for f in self.frames]


def frame_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


def _align_one(frame: PlanarImage, reference: PlanarImage, ref_feats, index: int,
               params: RegistrationParams):
    shape = reference.shape
    try:
        feats = detect_features(frame, params.sigma_min)
        ms = match_features(feats, ref_feats, params.ratio)
        h, _ = estimate_homography(ms, params.ransac_tol, params.ransac_iters,
                                   frame_seed(params.seed, index), frame=index)
        if params.photometric_refine:
            h = refine_homography(frame, reference, h)
    except RegistrationError as exc:
        return None, None, exc
    warped, valid = warp_image(frame, h, shape)
    return h, (warped, valid), None


def register_burst(frames: Sequence, params: RegistrationParams | None = None,
                   threads: int = 1) -> RegisteredBurst:
    """Align frames 1..M-1 onto frame 0.

    The common validity mask is the intersection of all per-frame masks; the
    largest rectangle inside it is reported in ``crop`` but not applied.
    Frames are processed independently (``threads`` workers), each with its
    own seeded RNG, so the result does not depend on the thread count.
    """
    params = params or RegistrationParams()
    imgs = [as_planar(f) for f in frames]
    if not imgs:
        raise ValueError("empty burst")
    shape = imgs[0].shape
    for i, im in enumerate(imgs):
        if im.shape != shape or im.channels != imgs[0].channels:
            raise ValueError(f"frame {i} differs in dimensions from frame 0")
    out, homs, idx, skipped = [imgs[0]], [Homography.identity()], [0], []
    mask = np.ones(shape, dtype=bool)
    if len(imgs) > 1:
        ref = detect_features(imgs[0], params.sigma_min)
        jobs = [(imgs[i], imgs[0], ref, i, params) for i in range(1, len(imgs))]
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(lambda a: _align_one(*a), jobs))
        else:
            results = [_align_one(*a) for a in jobs]
        for i, (h, warp, err) in enumerate(results, start=1):
            if err is not None:
                if params.skip_unregistered:
                    skipped.append(i)
                    continue
                raise err
            out.append(warp[0])
            homs.append(h)
            idx.append(i)
            mask &= warp[1]
    return RegisteredBurst(out, homs, mask, largest_rectangle(mask), idx, skipped)


def corner_error(estimated: Homography, truth: Homography, shape: tuple[int, int]) -> float:
    """Max displacement between the two maps over the image corners."""
    h, w = shape
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
    return float(np.max(np.hypot(*(estimated.apply(corners) - truth.apply(corners)).T)))
