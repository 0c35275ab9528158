import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fba import core
from fba.core import (
    EPS,
    EmptyAccumulatorError,
    FbaAccumulator,
    FbaConfig,
    accumulate,
    burst_spectra,
    central_concentration,
    cosine_taper,
    equivalent_psf,
    fba,
    fba_sweep,
    finalize,
    fourier_weights,
    frame_contributions,
    smooth_magnitude,
    smoothing_sigma,
)
from fba.image import MagnitudeMap, PlanarImage, Spectrum, gaussian_blur
from fba.shake import convolve_periodic


# ---------------------------------------------------------------- oracles


def periodic_smooth_oracle(m, sigma):
    """Circular convolution by explicit rolls with the truncated Gaussian."""
    if sigma == 0:
        return m.copy()
    r = int(np.ceil(4 * sigma))
    x = np.arange(-r, r + 1)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    out = np.zeros_like(m)
    for i, dy in enumerate(x):
        for j, dx in enumerate(x):
            out += g[i] * g[j] * np.roll(m, (dy, dx), axis=(0, 1))
    return out


def direct_fba(frames, p, ks=50.0, scale=1.0, max_pool=False):
    """Weighted Fourier average evaluated in one pass over full spectra."""
    arrs = [np.asarray(f.data if isinstance(f, PlanarImage) else f, float) for f in frames]
    arrs = [a[..., None] if a.ndim == 2 else a for a in arrs]
    h, w, c = arrs[0].shape
    specs = [np.fft.fft2(a, axes=(0, 1), norm="ortho") for a in arrs]
    sigma = scale * min(h, w) / ks
    mags = [periodic_smooth_oracle(np.abs(s).mean(axis=2), sigma) for s in specs]
    mags = np.maximum(np.stack(mags), 1e-12)
    if max_pool:
        wts = (mags >= mags.max(0) * (1 - 1e-9)).astype(float)
    else:
        wts = mags ** p
    wts /= wts.sum(0)
    acc = sum(wt[..., None] * s for wt, s in zip(wts, specs))
    return np.fft.ifft2(acc, axes=(0, 1), norm="ortho").real


def rand_frames(rng, n=5, shape=(64, 64, 3)):
    return [PlanarImage(rng.random(shape)) for _ in range(n)]


def rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


# ------------------------------------------------------------- weights


class TestFourierWeights:
    def test_p0_uniform_exact(self, rng):
        mags = [rng.random((6, 7)) for _ in range(5)]
        for w in fourier_weights(mags, p=0):
            assert np.all(w == 0.2)

    def test_direct_substitution(self):
        w = fourier_weights([np.array([[2.0]]), np.array([[1.0]])], p=1)
        assert w[0][0, 0] == pytest.approx(2 / 3)
        assert w[1][0, 0] == pytest.approx(1 / 3)

    def test_max_pool_ties(self):
        w = fourier_weights([np.array([[3.0]]), np.array([[3.0]]), np.array([[1.0]])], max_pool=True)
        assert [x[0, 0] for x in w] == [0.5, 0.5, 0.0]

    def test_all_zero_bin_uniform(self):
        w = fourier_weights([np.zeros((2, 2))] * 4, p=11)
        assert all(np.all(x == 0.25) for x in w)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fourier_weights([np.ones((2, 2)), np.ones((2, 3))])

    def test_empty(self):
        with pytest.raises(ValueError):
            fourier_weights([])

    def test_accepts_maps_and_spectra(self):
        m = MagnitudeMap(np.ones((2, 2)))
        s = Spectrum(np.full((2, 2), 2.0 + 0j))
        w = fourier_weights([m, s], p=1)
        assert np.allclose(w[1], 2 / 3)

    def test_huge_p_no_overflow(self, rng):
        mags = [rng.random((8, 8)) * 1e3 + 1 for _ in range(3)]
        w = fourier_weights(mags, p=1e4)
        assert all(np.all(np.isfinite(x)) for x in w)

    @given(arrays(np.float64, (4, 3, 3), elements=st.floats(0, 100)), st.floats(0, 60), st.booleans())
    def test_normalized(self, mags, p, mp):
        w = np.stack(fourier_weights(list(mags), p=p, max_pool=mp))
        assert np.all(w >= 0)
        assert np.max(np.abs(w.sum(axis=0) - 1)) <= 1e-12

    @given(arrays(np.float64, (3, 2, 2), elements=st.floats(1e-3, 10)), st.floats(0, 30), st.floats(1e-3, 1e3))
    def test_ratio_invariant(self, mags, p, alpha):
        a = np.stack(fourier_weights(list(mags), p=p))
        b = np.stack(fourier_weights(list(alpha * mags), p=p))
        assert np.allclose(a, b, atol=1e-12)


class TestSmoothing:
    def test_sigma_formula(self):
        assert smoothing_sigma((200, 300), 50, 1) == 4.0
        assert smoothing_sigma((200, 300), 50, 3) == 12.0

    def test_zero_spectrum(self):
        out = smooth_magnitude(Spectrum(np.zeros((16, 16), complex)))
        assert np.all(out.values == 0)

    def test_constant_unchanged(self):
        out = smooth_magnitude(np.full((40, 40), 1.5), ks=10)
        assert np.allclose(out.values, 1.5, atol=1e-14)

    def test_scale_zero_is_raw(self, rng):
        x = rng.random((12, 12))
        assert np.array_equal(smooth_magnitude(x, smoothing_scale=0).values, x)

    @pytest.mark.parametrize("dims,ks", [((32, 32), 10.0), ((30, 45), 12.0)])
    def test_matches_roll_oracle(self, rng, dims, ks):
        x = rng.random(dims)
        out = smooth_magnitude(x, dims, ks=ks).values
        assert np.max(np.abs(out - periodic_smooth_oracle(x, min(dims) / ks))) < 1e-12


# ---------------------------------------------------------- accumulator


class TestAccumulator:
    def test_single_frame_reproduced(self, rng):
        f = rand_frames(rng, 1)[0]
        assert rmse(fba([f], FbaConfig(p=11)).data, f.data) < 1e-9

    @pytest.mark.parametrize("cfg", [FbaConfig(p=0), FbaConfig(p=3), FbaConfig(p=11),
                                     FbaConfig(max_pool=True), FbaConfig(p=11, smoothing_scale=0)])
    def test_identical_copies(self, rng, cfg):
        f = rand_frames(rng, 1, (32, 40, 3))[0]
        assert rmse(fba([f] * 6, cfg).data, f.data) < 1e-9

    @pytest.mark.parametrize("p,scale", [(0, 1), (3, 1), (11, 1), (11, 0), (11, 3), (24, 6)])
    def test_streaming_matches_direct(self, rng, p, scale):
        frames = rand_frames(rng)
        out = fba(frames, FbaConfig(p=p, smoothing_scale=scale)).data
        assert np.max(np.abs(out - direct_fba(frames, p, scale=scale))) <= 1e-12

    @pytest.mark.parametrize("shape", [(33, 47, 1), (20, 31, 3), (17, 16, 1)])
    def test_odd_shapes_match_direct(self, rng, shape):
        frames = rand_frames(rng, 4, shape)
        out = fba(frames, FbaConfig(p=7, ks=5)).data
        assert np.max(np.abs(out - direct_fba(frames, 7, ks=5))) <= 1e-12

    def test_max_pool_matches_direct(self, rng):
        frames = rand_frames(rng, 4, (24, 24, 1))
        out = fba(frames, FbaConfig(max_pool=True)).data
        assert np.max(np.abs(out - direct_fba(frames, 0, max_pool=True))) <= 1e-12

    def test_merge_order_independent(self, rng):
        frames = rand_frames(rng)
        cfg = FbaConfig(p=11)

        def part(fs):
            acc = FbaAccumulator.like(frames[0], cfg)
            for f in fs:
                acc.add(f)
            return acc

        a = part(frames[:2]).merge(part(frames[2:])).finalize().data
        b = part(frames[3:]).merge(part(frames[:3])).finalize().data
        c = part(frames).finalize().data
        assert np.max(np.abs(a - b)) <= 1e-12 and np.max(np.abs(a - c)) <= 1e-12

    def test_merge_with_empty(self, rng):
        frames = rand_frames(rng, 2)
        acc = FbaAccumulator.like(frames[0])
        for f in frames:
            acc.add(f)
        empty = FbaAccumulator.like(frames[0])
        a = acc.merge(empty).finalize().data
        b = empty.merge(acc).finalize().data
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_merge_mismatch(self, rng):
        a = FbaAccumulator((8, 8), 1)
        with pytest.raises(ValueError):
            a.merge(FbaAccumulator((8, 9), 1))
        with pytest.raises(ValueError):
            a.merge(FbaAccumulator((8, 8), 1, FbaConfig(p=3)))

    def test_permutation_invariance(self, rng):
        frames = rand_frames(rng)
        a = fba(frames).data
        b = fba(frames[::-1]).data
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_intensity_equivariance(self, rng):
        frames = rand_frames(rng, 4, (32, 32, 1))
        a = fba(frames).data
        b = fba([PlanarImage(3.7 * f.data) for f in frames]).data
        assert np.max(np.abs(b - 3.7 * a)) <= 1e-9

    def test_p0_is_arithmetic_mean(self, rng):
        frames = rand_frames(rng)
        mean = np.mean([f.data for f in frames], axis=0)
        assert np.max(np.abs(fba(frames, FbaConfig(p=0)).data - mean)) <= 1e-9

    def test_weight_sum_positive(self, rng):
        acc = FbaAccumulator.like(rand_frames(rng, 1)[0])
        for f in rand_frames(rng, 3):
            accumulate(acc, f)
        assert np.all(acc.weight_sum > 0) and acc.frames_seen == 3

    def test_empty_finalize(self):
        with pytest.raises(EmptyAccumulatorError):
            finalize(FbaAccumulator((4, 4), 1))
        with pytest.raises(EmptyAccumulatorError):
            fba([])

    def test_dimension_mismatch(self, rng):
        acc = FbaAccumulator((8, 8), 3)
        with pytest.raises(ValueError):
            acc.add(np.zeros((8, 9, 3)))
        with pytest.raises(ValueError):
            acc.add(np.zeros((8, 8)))

    def test_config_mismatch(self, rng):
        acc = FbaAccumulator((8, 8), 1, FbaConfig(p=2))
        with pytest.raises(ValueError):
            accumulate(acc, np.zeros((8, 8)), FbaConfig(p=3))

    def test_all_black_burst(self):
        out = fba([np.zeros((16, 16))] * 3).data
        assert np.all(out == 0)

    def test_huge_p_is_finite(self, rng):
        frames = [PlanarImage(100 * rng.random((16, 16))) for _ in range(4)]
        out = fba(frames, FbaConfig(p=1e4)).data
        assert np.all(np.isfinite(out))

    def test_imag_residue_small(self, rng):
        acc = FbaAccumulator.like(rand_frames(rng, 1, (16, 16, 1))[0])
        for f in rand_frames(rng, 3, (16, 16, 1)):
            acc.add(f)
        acc.finalize()
        assert acc.imag_residue < 1e-12

    def test_dirac_blur_recovers_truth(self, scene128):
        assert rmse(fba([scene128] * 4, FbaConfig(p=17)).data, scene128.data) < 1e-6

    def test_orthogonal_motion_beats_average(self, scene128):
        kh = np.zeros((15, 15))
        kh[7, :] = 1 / 15
        kv = kh.T.copy()
        frames = [PlanarImage(convolve_periodic(scene128, k)) for k in (kh, kv)]
        e11 = rmse(fba(frames, FbaConfig(p=11)).data, scene128.data)
        e0 = rmse(fba(frames, FbaConfig(p=0)).data, scene128.data)
        assert e11 < e0

    def test_config_validation(self):
        for bad in (dict(p=-1), dict(ks=0), dict(smoothing_scale=-1), dict(taper=-2)):
            with pytest.raises(ValueError):
                FbaConfig(**bad)


class TestSweep:
    def test_sweep_matches_single_runs(self, rng):
        frames = rand_frames(rng, 4, (24, 30, 3))
        spectra, mags = burst_spectra(frames)
        ps = (0.0, 2.0, 11.0, 40.0)
        outs = fba_sweep(spectra, mags, (24, 30), ps)
        for p, o in zip(ps, outs):
            assert np.max(np.abs(o - fba(frames, FbaConfig(p=p)).data)) <= 1e-12

    def test_sweep_max_pool(self, rng):
        frames = rand_frames(rng, 4, (16, 16, 1))
        spectra, mags = burst_spectra(frames)
        out = fba_sweep(spectra, mags, (16, 16), [0.0], max_pool=True)[0]
        assert np.max(np.abs(out - fba(frames, FbaConfig(max_pool=True)).data)) <= 1e-12


class TestTaper:
    def test_width_zero_identity(self, rng):
        x = rng.random((8, 8, 1))
        assert cosine_taper(x, 0) is x

    def test_constant_unchanged_and_interior_kept(self, rng):
        x = np.full((40, 40, 1), 0.3)
        assert np.allclose(cosine_taper(x, 8), 0.3)
        y = rng.random((40, 40, 1))
        t = cosine_taper(y, 8)
        assert np.array_equal(t[8:32, 8:32], y[8:32, 8:32])
        # the outermost ring is close to the mean
        assert np.max(np.abs(t[0] - y.mean())) < np.max(np.abs(y[0] - y.mean())) * 0.05


class TestContributions:
    def test_sum_to_output(self, rng):
        frames = rand_frames(rng, 4, (32, 33, 3))
        cfg = FbaConfig(p=11)
        contribs, shares = frame_contributions(frames, cfg)
        total = np.sum([c.data for c in contribs], axis=0)
        assert np.max(np.abs(total - fba(frames, cfg).data)) <= 1e-9
        assert shares.sum() == pytest.approx(1.0)

    def test_identical_frames(self, rng):
        f = rand_frames(rng, 1, (16, 16, 1))[0]
        contribs, shares = frame_contributions([f] * 4)
        for c in contribs:
            assert np.max(np.abs(c.data - f.data / 4)) < 1e-12
        assert np.allclose(shares, 0.25)

    def test_sharp_frame_dominates(self, scene128):
        blurred = PlanarImage(gaussian_blur(scene128.data, 4.0, mode="wrap"))
        _, shares = frame_contributions([scene128, blurred], FbaConfig(p=11))
        assert shares[0] > 0.5

    def test_weight_maps_normalized(self, rng):
        w = np.stack(core.weight_maps(rand_frames(rng, 3, (16, 20, 1))))
        assert np.max(np.abs(w.sum(0) - 1)) < 1e-12


# ------------------------------------------------------ equivalent PSF


def random_kernel(rng, size=15):
    k = np.zeros((size, size))
    idx = rng.integers(0, size, (rng.integers(1, 6), 2))
    np.add.at(k, (idx[:, 0], idx[:, 1]), rng.random(len(idx)))
    return k / k.sum()


class TestEquivalentPsf:
    def test_identical_kernels(self, rng):
        k = random_kernel(rng)
        psf = equivalent_psf([k] * 5, p=11, grid=15)
        assert np.max(np.abs(psf.kernel - k)) < 1e-12

    def test_p0_is_mean(self, rng):
        ks = [random_kernel(rng) for _ in range(4)]
        psf = equivalent_psf(ks, p=0, grid=15)
        assert np.max(np.abs(psf.kernel - np.mean(ks, axis=0))) < 1e-9

    def test_mass_one(self, rng):
        ks = [random_kernel(rng) for _ in range(6)]
        for p in (0, 3, 11, 50):
            assert equivalent_psf(ks, p=p).mass == pytest.approx(1.0, abs=1e-6)
        assert equivalent_psf(ks, max_pool=True).mass == pytest.approx(1.0, abs=1e-6)

    def test_dirac(self):
        d = np.zeros((41, 41))
        d[20, 20] = 1.0
        psf = equivalent_psf([d], p=11)
        assert np.max(np.abs(psf.kernel - d)) < 1e-12
        assert psf.concentration == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            equivalent_psf([])

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            equivalent_psf([np.ones((4, 4)) / 16])

    def test_smaller_kernels_embedded(self, rng):
        k = random_kernel(rng, 9)
        psf = equivalent_psf([k], grid=41)
        assert psf.kernel.shape == (41, 41)
        assert np.allclose(psf.kernel[16:25, 16:25], k)

    def test_concentration_definition(self):
        k = np.zeros((5, 5))
        k[2, 2], k[0, 0] = 0.5, 0.5
        assert central_concentration(k) == pytest.approx(0.5)

    def test_sharp_plus_blurry_concentrates(self):
        d = np.zeros((21, 21))
        d[10, 10] = 1.0
        box = np.zeros((21, 21))
        box[10, 3:18] = 1 / 15
        c0 = equivalent_psf([d, box], p=0, grid=21).concentration
        c11 = equivalent_psf([d, box], p=11, grid=21).concentration
        assert c11 > c0


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([8, 15, 16, 31]))
def test_kernels_do_not_amplify_spectrum(seed, size):
    k = random_kernel(np.random.default_rng(seed), size)
    assert np.max(np.abs(np.fft.fft2(k))) <= 1 + 1e-9
