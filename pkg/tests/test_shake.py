import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fba import shake
from fba.image import PlanarImage
from fba.shake import (
    CSV_FIELDS,
    BlurKernel,
    StudyConfig,
    TremorParams,
    center_kernel,
    convolve_periodic,
    dirac,
    read_csv,
    results_to_csv,
    run_misalignment_study,
    run_smoothing_study,
    run_study,
    shift_kernel,
    simulate_kernel,
    simulate_trajectory,
    stream,
    synthesize_burst,
)


def brute_moment(g):
    c = g.shape[0] // 2
    m = g.sum()
    mx = sum(g[i, j] * (j - c) for i in range(g.shape[0]) for j in range(g.shape[1])) / m
    my = sum(g[i, j] * (i - c) for i in range(g.shape[0]) for j in range(g.shape[1])) / m
    return np.array([mx, my])


def brute_convolve(u, k):
    h, w = u.shape
    c = k.shape[0] // 2
    out = np.zeros_like(u)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for a in range(k.shape[0]):
                for b in range(k.shape[1]):
                    if k[a, b]:
                        acc += k[a, b] * u[(y - (a - c)) % h, (x - (b - c)) % w]
            out[y, x] = acc
    return out


def kernels(n, t_exp=1 / 3, seed=0):
    p = TremorParams(t_exp=t_exp)
    return [simulate_kernel(p, stream(seed, 0, i, shake.KERNEL_STREAM)) for i in range(n)]


class TestBlurKernel:
    def test_rejects_even_and_negative(self):
        with pytest.raises(ValueError):
            BlurKernel(np.ones((4, 4)))
        with pytest.raises(ValueError):
            BlurKernel(-np.ones((3, 3)))

    def test_moments_of_offset_dirac(self):
        g = np.zeros((5, 5))
        g[2, 4] = 2.0
        k = BlurKernel(g)
        assert k.mass == 2.0
        assert np.allclose(k.first_moment, [2, 0])
        assert np.allclose(k.second_moment, 0)

    def test_normalized(self):
        k = BlurKernel(np.ones((3, 3))).normalized()
        assert k.mass == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(ValueError):
            BlurKernel(np.zeros((3, 3))).normalized()


class TestShiftCenter:
    def test_zero_shift_identity(self):
        k = kernels(1)[0]
        assert np.array_equal(shift_kernel(k, 0, 0).grid, k.grid)

    def test_half_pixel_split(self):
        k = shift_kernel(dirac(9), 1.5, 0)
        g = k.grid
        assert g[4, 5] == pytest.approx(0.5) and g[4, 6] == pytest.approx(0.5)
        assert g.sum() == pytest.approx(1.0)

    def test_shift_moves_moment(self):
        k = kernels(1)[0]
        s = shift_kernel(k, 0.3, -1.7)
        assert np.allclose(s.first_moment - k.first_moment, [0.3, -1.7], atol=1e-12)
        assert s.mass == pytest.approx(k.mass, abs=1e-12)

    def test_grid_grows_instead_of_truncating(self):
        s = shift_kernel(dirac(5), 7.25, 0)
        assert s.grid.shape[0] > 5 and s.mass == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(s.first_moment, [7.25, 0])

    def test_center_offset_dirac(self):
        g = np.zeros((9, 9))
        g[4, 6] = 1.0
        c = center_kernel(BlurKernel(g))
        assert c.grid[4, 4] == pytest.approx(1.0)
        assert np.allclose(c.first_moment, 0, atol=1e-12)

    def test_center_symmetric_gaussian_unchanged(self):
        x = np.arange(-7, 8)
        g = np.exp(-(x[:, None] ** 2 + x[None] ** 2) / 6.0)
        k = BlurKernel(g / g.sum())
        assert np.max(np.abs(center_kernel(k).grid - k.grid)) < 1e-9

    @given(st.integers(0, 2 ** 31))
    def test_center_random_kernel(self, seed):
        r = np.random.default_rng(seed)
        g = np.zeros((15, 15))
        g[r.integers(2, 13, 6), r.integers(2, 13, 6)] = r.random(6) + 0.1
        k = center_kernel(BlurKernel(g))
        assert np.linalg.norm(brute_moment(k.grid)) <= 0.05
        assert k.mass == pytest.approx(g.sum(), abs=1e-9)

    def test_center_zero_mass(self):
        with pytest.raises(ValueError):
            center_kernel(BlurKernel(np.zeros((3, 3))))

    def test_shift_draw_mean_magnitude(self):
        # |(dx, dy)| for (dx, dy) ~ N(0, I) has mean sqrt(pi / 2)
        d = [np.linalg.norm(stream(0, t, 0, shake.SHIFT_STREAM).standard_normal(2)) for t in range(20000)]
        assert np.mean(d) == pytest.approx(math.sqrt(math.pi / 2), abs=0.02)


class TestTremor:
    def test_params_validation(self):
        for bad in (dict(t_exp=1.5), dict(t_exp=-0.1), dict(band=(5, 2)), dict(amplitude=0), dict(grid=40)):
            with pytest.raises(ValueError):
                TremorParams(**bad)

    def test_trajectory_length_and_mean(self):
        p = TremorParams(t_exp=0.25)
        path = simulate_trajectory(p, stream(0, 0, 0, 0))
        assert path.shape == (501, 2)
        assert np.allclose(path.mean(axis=0), 0, atol=1e-12)

    def test_kernel_postconditions(self):
        for k in kernels(50):
            assert k.mass == pytest.approx(1.0, abs=1e-12)
            assert np.linalg.norm(k.first_moment) <= 0.05
            assert np.all(k.grid >= 0)
            assert k.grid.shape[0] >= 41

    def test_zero_exposure_is_dirac(self):
        for k in kernels(5, t_exp=0.0):
            assert np.array_equal(k.grid, dirac(41).grid)

    def test_short_exposure_near_dirac(self):
        for k in kernels(20, t_exp=1e-4):
            tv = 0.5 * np.abs(k.grid - dirac(k.grid.shape[0]).grid).sum()
            assert tv <= 1e-3

    def test_spectrum_bounded_by_mass(self):
        for k in kernels(100):
            assert np.max(np.abs(np.fft.fft2(k.grid))) <= 1 + 1e-9

    def test_support_grows_with_exposure(self):
        radii = [np.mean([k.rms_radius for k in kernels(200, t)]) for t in (1 / 10, 1 / 5, 1 / 3, 1 / 2, 2 / 3)]
        assert all(a < b for a, b in zip(radii, radii[1:]))

    def test_anisotropy(self):
        ratios = []
        for k in kernels(500):
            ev = np.linalg.eigvalsh(k.second_moment)
            ratios.append(ev[1] / max(ev[0], 1e-12))
        assert np.median(ratios) > 3

    def test_mean_diameter_near_ten(self):
        p = TremorParams()
        d = [shake.trajectory_diameter(p, stream(0, 0, i, 0)) for i in range(200)]
        assert 8 < np.mean(d) < 12

    def test_reproducible(self):
        a, b = kernels(3, seed=5), kernels(3, seed=5)
        assert all(np.array_equal(x.grid, y.grid) for x, y in zip(a, b))


class TestSynthesis:
    def test_convolution_matches_brute_force(self, rng):
        u = rng.random((32, 32))
        g = np.zeros((7, 7))
        g[rng.integers(0, 7, 5), rng.integers(0, 7, 5)] = rng.random(5)
        ours = convolve_periodic(u, g)[..., 0]
        assert np.max(np.abs(ours - brute_convolve(u, g))) <= 1e-9

    def test_large_kernel_on_small_image(self, rng):
        u = rng.random((16, 16))
        k = kernels(1)[0]
        ours = convolve_periodic(u, k)[..., 0]
        assert np.max(np.abs(ours - brute_convolve(u, k.grid))) <= 1e-9

    def test_dirac_noiseless(self, scene128):
        frames = synthesize_burst(scene128, [dirac()] * 3, 0.0, rng=np.random.default_rng(0))
        for f in frames:
            assert np.max(np.abs(f.data - scene128.data)) <= 1e-9

    def test_noise_level(self, scene128):
        k = kernels(2)
        frames = synthesize_burst(scene128, k, 0.04, rng=np.random.default_rng(3))
        for f, kk in zip(frames, k):
            resid = f.data - convolve_periodic(scene128, kk)
            assert abs(resid.std() - 0.04) <= 0.002

    def test_frames_independent_noise(self, scene128):
        frames = synthesize_burst(scene128, [dirac()] * 2, 0.04, rng=np.random.default_rng(3))
        n0, n1 = (f.data - scene128.data for f in frames)
        assert abs(np.corrcoef(n0.ravel(), n1.ravel())[0, 1]) < 0.05


# ----------------------------------------------------------- studies


@pytest.fixture(scope="module")
def tiny_gt():
    return shake.default_ground_truth(32)


def tiny(**kw):
    base = dict(M=4, trials=4, ps=(0.0, 5.0, 11.0), tremor=TremorParams(grid=21))
    base.update(kw)
    return StudyConfig(**base)


class TestStudy:
    def test_noiseless_dirac(self, tiny_gt):
        r = run_study(tiny(t_exp=0.0, s=0.0), tiny_gt)
        assert np.all(r.bias2 <= 1e-10) and np.all(np.abs(r.variance) <= 1e-10)

    def test_identity_estimator_oracle(self, tiny_gt):
        sigma, T = 0.1, 40

        def estimator(frames, cfg, t):
            r = stream(99, t, 0, 7)
            return np.stack([tiny_gt.data + sigma * r.standard_normal(tiny_gt.data.shape)] * len(cfg.ps))

        r = run_study(tiny(trials=T), tiny_gt, estimator)
        # population variance has expectation sigma^2 (T - 1) / T; bias^2 ~ sigma^2 / T
        assert np.allclose(r.variance, sigma ** 2 * (T - 1) / T, rtol=0.05)
        assert np.allclose(r.bias2, sigma ** 2 / T, rtol=0.2)

    def test_decomposition_exact(self, tiny_gt):
        r = run_study(tiny(), tiny_gt)
        assert np.allclose(r.mse, r.bias2 + r.variance, rtol=1e-12, atol=0)
        assert np.all(r.bias2_se >= 0) and np.all(r.variance_se >= 0)

    def test_needs_two_trials(self, tiny_gt):
        with pytest.raises(ValueError):
            run_study(tiny(trials=1), tiny_gt)

    def test_config_validation(self):
        for bad in (dict(M=0), dict(trials=0), dict(ps=()), dict(ps=(-1.0,)), dict(s=-1)):
            with pytest.raises(ValueError):
                tiny(**bad)

    def test_deterministic_csv(self, tiny_gt, tmp_path):
        a = results_to_csv([run_study(tiny(), tiny_gt)], tmp_path / "a.csv")
        b = results_to_csv([run_study(tiny(), tiny_gt)], tmp_path / "b.csv")
        assert a == b
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_csv_schema(self, tiny_gt, tmp_path):
        r = run_study(tiny(), tiny_gt)
        text = results_to_csv([r], tmp_path / "r.csv")
        assert text.splitlines()[0] == ",".join(CSV_FIELDS)
        rows = read_csv(tmp_path / "r.csv")
        assert len(rows) == 3
        # full double precision survives the round trip
        assert [row["mse"] for row in rows] == [float(x) for x in r.mse]
        assert rows[0]["M"] == 4 and rows[0]["trials"] == 4

    def test_seed_changes_result(self, tiny_gt):
        a = run_study(tiny(seed=0), tiny_gt)
        b = run_study(tiny(seed=1), tiny_gt)
        assert not np.array_equal(a.mse, b.mse)

    def test_misalignment_zero_matches_plain(self, tiny_gt):
        plain = run_study(tiny(), tiny_gt)
        (mis,) = run_misalignment_study(tiny(), tiny_gt, [0.0])
        assert np.array_equal(plain.mse, mis.mse)

    def test_misalignment_rows_record_epsilon(self, tiny_gt):
        res = run_misalignment_study(tiny(trials=2), tiny_gt, [0.0, 2.0])
        assert [r.config.epsilon for r in res] == [0.0, 2.0]
        assert res[1].rows()[0]["epsilon"] == 2.0

    def test_smoothing_extra_column(self, tiny_gt):
        res = run_smoothing_study(tiny(trials=2), tiny_gt, [0.0, 1.0])
        text = results_to_csv(res)
        assert text.splitlines()[0].endswith(",smoothing_scale")
        assert len(text.splitlines()) == 1 + 2 * 3

    def test_trial_burst_reproducible(self, tiny_gt):
        a = shake.trial_burst(tiny(), tiny_gt, 3)
        b = shake.trial_burst(tiny(), tiny_gt, 3)
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))

    def test_fba_estimator_shape(self, tiny_gt):
        frames = shake.trial_burst(tiny(), tiny_gt, 0)
        assert shake.fba_estimator(frames, tiny(), 0).shape == (3, 32, 32, 1)
