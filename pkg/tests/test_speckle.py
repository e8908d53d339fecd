import math

import numpy as np
import pytest

from cpisim import ConfigError, PreconditionError, SampledGrid, SourceProfile, make_slit_mask
from cpisim.analysis import visibility
from cpisim.engine import CorrelationTensor, ImageProfile, gamma_map, ghost_image, refocus
from cpisim.speckle import (FrameStack, PropagationPlan, bin_grid, bin_pixels, default_lowpass,
                            estimate_gamma, fine_grid, frame_rng, fresnel_max_distance,
                            fresnel_propagate, fresnel_window, g2_zero, generate_frames,
                            postprocess, sample_source_field)

LAM = 532e-9


def gaussian_beam(x, w0, z, lam=LAM):
    # paraxial Gaussian beam, 1-D, unit power at z = 0
    q0 = -1j * math.pi * w0**2 / lam
    q = q0 + z
    k = 2 * math.pi / lam
    amp = (2 / (math.pi * w0**2)) ** 0.25
    return amp * np.sqrt(q0 / q) * np.exp(1j * k * x**2 / (2 * q))


def toy_stack(cfg, a, b, seed=0):
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    return FrameStack(a, b, SampledGrid.centered(a.shape[1], 1e-5), SampledGrid.centered(b.shape[1], 1e-4),
                      seed, np.arange(a.shape[0]), cfg, "toy")


# -- source ----------------------------------------------------------------------


def test_frame_rng_deterministic_and_distinct():
    a = frame_rng(7, 3).standard_normal(5)
    np.testing.assert_array_equal(a, frame_rng(7, 3).standard_normal(5))
    assert not np.allclose(a, frame_rng(7, 4).standard_normal(5))
    assert not np.allclose(a, frame_rng(8, 3).standard_normal(5))


def test_source_field_statistics():
    prof = SourceProfile(1e-3)
    grid = SampledGrid.covering(3e-3, 50e-6)
    e = sample_source_field(prof, grid, np.random.default_rng(1), size=4000)
    power = np.abs(e) ** 2
    expect = prof.intensity_1d(grid.points) / grid.spacing
    # |E|^2 is exponential: its standard error equals mean / sqrt(N)
    se = expect / math.sqrt(e.shape[0])
    assert np.all(np.abs(power.mean(axis=0) - expect) < 4 * se + 1e-300)
    assert np.mean(np.abs(power.mean(axis=0) - expect) < 3 * se) > 0.99
    # neighbouring cells are uncorrelated, and E is circular (<E E> = 0)
    mid = grid.n // 2
    c = np.mean(np.conj(e[:, mid]) * e[:, mid + 1]) / expect[mid]
    assert abs(c) < 4 / math.sqrt(e.shape[0])
    assert abs(np.mean(e[:, mid] ** 2)) / expect[mid] < 4 / math.sqrt(e.shape[0])


# -- propagation -----------------------------------------------------------------


def test_fresnel_identity_and_inverse():
    rng = np.random.default_rng(0)
    u = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    np.testing.assert_array_equal(fresnel_propagate(u, 0.0, LAM, 1e-6), u)
    back = fresnel_propagate(fresnel_propagate(u, 1e-4, LAM, 1e-6), -1e-4, LAM, 1e-6)
    np.testing.assert_allclose(back, u, atol=1e-12)


def test_fresnel_unitary():
    rng = np.random.default_rng(2)
    u = rng.standard_normal(1024) + 1j * rng.standard_normal(1024)
    v = fresnel_propagate(u, 1e-3, LAM, 1e-6)
    assert abs(np.sum(np.abs(v) ** 2) / np.sum(np.abs(u) ** 2) - 1) < 1e-10


def test_fresnel_gaussian_beam():
    h, n, w0, z = 1e-6, 4096, 40e-6, 5e-3
    x = SampledGrid.centered(n, h).points
    out = fresnel_propagate(gaussian_beam(x, w0, 0.0), z, LAM, h)
    ref = gaussian_beam(x, w0, z)
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) < 1e-3


def test_fresnel_nyquist_error():
    zmax = fresnel_max_distance(256, 1e-6, LAM)
    assert zmax == pytest.approx(256e-12 / LAM)
    with pytest.raises(PreconditionError, match="max valid z"):
        fresnel_propagate(np.ones(256), 2 * zmax, LAM, 1e-6)


def test_fresnel_window_matches_gaussian_beam():
    w0, z = 100e-6, 0.2
    gin = SampledGrid.covering(6 * w0, 2e-6)
    gout = SampledGrid.covering(2.5e-3, 3e-6)
    out = fresnel_window(gaussian_beam(gin.points, w0, 0.0), gin, gout, z, LAM)
    ref = gaussian_beam(gout.points, w0, z)
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) < 1e-3


def test_fresnel_window_matches_transfer_function():
    h, n, z = 1e-6, 8192, 5e-3
    g = SampledGrid.centered(n, h)
    u = gaussian_beam(g.points, 30e-6, 0.0) * np.exp(1j * 2e4 * g.points)
    tf = fresnel_propagate(u, z, LAM, h)
    sl = slice(n // 2 - 200, n // 2 + 201)
    gwin = SampledGrid.centered(401, h)
    win = fresnel_window(u[sl], gwin, gwin, z, LAM)
    assert np.max(np.abs(win - tf[sl])) / np.max(np.abs(tf)) < 1e-3


def test_fresnel_window_preconditions():
    g = SampledGrid.centered(64, 1e-5)
    with pytest.raises(ConfigError):
        fresnel_window(np.ones(64), g, g, 0.0, LAM)
    with pytest.raises(PreconditionError, match="sampling band"):
        fresnel_window(np.ones(64), g, SampledGrid.centered(64, 1e-3), 1e-3, LAM)


def test_plan_from_scenario(cfg):
    plan = PropagationPlan.from_scenario(cfg)
    assert 1 / plan.l1 + 1 / plan.l2 == pytest.approx(1 / plan.focal, rel=1e-12)
    assert plan.magnification == pytest.approx(abs(cfg.magnification))
    assert plan.spacing == pytest.approx(cfg.pixel_dx / 3)
    with pytest.raises(ConfigError):
        PropagationPlan.from_scenario(cfg, oversample=2.5)


def test_plan_rejects_non_imaging_lens(cfg):
    plan = PropagationPlan.from_scenario(cfg)
    with pytest.raises(ConfigError):
        PropagationPlan(plan.wavelength, plan.spacing, plan.z_a, plan.z_b, plan.l1, plan.l2 * 1.1,
                        plan.focal, plan.aperture, plan.source_half_width)


# -- frame stacks and estimator ------------------------------------------------------


def test_frame_stack_validation(cfg):
    ok = toy_stack(cfg, np.ones((3, 4)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        ok.intensities_a[0, 0] = 2
    with pytest.raises(PreconditionError):
        toy_stack(cfg, -np.ones((3, 4)), np.ones((3, 2)))
    with pytest.raises(ConfigError):
        toy_stack(cfg, np.ones((3, 4)), np.ones((2, 2)))
    with pytest.raises(ConfigError):
        ok.extended(ok)
    assert ok.head(2).n_frames == 2


def test_estimator_matches_numpy_cov(cfg):
    rng = np.random.default_rng(3)
    a = rng.exponential(size=(500, 6))
    b = a[:, :3] + rng.exponential(size=(500, 3))
    est = estimate_gamma(toy_stack(cfg, a, b), chunk=64).values
    ref = np.cov(a.astype(np.float32).astype(float), b.astype(np.float32).astype(float),
                 rowvar=False)[:6, 6:]
    np.testing.assert_allclose(est, ref, rtol=1e-10, atol=1e-12)


def test_estimator_constant_b_is_zero(cfg):
    rng = np.random.default_rng(4)
    est = estimate_gamma(toy_stack(cfg, rng.exponential(size=(200, 5)), np.full((200, 3), 2.5)))
    assert np.all(est.values == 0)
    assert est.provenance == "monte-carlo"


def test_estimator_swap_transposes(cfg):
    rng = np.random.default_rng(5)
    s = toy_stack(cfg, rng.exponential(size=(300, 5)), rng.exponential(size=(300, 4)))
    np.testing.assert_allclose(estimate_gamma(s.swapped()).values, estimate_gamma(s).values.T,
                               rtol=1e-12, atol=1e-15)


def test_estimator_workers_bit_identical(cfg):
    rng = np.random.default_rng(6)
    s = toy_stack(cfg, rng.exponential(size=(3000, 7)), rng.exponential(size=(3000, 5)))
    one = estimate_gamma(s, chunk=256, workers=1).values
    many = estimate_gamma(s, chunk=256, workers=4).values
    assert np.array_equal(one, many)


def test_estimator_warns_for_few_frames(cfg):
    with pytest.warns(RuntimeWarning, match="high-variance"):
        estimate_gamma(toy_stack(cfg, np.ones((10, 2)), np.ones((10, 2))))


def test_g2_zero_exponential():
    i = np.random.default_rng(8).exponential(size=200000)
    assert g2_zero(i) == pytest.approx(2.0, abs=0.03)
    assert g2_zero(np.ones(10)) == 1.0


# -- post-processing and binning ---------------------------------------------------------


def test_postprocess_identity_without_filtering():
    g = SampledGrid.centered(128, 1e-6)
    prof = ImageProfile(np.exp(-g.points**2 / 2e-10), g, "p")
    out = postprocess(prof, None, threshold=0.0)
    np.testing.assert_allclose(out.values, prof.values, atol=1e-14)
    with pytest.raises(ConfigError):
        postprocess(prof, threshold=1.0)
    with pytest.raises(ConfigError):
        postprocess(prof, -1.0)


def test_postprocess_reduces_white_noise():
    # noise sampled at 0.25 um, well above the 200 um design period
    g = SampledGrid.centered(16384, 0.25e-6)
    clean = 1 + 0.5 * np.cos(2 * math.pi * g.points / 200e-6)
    noisy = clean + np.random.default_rng(9).normal(0, 0.3, g.n)
    sigma = 2 / 200e-6
    out = postprocess(ImageProfile(noisy, g, "p"), sigma, threshold=0.0).values
    ref = postprocess(ImageProfile(clean, g, "p"), sigma, threshold=0.0).values
    err_in = np.sqrt(np.mean((noisy - clean) ** 2))
    err_out = np.sqrt(np.mean((out - ref) ** 2))
    assert err_out * 10 <= err_in


def test_postprocess_tensor_axis_a_only(cfg):
    ga, gb = SampledGrid.centered(32, 1e-5), SampledGrid.centered(16, 1e-4)
    v = np.random.default_rng(10).exponential(size=(32, 16))
    t = CorrelationTensor(v, ga, gb, cfg)
    out = postprocess(t, 1e3, threshold=0.0).values
    # filtering along a only keeps the S_b-summed profile of each row mean-preserving
    np.testing.assert_allclose(out.sum(axis=0), v.sum(axis=0), rtol=0.35)
    np.testing.assert_allclose(out.mean(), v.mean(), rtol=1e-10)
    assert np.all(out >= 0)


def test_default_lowpass(cfg, triple):
    assert default_lowpass(cfg, triple) == pytest.approx(2 * 0.113 / (0.092 * 198e-6))


def test_bin_pixels_examples():
    np.testing.assert_array_equal(bin_pixels(np.arange(6.0), 2), [1, 5, 9])
    frames = np.arange(12.0).reshape(2, 6)
    np.testing.assert_array_equal(bin_pixels(frames, 3, axis=1), [[3, 12], [21, 30]])
    np.testing.assert_array_equal(bin_pixels(frames, 2, axis=0), [[6, 8, 10, 12, 14, 16]])
    with pytest.warns(RuntimeWarning, match="dropping 1"):
        assert bin_pixels(np.ones(7), 2).tolist() == [2, 2, 2]
    with pytest.raises(ConfigError):
        bin_pixels(np.ones(4), 0)
    with pytest.raises(ConfigError):
        bin_pixels(np.ones(4), 5)


def test_bin_grid_centres():
    fine = fine_grid(8, 7.2e-6, 3)
    coarse = bin_grid(fine, 3)
    np.testing.assert_allclose(coarse.points, SampledGrid.centered(8, 7.2e-6).points, atol=1e-18)
    np.testing.assert_allclose(coarse.points, fine.points.reshape(8, 3).mean(axis=1), atol=1e-18)
    prof = bin_pixels(ImageProfile(np.ones(24), fine, "f"), 3)
    assert prof.grid == coarse and np.all(prof.values == 3)


# -- Monte-Carlo frames ------------------------------------------------------------------


def test_generate_frames_deterministic_and_resumable(focused, double):
    kw = dict(pixels_a=16, pixels_b=8, chunk=8)
    full = generate_frames(focused, double, n_frames=20, seed=11, **kw)
    again = generate_frames(focused, double, n_frames=20, seed=11, workers=3, **kw)
    assert np.array_equal(full.intensities_a, again.intensities_a)
    tail = generate_frames(focused, double, n_frames=7, seed=11, start=13, **kw)
    joined = full.head(13).extended(tail)
    assert np.array_equal(joined.intensities_b, full.intensities_b)
    other = generate_frames(focused, double, n_frames=20, seed=12, **kw)
    assert not np.array_equal(other.intensities_a, full.intensities_a)


def test_generate_frames_validation(cfg, double):
    with pytest.raises(ConfigError):
        generate_frames(cfg, double, n_frames=1)
    with pytest.raises(ConfigError, match="pixel_a"):
        generate_frames(cfg, double, n_frames=2, pixel_a=5e-6)
    plan = PropagationPlan.from_scenario(cfg.replace(z_b=0.1))
    with pytest.raises(ConfigError):
        generate_frames(cfg, double, plan, n_frames=2)


def test_speckle_contrast_unbinned_pixel(focused, double):
    st = generate_frames(focused, double, n_frames=3000, seed=2, pixels_a=4, pixels_b=2,
                         pixel_a=2.4e-6)
    g2 = [g2_zero(st.intensities_a[:, j]) for j in range(4)]
    assert np.mean(g2) == pytest.approx(2.0, abs=0.1)


def test_mean_sensor_b_images_the_source(cfg):
    # wide open mask: S_b sees the magnified, inverted source profile
    wide = make_slit_mask(1, 2e-3, 2e-3)
    st = generate_frames(cfg, wide, n_frames=400, seed=4, pixels_a=4, pixels_b=64)
    mean_b = st.intensities_b.mean(axis=0)
    xb = st.grid_b.points
    expect = SourceProfile(cfg.source_sigma).intensity_1d(-xb / cfg.magnification)
    c = np.sum(mean_b * expect) / np.sum(expect**2)
    assert np.sqrt(np.mean((mean_b - c * expect) ** 2)) < 0.1 * c * expect.max()


def test_ghost_peaks_from_frames(focused, double):
    st = generate_frames(focused, double, n_frames=1500, seed=5, pixels_a=128, pixels_b=64)
    ghost = ghost_image(estimate_gamma(st))
    x = ghost.x
    y = ghost.values
    for c in double.centers * focused.z_a / focused.z_b:
        sel = np.abs(x - c) < double.pitch / 2
        xp = x[sel][np.argmax(y[sel])]
        # the slit is 99 um wide: its maximum lies within the open part
        assert abs(xp - c) <= double.min_width / 2 + st.grid_a.spacing


@pytest.mark.slow
def test_measurement_b_postprocessed_visibility(cfg, triple):
    pa, pb = 256, 64
    st = generate_frames(cfg, triple, n_frames=10000, seed=21, pixels_a=pa, pixels_b=pb)
    raw = estimate_gamma(st)
    sigma = default_lowpass(cfg, triple)
    # oracle: analytic tensor integrated over the same pixels
    fa, fb = fine_grid(pa, cfg.pixel_dx, 3), fine_grid(pb, cfg.pixel_du, 30)
    fine = gamma_map(cfg, triple, fa, fb).values
    binned = fine.reshape(pa, 3, pb, 30).sum(axis=(1, 3))
    oracle = CorrelationTensor(binned, st.grid_a, st.grid_b, cfg)
    # compared like for like: the low-pass itself lowers the visibility
    for mc, ref in ((raw, oracle), (postprocess(raw, sigma), postprocess(oracle, sigma))):
        v_mc = visibility(refocus(mc), triple)
        v_ref = visibility(refocus(ref), triple)
        assert v_ref > 0.3
        assert abs(v_mc - v_ref) < 0.05
