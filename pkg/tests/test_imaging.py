import numpy as np
import pytest

from vfcam import (ColorResponse, DesignConfig, DimensionMismatchError,
                   RasterImage, default_color_response, ground_truth,
                   make_spectrum, simulate_capture)
from vfcam.optics import PsfStack


def delta_stack(n, nchan_lam=3):
    psf = np.zeros((n, n))
    psf[n // 2, n // 2] = 1.0
    spectral = np.stack([psf] * nchan_lam)
    return PsfStack(wavelengths=np.linspace(400e-9, 700e-9, nchan_lam),
                    spectral=spectral, panchromatic=psf,
                    per_channel=np.stack([psf] * 3))


def stack_from_kernel(kern):
    s = kern / kern.sum()
    return PsfStack(wavelengths=np.array([550e-9]), spectral=s[None],
                    panchromatic=s, per_channel=np.stack([s] * 3))


def test_default_response_normalization():
    cfg = DesignConfig(spectrum=make_spectrum(13))
    resp = default_color_response(cfg)
    w = cfg.weights()
    for c in range(3):
        assert (resp.channels[c] * w).sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(resp.channels >= 0)


def test_ground_truth_flat_scene_equalizes_channels():
    cfg = DesignConfig(spectrum=make_spectrum(7))
    resp = default_color_response(cfg)
    pattern = np.random.default_rng(0).random((16, 16))
    scene = RasterImage(planes=np.stack([pattern] * 7))
    gt = ground_truth(scene, resp)
    for c in range(3):
        assert np.allclose(gt.planes[c], pattern, rtol=1e-12)


def test_ground_truth_selector_response():
    lams = np.array([450e-9, 550e-9, 650e-9])
    w = np.full(3, 1 / 3)
    q = np.zeros((3, 3))
    q[0, 2] = 3.0  # red sensitive only to 650 nm; weight-normalized
    q[1, 1] = 3.0
    q[2, 0] = 3.0
    resp = ColorResponse(wavelengths=lams, weights=w, channels=q)
    rng = np.random.default_rng(1)
    cube = rng.random((3, 8, 8))
    gt = ground_truth(RasterImage(planes=cube), resp)
    assert np.allclose(gt.planes[0], cube[2], rtol=1e-12)
    assert np.allclose(gt.planes[1], cube[1], rtol=1e-12)
    assert np.allclose(gt.planes[2], cube[0], rtol=1e-12)


def test_ground_truth_matches_per_pixel_loop():
    cfg = DesignConfig(spectrum=make_spectrum(5))
    resp = default_color_response(cfg)
    rng = np.random.default_rng(2)
    cube = rng.random((5, 6, 7))
    gt = ground_truth(RasterImage(planes=cube), resp)
    w = cfg.weights()
    for c in range(3):
        for y in range(6):
            for x in range(7):
                expect = sum(w[s] * resp.channels[c, s] * cube[s, y, x]
                             for s in range(5))
                assert gt.planes[c, y, x] == pytest.approx(expect, rel=1e-12)


def test_delta_psf_identity():
    rng = np.random.default_rng(3)
    scene = RasterImage(planes=rng.random((3, 32, 32)))
    cfg = DesignConfig(spectrum=make_spectrum(3))
    out = simulate_capture(scene, delta_stack(32), default_color_response(cfg))
    assert np.allclose(out.planes, scene.planes, atol=1e-12)


def test_uniform_scene_uniform_interior():
    n = 48
    kern = np.zeros((n, n))
    kern[20:28, 20:28] = 1.0
    stack = stack_from_kernel(kern)
    scene = RasterImage(planes=np.full((3, n, n), 0.7))
    cfg = DesignConfig(spectrum=make_spectrum(3))
    out = simulate_capture(scene, stack, default_color_response(cfg))
    interior = out.planes[:, 12:36, 12:36]
    assert np.max(np.abs(interior - 0.7)) < 1e-9


def test_convolution_conserves_energy():
    # content away from the border so the linear-conv crop loses nothing
    n = 64
    rng = np.random.default_rng(4)
    scene = np.zeros((3, n, n))
    scene[:, 24:40, 24:40] = rng.random((3, 16, 16))
    kern = np.zeros((n, n))
    kern[n // 2 - 2:n // 2 + 3, n // 2 - 2:n // 2 + 3] = \
        rng.random((5, 5))
    stack = stack_from_kernel(kern)
    cfg = DesignConfig(spectrum=make_spectrum(3))
    out = simulate_capture(RasterImage(planes=scene), stack,
                           default_color_response(cfg))
    assert out.planes.sum() == pytest.approx(scene.sum(), rel=1e-6)


def test_linearity():
    n = 32
    rng = np.random.default_rng(5)
    s1 = rng.random((3, n, n))
    s2 = rng.random((3, n, n))
    kern = np.zeros((n, n))
    kern[10:20, 12:22] = rng.random((10, 10))
    stack = stack_from_kernel(kern)
    cfg = DesignConfig(spectrum=make_spectrum(3))
    resp = default_color_response(cfg)
    a, b = 0.3, 1.7
    lhs = simulate_capture(RasterImage(planes=a * s1 + b * s2), stack, resp)
    r1 = simulate_capture(RasterImage(planes=s1), stack, resp)
    r2 = simulate_capture(RasterImage(planes=s2), stack, resp)
    assert np.allclose(lhs.planes, a * r1.planes + b * r2.planes,
                       rtol=0, atol=1e-9)


def test_noise_statistics():
    # mid-gray so clamping never bites; >= 1e6 pixels
    n = 640
    scene = RasterImage(planes=np.full((3, n, n), 0.5))
    cfg = DesignConfig(spectrum=make_spectrum(3))
    resp = default_color_response(cfg)
    stack = delta_stack(n)
    sigma = 0.02
    rng = np.random.Generator(np.random.Philox(7))
    noisy = simulate_capture(scene, stack, resp, noise_sigma=sigma, rng=rng)
    clean = simulate_capture(scene, stack, resp)
    resid = noisy.planes - clean.planes
    assert resid.size >= 1_000_000
    assert np.std(resid) == pytest.approx(sigma, rel=0.02)
    assert abs(np.mean(resid)) < 3 * sigma / np.sqrt(resid.size)


def test_noise_deterministic_with_seeded_philox():
    scene = RasterImage(planes=np.full((3, 16, 16), 0.5))
    cfg = DesignConfig(spectrum=make_spectrum(3))
    resp = default_color_response(cfg)
    stack = delta_stack(16)
    a = simulate_capture(scene, stack, resp, noise_sigma=0.1,
                         rng=np.random.Generator(np.random.Philox(42)))
    b = simulate_capture(scene, stack, resp, noise_sigma=0.1,
                         rng=np.random.Generator(np.random.Philox(42)))
    assert np.array_equal(a.planes, b.planes)


def test_capture_clamps_negatives():
    scene = RasterImage(planes=np.full((3, 32, 32), 1e-4))
    cfg = DesignConfig(spectrum=make_spectrum(3))
    out = simulate_capture(scene, delta_stack(32),
                           default_color_response(cfg), noise_sigma=0.05,
                           rng=np.random.Generator(np.random.Philox(0)))
    assert np.all(out.planes >= 0)


def test_spectral_path_matches_achromatic_for_flat_psf():
    # wavelength-independent PSF: the per-wavelength route and the
    # channel-integrated route agree to numerical precision
    n = 32
    rng = np.random.default_rng(8)
    kern = np.zeros((n, n))
    kern[10:24, 8:20] = rng.random((14, 12))
    kern /= kern.sum()
    nlam = 5
    cfg = DesignConfig(spectrum=make_spectrum(nlam))
    resp = default_color_response(cfg)
    stack = PsfStack(wavelengths=cfg.wavelengths(),
                     spectral=np.stack([kern] * nlam), panchromatic=kern,
                     per_channel=np.stack([kern] * 3))
    cube = rng.random((nlam, n, n))
    spectral_capture = simulate_capture(RasterImage(planes=cube), stack, resp)
    f_c = ground_truth(RasterImage(planes=cube), resp)
    # channel-integrated PSF of a flat stack is the kernel itself
    achromatic_capture = simulate_capture(f_c, stack, resp)
    assert np.allclose(spectral_capture.planes, achromatic_capture.planes,
                       rtol=0, atol=1e-6)


def test_dimension_mismatch_errors():
    cfg = DesignConfig(spectrum=make_spectrum(3))
    resp = default_color_response(cfg)
    stack = delta_stack(32)
    with pytest.raises(DimensionMismatchError):
        simulate_capture(RasterImage(planes=np.ones((3, 16, 16))), stack, resp)
    with pytest.raises(DimensionMismatchError):
        simulate_capture(RasterImage(planes=np.ones((7, 32, 32))), stack, resp)
    with pytest.raises(DimensionMismatchError):
        ground_truth(RasterImage(planes=np.ones((4, 8, 8))), resp)
