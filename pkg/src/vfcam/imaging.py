"""Forward image formation: convolution with the PSF stack, sensor color
response, and additive Gaussian noise."""

from dataclasses import dataclass

import numpy as np
from scipy.fft import rfft2, irfft2, next_fast_len

from .optics import DesignConfig, PsfStack


class ImagingError(Exception):
    pass


class DimensionMismatchError(ImagingError):
    pass


@dataclass
class ColorResponse:
    """Sensor color response sampled on the spectrum grid.

    channels is (3, S). weights are the spectrum quadrature weights; each
    channel is normalized so sum_s weights[s] * channels[c, s] = 1."""

    wavelengths: np.ndarray
    weights: np.ndarray
    channels: np.ndarray


@dataclass
class RasterImage:
    planes: np.ndarray      # (C, H, W) nonnegative linear intensity
    channel_names: tuple = ("r", "g", "b")

    @property
    def shape(self):
        return self.planes.shape


def default_color_response(config: DesignConfig,
                           centers=(610e-9, 540e-9, 470e-9),
                           sigma=35e-9) -> ColorResponse:
    """Gaussian R/G/B response curves sampled on the spectrum grid and
    normalized against the spectrum weights."""
    lams = config.wavelengths()
    wts = config.weights()
    q = np.exp(-0.5 * ((lams[None, :] - np.array(centers)[:, None]) / sigma) ** 2)
    norm = (q * wts[None, :]).sum(axis=1)
    return ColorResponse(wavelengths=lams, weights=wts, channels=q / norm[:, None])


def color_response_from_csv(path, config: DesignConfig) -> ColorResponse:
    """Load response curves from CSV rows `wavelength_nm,r,g,b`, linearly
    interpolated onto the spectrum grid and then normalized."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1)
    lams = config.wavelengths()
    wts = config.weights()
    q = np.stack([np.interp(lams, raw[:, 0] * 1e-9, raw[:, 1 + c]) for c in range(3)])
    if np.any(q < 0):
        raise ImagingError("color response samples must be nonnegative")
    norm = (q * wts[None, :]).sum(axis=1)
    if np.any(norm <= 0):
        raise ImagingError("color response channel integrates to zero")
    return ColorResponse(wavelengths=lams, weights=wts, channels=q / norm[:, None])


def _convolve_same(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Linear convolution on a zero-padded grid, cropped so a centered delta
    kernel is the identity."""
    h, w = image.shape
    kh, kw = kernel.shape
    ph = next_fast_len(h + kh - 1)
    pw = next_fast_len(w + kw - 1)
    out = irfft2(rfft2(image, (ph, pw)) * rfft2(kernel, (ph, pw)), (ph, pw))
    cy, cx = kh // 2, kw // 2
    return out[cy:cy + h, cx:cx + w]


def ground_truth(scene_spectral: RasterImage, response: ColorResponse) -> RasterImage:
    """Ideal (delta-PSF) color image: f_c = sum_s w_s q_c(lambda_s) f_s."""
    q = response.channels
    s = scene_spectral.planes
    if s.shape[0] != q.shape[1]:
        raise DimensionMismatchError(
            f"scene has {s.shape[0]} spectral planes, response has {q.shape[1]} samples")
    planes = np.tensordot(q * response.weights[None, :], s, axes=1)
    return RasterImage(planes=planes, channel_names=("r", "g", "b"))


def simulate_capture(scene: RasterImage, psf: PsfStack, response: ColorResponse,
                     noise_sigma: float = 0.0, rng=None) -> RasterImage:
    """Simulate the raw sensor capture.

    A 3-channel scene takes the achromatic path g_c = f_c * h_c with the
    per-channel PSFs; an S-channel spectral scene is convolved per
    wavelength and then integrated through the color response. Zero-mean
    Gaussian noise of standard deviation `noise_sigma` (linear intensity
    units, full scale = 1) is added per pixel and negatives are clamped.

    `rng` should be a counter-based generator (Philox) for reproducible
    noise; pass np.random.Generator(np.random.Philox(seed)).
    """
    planes = scene.planes
    nchan = planes.shape[0]
    hw = planes.shape[1:]
    if nchan == 3:
        kernels = psf.per_channel
        if kernels.shape[1:] != hw:
            raise DimensionMismatchError(
                f"scene {hw} vs per-channel PSF {kernels.shape[1:]}")
        out = np.stack([_convolve_same(planes[c], kernels[c]) for c in range(3)])
    elif nchan == psf.spectral.shape[0]:
        if psf.spectral.shape[1:] != hw:
            raise DimensionMismatchError(
                f"scene {hw} vs spectral PSF {psf.spectral.shape[1:]}")
        q = response.channels
        blurred = np.stack([_convolve_same(planes[s], psf.spectral[s])
                            for s in range(nchan)])
        out = np.tensordot(q * response.weights[None, :], blurred, axes=1)
    else:
        raise DimensionMismatchError(
            f"scene has {nchan} planes; expected 3 (rgb) or "
            f"{psf.spectral.shape[0]} (spectral)")

    if noise_sigma > 0:
        if rng is None:
            rng = np.random.Generator(np.random.Philox(0))
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    return RasterImage(planes=np.clip(out, 0.0, None),
                       channel_names=("r", "g", "b"))
