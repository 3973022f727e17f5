"""TV-regularized deconvolution by ADMM, per color channel.

Solves argmin_x 1/2 ||A x - y||^2 + mu ||D x||_1 with A circular convolution
by the channel PSF and D the 2-plane forward-difference gradient (periodic
boundaries, anisotropic TV). The x-update is a Fourier-diagonal solve, the
z-update an elementwise soft threshold, and u the scaled dual update.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import fft2, ifft2

from .imaging import RasterImage, DimensionMismatchError
from .optics import PsfStack


class ReconError(Exception):
    pass


class NonFiniteError(ReconError):
    """Divergence: a non-finite value appeared during iteration."""


@dataclass
class ReconParams:
    mu: float = None            # TV weight; default 1e-4 * max(y)
    rho: float = None           # augmented-Lagrangian weight; default 10 * mu
    iters: int = 100
    boundary_taper: int = 16    # edge-replicate padding before the FFTs

    def resolved(self, y_max: float):
        mu = self.mu if self.mu is not None else 1e-4 * y_max
        rho = self.rho if self.rho is not None else 10.0 * max(mu, 1e-12)
        if rho <= 0:
            raise ValueError(f"rho must be > 0, got {rho}")
        if mu < 0:
            raise ValueError(f"mu must be >= 0, got {mu}")
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        return mu, rho


def soft_threshold(v, kappa):
    """Elementwise S_kappa(v) = (1 - kappa/|v|)_+ * v, with 0 at v = 0."""
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)


def _grad(x):
    """Forward differences with periodic boundary, stacked (2, H, W)."""
    return np.stack([np.roll(x, -1, axis=1) - x, np.roll(x, -1, axis=0) - x])


def _grad_adjoint(g):
    """Adjoint of _grad (negative periodic divergence)."""
    return (np.roll(g[0], 1, axis=1) - g[0]) + (np.roll(g[1], 1, axis=0) - g[1])


def _kernel_fft(psf, shape):
    """FFT of the PSF embedded in `shape` with its center pixel at the origin."""
    kh, kw = psf.shape
    ph, pw = shape
    if kh > ph or kw > pw:
        raise DimensionMismatchError(f"PSF {psf.shape} larger than work grid {shape}")
    k = np.zeros(shape)
    k[:kh, :kw] = psf
    k = np.roll(k, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return fft2(k)


def _admm_channel(y, psf, mu, rho, iters, taper):
    """ADMM on one channel; returns (estimate, objective trace)."""
    ypad = np.pad(y, taper, mode="edge") if taper > 0 else y
    shape = ypad.shape
    A = _kernel_fft(psf, shape)
    Ac = np.conj(A)
    # forward-difference convolution kernels: (k*x)[n] = x[n+1] - x[n]
    dx = np.zeros(shape)
    dx[0, 0] = -1.0
    dx[0, -1] = 1.0
    dy = np.zeros(shape)
    dy[0, 0] = -1.0
    dy[-1, 0] = 1.0
    Dx = fft2(dx)
    Dy = fft2(dy)
    denom = (np.abs(A) ** 2 + rho * (np.abs(Dx) ** 2 + np.abs(Dy) ** 2))

    Y = fft2(ypad)
    AtY = Ac * Y
    x = ypad.copy()
    z = _grad(x)
    u = np.zeros_like(z)
    trace = np.empty(iters)
    for it in range(iters):
        v = z - u
        rhs = AtY + rho * (np.conj(Dx) * fft2(v[0]) + np.conj(Dy) * fft2(v[1]))
        x = np.real(ifft2(rhs / denom))
        gx = _grad(x)
        z = soft_threshold(gx + u, mu / rho)
        u = u + gx - z
        resid = np.real(ifft2(A * fft2(x))) - ypad
        trace[it] = 0.5 * np.sum(resid ** 2) + mu * np.sum(np.abs(gx))
        if not np.isfinite(trace[it]):
            raise NonFiniteError(
                f"non-finite objective at iteration {it}: mu={mu}, rho={rho}")
    if taper > 0:
        x = x[taper:-taper, taper:-taper]
    return x, trace


def admm_tv_deconvolve(raw: RasterImage, psf: PsfStack, params: ReconParams):
    """Deconvolve every channel of `raw` with its per-channel PSF.

    Returns (reconstruction clamped to >= 0, objective trace summed over
    channels, one value per iteration).
    """
    planes = raw.planes
    if not np.all(np.isfinite(planes)):
        raise NonFiniteError("raw image contains non-finite values")
    if planes.shape[0] != psf.per_channel.shape[0]:
        raise DimensionMismatchError(
            f"raw has {planes.shape[0]} channels, PSF stack has "
            f"{psf.per_channel.shape[0]}")
    if planes.shape[1:] != psf.per_channel.shape[1:]:
        raise DimensionMismatchError(
            f"raw grid {planes.shape[1:]} != PSF grid {psf.per_channel.shape[1:]}")
    mu, rho = params.resolved(float(planes.max()))
    outs = []
    traces = []
    for c in range(planes.shape[0]):
        xc, tc = _admm_channel(planes[c], psf.per_channel[c], mu, rho,
                               params.iters, params.boundary_taper)
        outs.append(xc)
        traces.append(tc)
    recon = RasterImage(planes=np.clip(np.stack(outs), 0.0, None),
                        channel_names=raw.channel_names)
    return recon, np.sum(traces, axis=0)
