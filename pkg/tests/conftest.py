import numpy as np
import pytest

from vfcam import DesignConfig, make_spectrum


@pytest.fixture
def small_config():
    """Fast 64x64 single-wavelength config for unit tests."""
    return DesignConfig(sensor_px=(64, 64), pixel_pitch=3.45e-6, upsample=1,
                        z=2e-3, lambda0=550e-9,
                        spectrum=make_spectrum(1, 550e-9, 550e-9))


@pytest.fixture
def tri_config():
    """64x64 with a 3-sample spectrum."""
    return DesignConfig(sensor_px=(64, 64), pixel_pitch=3.45e-6, upsample=1,
                        z=2e-3, lambda0=550e-9, spectrum=make_spectrum(3))


def brute_force_labels(pts, nx, ny, w, h):
    """Independent nearest-site oracle: per-pixel loop over all sites,
    ties to the smallest site index."""
    xs = (np.arange(nx) + 0.5) * (w / nx)
    ys = (np.arange(ny) + 0.5) * (h / ny)
    out = np.empty((ny, nx), dtype=np.int64)
    for iy in range(ny):
        for ix in range(nx):
            d = (pts[:, 0] - xs[ix]) ** 2 + (pts[:, 1] - ys[iy]) ** 2
            best = 0
            for j in range(1, len(pts)):
                if d[j] < d[best]:
                    best = j
            out[iy, ix] = best
    return out
