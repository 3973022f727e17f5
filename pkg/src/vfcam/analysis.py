"""First-order system characterization: field of view, RSS effective
diameter, Rayleigh limiting resolution, phase quantization for fabrication,
and marginal-cell exclusion."""

from dataclasses import dataclass, field

import numpy as np

from .geometry import Tessellation, centroids
from .optics import DesignConfig, PhaseProfile


class AnalysisError(Exception):
    pass


class MarginTooLargeError(AnalysisError):
    """The exclusion band would swallow every cell."""


@dataclass
class SystemReport:
    half_fov_deg: float
    rss_diameter: float
    rss_diameter_centroid: float
    rayleigh_limit: float
    excluded_cells: list
    k_effective: int

    def to_dict(self):
        return {
            "half_fov_deg": self.half_fov_deg,
            "rss_diameter_m": self.rss_diameter,
            "rss_diameter_centroid_m": self.rss_diameter_centroid,
            "rayleigh_limit_m": self.rayleigh_limit,
            "excluded_cells": list(self.excluded_cells),
            "k_effective": self.k_effective,
        }


def half_fov(alpha_deg: float, h_n: float, z_o: float) -> float:
    """Half field of view in degrees: sensor cut-off angle plus the angular
    displacement of the outermost cell, alpha + atan(h_n / z_o)."""
    if z_o <= 0:
        raise AnalysisError(f"object distance must be > 0, got {z_o}")
    if not 0.0 <= alpha_deg < 90.0:
        raise AnalysisError(f"alpha must be in [0, 90) degrees, got {alpha_deg}")
    return alpha_deg + np.degrees(np.arctan(h_n / z_o))


def rss_diameter(tess: Tessellation, centers: str = "sites") -> float:
    """Effective aperture diameter: twice the root-sum-square distance of
    all cell vertices to their cell centers.

    centers='sites' measures from the site locations (the phase origins);
    'centroids' measures from the raster mass centroids.
    """
    if centers == "sites":
        ctr = tess.site_array()
    elif centers == "centroids":
        ctr = centroids(tess)
    else:
        raise ValueError(f"centers must be 'sites' or 'centroids', got {centers!r}")
    total = 0.0
    count = 0
    for i, cell in enumerate(tess.cells):
        v = cell.vertices
        total += np.sum((v[:, 0] - ctr[i, 0]) ** 2 + (v[:, 1] - ctr[i, 1]) ** 2)
        count += len(v)
    if count == 0:
        raise AnalysisError("no cell vertices")
    return 2.0 * float(np.sqrt(total / count))


def rayleigh_limit(wavelength: float, z_i: float, d_bar: float) -> float:
    """Rayleigh-criterion limiting resolution 1.22 * lambda * z_i / d_bar."""
    if min(wavelength, z_i, d_bar) <= 0:
        raise AnalysisError("wavelength, z_i and d_bar must all be > 0")
    return 1.22 * wavelength * z_i / d_bar


def quantize_phase(phase: PhaseProfile, levels: int = None) -> PhaseProfile:
    """Snap each pixel to floor(phase / (2*pi/L)) * (2*pi/L). Idempotent."""
    if levels is None:
        levels = phase.config.phase_levels
    if levels < 2:
        raise AnalysisError(f"levels must be >= 2, got {levels}")
    step = 2.0 * np.pi / levels
    wrapped = np.mod(phase.grid, 2.0 * np.pi)
    idx = np.floor(wrapped / step)
    # values sitting exactly on a level must not fall a step down through
    # float division (keeps requantization a fixed point)
    idx = np.where(wrapped - (idx + 1.0) * step >= -1e-12 * step, idx + 1.0, idx)
    idx = np.clip(idx, 0, levels - 1)
    return PhaseProfile(grid=idx * step, config=phase.config,
                        excluded_labels=phase.excluded_labels)


def phase_to_depth(phase: PhaseProfile, total_depth: float = None) -> np.ndarray:
    """Etch-depth raster: depth = phase / (2*pi) * total_depth (meters)."""
    if total_depth is None:
        total_depth = phase.config.total_depth
    return phase.grid / (2.0 * np.pi) * total_depth


def exclude_marginal_cells(tess: Tessellation, margin: float):
    """Indices of cells whose center lies within `margin` of the design
    rectangle border. These get zero phase so the PSF stays shift-invariant
    inside the nominal field of view."""
    w, h = tess.bounds
    if margin < 0:
        raise AnalysisError(f"margin must be >= 0, got {margin}")
    if margin == 0:
        return set()
    pts = tess.site_array()
    near = (pts[:, 0] < margin) | (pts[:, 0] > w - margin) \
        | (pts[:, 1] < margin) | (pts[:, 1] > h - margin)
    if near.all():
        raise MarginTooLargeError(
            f"margin {margin:.3e} m excludes all {tess.k} cells")
    return set(int(i) for i in np.nonzero(near)[0])


def default_margin(config: DesignConfig) -> float:
    """Exclusion-band default: z * tan(alpha) minus the half extent of the
    smaller design dimension, clamped at 0 (no exclusion for alpha = 0)."""
    half = 0.5 * min(config.bounds)
    return max(0.0, config.z * np.tan(np.radians(config.cutoff_angle_deg)) - half)


def system_report(tess: Tessellation, config: DesignConfig,
                  z_o: float = 0.3, margin: float = None) -> SystemReport:
    """Assemble the first-order report for a design at object distance z_o."""
    if margin is None:
        margin = default_margin(config)
    excluded = exclude_marginal_cells(tess, margin)
    pts = tess.site_array()
    w, h = tess.bounds
    # lateral displacement of the outermost *included* cell from the axis
    keep = np.array([i for i in range(tess.k) if i not in excluded])
    offs = np.hypot(pts[keep, 0] - w / 2.0, pts[keep, 1] - h / 2.0)
    h_n = float(offs.max()) if len(offs) else 0.0
    d_site = rss_diameter(tess, centers="sites")
    d_cent = rss_diameter(tess, centers="centroids")
    return SystemReport(
        half_fov_deg=float(half_fov(config.cutoff_angle_deg, h_n, z_o)),
        rss_diameter=d_site,
        rss_diameter_centroid=d_cent,
        rayleigh_limit=float(rayleigh_limit(config.lambda0, config.z, d_site)),
        excluded_cells=sorted(excluded),
        k_effective=tess.k - len(excluded),
    )
