"""Design and simulation toolkit for Voronoi-Fresnel lensless cameras."""

__version__ = "0.1.0"

from .geometry import (Site, VoronoiCell, Tessellation, tessellate, centroid,
                       centroids, lloyd_step, sites_from_array,
                       DuplicateSitesError, SiteOutOfBoundsError, EmptyCellError)
from .optics import (DesignConfig, PhaseProfile, PsfStack, MtfReport,
                     make_spectrum, build_phase, propagate_fresnel,
                     psf_from_field, spectral_psf_fast, panchromatic_psf,
                     mtfv, GridMismatchError, AliasedPropagationWarning)
from .optimizer import (OptimizeParams, OptimizeResult, SweepResult,
                        Termination, optimize_fixed_k, sweep_k, extrapolate_k,
                        random_sites, rectangular_grid_sites,
                        hexagonal_grid_sites, InfeasibleKError)
from .imaging import (ColorResponse, RasterImage, default_color_response,
                      color_response_from_csv, simulate_capture, ground_truth,
                      DimensionMismatchError)
from .recon import (ReconParams, soft_threshold, admm_tv_deconvolve,
                    NonFiniteError)
from .analysis import (SystemReport, half_fov, rss_diameter, rayleigh_limit,
                       quantize_phase, phase_to_depth, exclude_marginal_cells,
                       default_margin, system_report, MarginTooLargeError)
