"""MTF-volume-guided site placement: MTFv-gated Lloyd iteration for a fixed
cell count, the sweep over cell counts with a quadratic fit, and the
linear-scalability fit of best count versus design area."""

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from . import geometry
from .geometry import Site, tessellate, lloyd_step, sites_from_array
from .optics import DesignConfig, panchromatic_psf, mtfv


class OptimizerError(Exception):
    pass


class InfeasibleKError(OptimizerError):
    """Cannot place K separated sites in the design rectangle."""


class Termination(enum.Enum):
    TOLERANCE = "tolerance"
    MAXITER = "maxiter"


@dataclass
class OptimizeParams:
    k: int
    maxiter: int = 100
    tol: float = None  # meters; default set from config: fab_pitch / 100
    seed: int = 0

    def resolved_tol(self, config: DesignConfig) -> float:
        return self.tol if self.tol is not None else config.fab_pitch / 100.0


@dataclass
class OptimizeResult:
    best_sites: list
    best_mtfv: float
    history: list          # (iteration, mtfv, rms_movement); iteration 0 is the init
    terminated_by: Termination

    def best_trace(self):
        """Running maximum of the recorded MTFv values."""
        return np.maximum.accumulate([m for _, m, _ in self.history])


def random_sites(k: int, config: DesignConfig, rng, max_tries=None):
    """Uniform random sites with rejection to enforce the fabrication-pitch
    minimum separation."""
    if k < 1:
        raise InfeasibleKError(f"k must be >= 1, got {k}")
    w, h = config.bounds
    min_sep = config.fab_pitch
    if max_tries is None:
        max_tries = 1000 * k
    pts = np.empty((k, 2))
    n = 0
    for _ in range(max_tries):
        p = rng.uniform((0.0, 0.0), (w, h))
        if n == 0 or np.min(np.sum((pts[:n] - p) ** 2, axis=1)) >= min_sep ** 2:
            pts[n] = p
            n += 1
            if n == k:
                return sites_from_array(pts)
    raise InfeasibleKError(
        f"could not place {k} sites with separation {min_sep:.3e} in {w:.3e} x {h:.3e}")


def _evaluate(sites, config: DesignConfig, window=None):
    tess = tessellate(sites, config.bounds, config.grid_px,
                      min_separation=config.fab_pitch)
    stack = panchromatic_psf(tess, config, window=window)
    return mtfv(stack, config).mtfv


def optimize_fixed_k(params: OptimizeParams, config: DesignConfig) -> OptimizeResult:
    """MTFv-gated Lloyd iteration for a fixed cell count.

    Random init, then repeatedly: move sites to their cell centroids,
    re-tessellate, evaluate MTFv, and record the sites only when the metric
    improves. The walk always continues from the latest centroids; it stops
    when the RMS site movement drops below tol or maxiter is reached.
    Deterministic for a fixed (seed, params, config).
    """
    rng = np.random.default_rng(params.seed)
    tol = params.resolved_tol(config)
    sites = random_sites(params.k, config, rng)

    current = _evaluate(sites, config)
    best_sites = sites
    best = current
    history = [(0, current, float("nan"))]
    terminated = Termination.MAXITER

    for it in range(1, params.maxiter + 1):
        tess = tessellate(sites, config.bounds, config.grid_px)
        new_sites, rms = lloyd_step(tess)
        current = _evaluate(new_sites, config)
        if current > best:
            best = current
            best_sites = new_sites
        history.append((it, current, rms))
        sites = new_sites
        if rms < tol:
            terminated = Termination.TOLERANCE
            break

    return OptimizeResult(best_sites=best_sites, best_mtfv=best,
                          history=history, terminated_by=terminated)


def rectangular_grid_sites(k: int, config: DesignConfig):
    """Regular rectangular grid of k sites at cell centers; rows x cols is
    the factor pair of k best matching the design aspect ratio."""
    w, h = config.bounds
    best_pair = None
    best_err = np.inf
    for rows in range(1, k + 1):
        if k % rows:
            continue
        cols = k // rows
        err = abs(np.log((cols / rows) / (w / h)))
        if err < best_err:
            best_err = err
            best_pair = (rows, cols)
    rows, cols = best_pair
    x = (np.arange(cols) + 0.5) * w / cols
    y = (np.arange(rows) + 0.5) * h / rows
    gx, gy = np.meshgrid(x, y)
    return sites_from_array(np.column_stack([gx.ravel(), gy.ravel()]))


def hexagonal_grid_sites(k: int, config: DesignConfig):
    """Centered hexagonal packing: rows spaced a*sqrt(3)/2 with alternate
    rows offset a/2, pitch a shrunk until at least k points land inside the
    rectangle; the k points nearest the center are kept."""
    w, h = config.bounds
    a0 = np.sqrt(w * h / k / (np.sqrt(3) / 2.0))
    for shrink in np.linspace(1.0, 0.5, 51):
        a = a0 * shrink
        dy = a * np.sqrt(3) / 2.0
        nrow = int(np.ceil(h / dy)) + 2
        ncol = int(np.ceil(w / a)) + 2
        pts = []
        for r in range(-nrow, nrow + 1):
            y = h / 2.0 + r * dy
            if not 0.0 < y < h:
                continue
            off = a / 2.0 if (r % 2) else 0.0
            for c in range(-ncol, ncol + 1):
                x = w / 2.0 + c * a + off
                if 0.0 < x < w:
                    pts.append((x, y))
        if len(pts) >= k:
            pts = np.array(pts)
            d2 = (pts[:, 0] - w / 2.0) ** 2 + (pts[:, 1] - h / 2.0) ** 2
            order = np.lexsort((pts[:, 0], pts[:, 1], np.round(d2 / (a * a * 1e-9))))
            return sites_from_array(pts[order[:k]])
    raise InfeasibleKError(f"could not fit {k} hexagonal sites in {w:.3e} x {h:.3e}")


@dataclass
class SweepResult:
    best_k: int
    fit: np.ndarray        # degree-2 polynomial coefficients (a2, a1, a0)
    table: list            # (k, best_mtfv) with the best over restarts
    runs: list             # (k, restart, best_mtfv, iterations, terminated_by)


def sweep_k(k_values, config: DesignConfig, params_template: OptimizeParams,
            restarts: int = 3, threads: int = 1) -> SweepResult:
    """Optimize each cell count (best of `restarts` seeded runs), fit a
    degree-2 polynomial to (K, best MTFv), and pick the swept K nearest the
    fitted maximum, clamped to the swept range. Degenerate fits (no interior
    maximum) fall back to the better endpoint, ties to the smaller K.

    Runs are independent; with threads > 1 they execute in a pool and are
    reduced in (K, restart) order, so results do not depend on scheduling.
    """
    ks = sorted(set(int(k) for k in k_values))
    if len(ks) < 4:
        raise OptimizerError(f"need >= 4 distinct K values, got {len(ks)}")
    jobs = [(k, r) for k in ks for r in range(restarts)]

    def run(job):
        k, r = job
        params = OptimizeParams(k=k, maxiter=params_template.maxiter,
                                tol=params_template.tol,
                                seed=params_template.seed + 7919 * r + k)
        return optimize_fixed_k(params, config)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(zip(jobs, pool.map(run, jobs)))
    else:
        results = {job: run(job) for job in jobs}

    table = []
    runs = []
    for k in ks:
        best = -np.inf
        for r in range(restarts):
            res = results[(k, r)]
            runs.append((k, r, res.best_mtfv, len(res.history) - 1,
                         res.terminated_by))
            best = max(best, res.best_mtfv)
        table.append((k, best))

    best_k, coeffs = fit_best_k(table)
    return SweepResult(best_k=best_k, fit=coeffs, table=table, runs=runs)


def fit_best_k(table):
    """Degree-2 least-squares fit of (K, mtfv) pairs; returns the swept K
    nearest the fitted maximum clamped to the swept range, plus the
    coefficients. An upward or flat parabola has its maximum at an endpoint;
    ties break to the smaller K."""
    karr = np.array([t[0] for t in table], dtype=float)
    varr = np.array([t[1] for t in table], dtype=float)
    order = np.argsort(karr)
    karr, varr = karr[order], varr[order]
    coeffs = np.polyfit(karr, varr, 2)
    a2 = coeffs[0]
    if a2 < 0:
        k_vertex = -coeffs[1] / (2.0 * a2)
        k_star = float(np.clip(k_vertex, karr[0], karr[-1]))
    else:
        lo, hi = np.polyval(coeffs, karr[0]), np.polyval(coeffs, karr[-1])
        k_star = karr[0] if lo >= hi else karr[-1]
    best_k = int(karr[np.argmin(np.abs(karr - k_star))])
    return best_k, coeffs


def extrapolate_k(area_samples):
    """Least-squares line of best cell count versus design area.

    Parameters
    ----------
    area_samples : sequence of (area_m2, best_k)

    Returns
    -------
    (slope, intercept, r_squared)
    """
    if len(area_samples) < 3:
        raise OptimizerError(f"need >= 3 samples, got {len(area_samples)}")
    areas = np.array([a for a, _ in area_samples], dtype=float)
    ks = np.array([k for _, k in area_samples], dtype=float)
    fit = linregress(areas, ks)
    r2 = float(fit.rvalue ** 2) if np.isfinite(fit.rvalue) else 0.0
    return float(fit.slope), float(fit.intercept), r2
