"""Bounded 2D Voronoi tessellation on a raster grid.

Cells are built two ways that must agree: exact polygons from half-plane
clipping of the design rectangle (used for vertex analysis and area checks),
and a nearest-site label raster (used by the optics, which only ever sees
the pixel grid). The raster is authoritative for centroids and apertures.
"""

from dataclasses import dataclass, field

import numpy as np


class GeometryError(Exception):
    pass


class DuplicateSitesError(GeometryError):
    """Two sites closer than the minimum separation."""


class SiteOutOfBoundsError(GeometryError):
    """A site lies outside the design rectangle."""


class EmptyCellError(GeometryError):
    """A cell owns no pixel centers (degenerate configuration)."""


@dataclass(frozen=True)
class Site:
    x: float
    y: float
    index: int


@dataclass
class VoronoiCell:
    site: Site
    vertices: np.ndarray  # (M, 2), counter-clockwise, meters
    area: float


@dataclass
class Tessellation:
    sites: list
    cells: list
    label_map: np.ndarray  # (ny, nx) int32, one label per optical pixel
    bounds: tuple          # (width, height) meters
    grid: tuple            # (nx, ny) optical pixels

    @property
    def k(self):
        return len(self.sites)

    @property
    def pitch(self):
        """Optical pixel pitch (meters); pixels are square by construction."""
        return self.bounds[0] / self.grid[0]

    def site_array(self):
        return np.array([[s.x, s.y] for s in self.sites])

    def pixel_centers(self):
        """1D coordinate arrays (xs, ys) of pixel centers in meters."""
        nx, ny = self.grid
        w, h = self.bounds
        xs = (np.arange(nx) + 0.5) * (w / nx)
        ys = (np.arange(ny) + 0.5) * (h / ny)
        return xs, ys


def _clip_halfplane(poly, n, c):
    """Sutherland-Hodgman clip of polygon by {p : p.n <= c}."""
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        dp = p[0] * n[0] + p[1] * n[1] - c
        dq = q[0] * n[0] + q[1] * n[1] - c
        if dp <= 0:
            out.append(p)
            if dq > 0:
                t = dp / (dp - dq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        elif dq <= 0:
            t = dp / (dp - dq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _polygon_area(poly):
    a = 0.0
    m = len(poly)
    for i in range(m):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % m]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def _cell_polygon(i, pts, w, h):
    """Half-plane intersection for site i, clipped to [0,w]x[0,h].

    Other sites are visited nearest-first so clipping can stop as soon as
    the next bisector cannot intersect the running polygon.
    """
    px, py = pts[i]
    poly = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
    d2 = np.sum((pts - pts[i]) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")
    for j in order:
        if j == i:
            continue
        # bisector is unreachable once all vertices are closer than half
        # the site distance
        rmax2 = max((vx - px) ** 2 + (vy - py) ** 2 for vx, vy in poly)
        if d2[j] > 4.0 * rmax2:
            break
        mid = 0.5 * (pts[j] + pts[i])
        n = pts[j] - pts[i]
        c = n[0] * mid[0] + n[1] * mid[1]
        poly = _clip_halfplane(poly, n, c)
        if not poly:
            break
    return poly


def _label_raster(pts, nx, ny, w, h, chunk=131072):
    """Nearest-site label per pixel center; ties go to the smallest index."""
    xs = (np.arange(nx) + 0.5) * (w / nx)
    ys = (np.arange(ny) + 0.5) * (h / ny)
    gx, gy = np.meshgrid(xs, ys)
    flat_x = gx.ravel()
    flat_y = gy.ravel()
    labels = np.empty(flat_x.size, dtype=np.int32)
    for start in range(0, flat_x.size, chunk):
        sl = slice(start, min(start + chunk, flat_x.size))
        d2 = (flat_x[sl][None, :] - pts[:, 0, None]) ** 2 \
            + (flat_y[sl][None, :] - pts[:, 1, None]) ** 2
        labels[sl] = np.argmin(d2, axis=0)  # argmin returns first min: smallest index
    return labels.reshape(ny, nx)


def tessellate(sites, bounds, grid, min_separation=0.0):
    """Construct the bounded Voronoi tessellation of `sites`.

    Parameters
    ----------
    sites : list of Site
    bounds : (width, height) in meters
    grid : (nx, ny) optical raster dimensions
    min_separation : float
        Minimum pairwise site distance (typically one fabrication pixel);
        closer pairs raise DuplicateSitesError.

    Returns
    -------
    Tessellation with exact cell polygons and the nearest-site label raster.
    """
    w, h = bounds
    nx, ny = grid
    if not sites:
        raise GeometryError("need at least one site")
    pts = np.array([[s.x, s.y] for s in sites], dtype=float)
    if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > w) \
            or np.any(pts[:, 1] < 0) or np.any(pts[:, 1] > h):
        bad = int(np.argmax((pts[:, 0] < 0) | (pts[:, 0] > w)
                            | (pts[:, 1] < 0) | (pts[:, 1] > h)))
        raise SiteOutOfBoundsError(f"site {bad} at ({pts[bad,0]:.3e}, {pts[bad,1]:.3e}) "
                                   f"outside {w:.3e} x {h:.3e}")
    if len(sites) > 1 and min_separation > 0:
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        if d2.min() < min_separation ** 2:
            i, j = np.unravel_index(np.argmin(d2), d2.shape)
            raise DuplicateSitesError(
                f"sites {i} and {j} are {np.sqrt(d2.min()):.3e} m apart "
                f"(< {min_separation:.3e})")

    cells = []
    for i, s in enumerate(sites):
        poly = _cell_polygon(i, pts, w, h)
        area = _polygon_area(poly)
        verts = np.array(poly)
        if area < 0:  # enforce counter-clockwise
            verts = verts[::-1]
            area = -area
        cells.append(VoronoiCell(site=s, vertices=verts, area=area))

    labels = _label_raster(pts, nx, ny, w, h)
    return Tessellation(sites=list(sites), cells=cells, label_map=labels,
                        bounds=(w, h), grid=(nx, ny))


def centroids(tess):
    """Raster mass centroids of every cell, shape (K, 2).

    Raises EmptyCellError if any cell has no pixel centers.
    """
    k = tess.k
    labels = tess.label_map.ravel()
    counts = np.bincount(labels, minlength=k).astype(float)
    if np.any(counts == 0):
        raise EmptyCellError(f"cells {np.nonzero(counts == 0)[0].tolist()} own no pixels")
    xs, ys = tess.pixel_centers()
    gx, gy = np.meshgrid(xs, ys)
    cx = np.bincount(labels, weights=gx.ravel(), minlength=k) / counts
    cy = np.bincount(labels, weights=gy.ravel(), minlength=k) / counts
    return np.column_stack([cx, cy])


def centroid(cell_label, tess):
    """Mass centroid of one cell (mean of its pixel centers)."""
    if not 0 <= cell_label < tess.k:
        raise GeometryError(f"label {cell_label} out of range [0, {tess.k})")
    mask = tess.label_map == cell_label
    if not mask.any():
        raise EmptyCellError(f"cell {cell_label} owns no pixels")
    xs, ys = tess.pixel_centers()
    gx, gy = np.meshgrid(xs, ys)
    return np.array([gx[mask].mean(), gy[mask].mean()])


def lloyd_step(tess):
    """One Lloyd update: move every site to its cell centroid.

    Returns
    -------
    (new_sites, rms_movement) where rms_movement is
    sqrt(mean ||p_new - p_old||^2) in meters.
    """
    c = centroids(tess)
    w, h = tess.bounds
    c[:, 0] = np.clip(c[:, 0], 0.0, w)
    c[:, 1] = np.clip(c[:, 1], 0.0, h)
    old = tess.site_array()
    rms = float(np.sqrt(np.mean(np.sum((c - old) ** 2, axis=1))))
    new_sites = [Site(x=float(p[0]), y=float(p[1]), index=i) for i, p in enumerate(c)]
    return new_sites, rms


def sites_from_array(pts):
    """Wrap an (K, 2) array as a list of Site."""
    return [Site(x=float(p[0]), y=float(p[1]), index=i) for i, p in enumerate(pts)]
