"""Closed-form approximation of the local intensity of a thinned Matérn cluster process.

Parents are reconstructed from the observed offspring,

    lp(y) = #{x : |x - y| < R} / (mu p(y) pi R^2)
            + kappa exp(-mu / (pi R^2) * integral_{b(y,R) ∩ W_obs} p),

and the local intensity at an unobserved x_o averages lp over the disc
b(x_o, R) within W_obs plus its outer border; the part of the disc outside
that region contributes the prior parent intensity kappa.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import shapely
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, InvalidModelError
from .fredholm import PredictionGrid
from .geometry import border_region
from .geometry.polyquad import disc, polygon_quadrature
from .moments.intensity import ConstantThinning, ThinningField

DISC_SEGMENTS = 64
# area of the true disc over that of the inscribed polygon; integrals over
# clipped polygon discs are rescaled by it so a fully covered disc has area pi R^2
DISC_SCALE = math.pi / (0.5 * DISC_SEGMENTS * math.sin(2.0 * math.pi / DISC_SEGMENTS))


@dataclass(frozen=True)
class MaternParams:
    kappa: float
    mu: float
    R: float
    p: ThinningField = ConstantThinning(1.0)

    def __post_init__(self):
        if not (self.kappa >= 0 and self.mu >= 0):
            raise InvalidModelError("kappa and mu must be non-negative")
        if not self.R > 0:
            raise InvalidModelError("cluster radius must be positive")

    @property
    def disc_area(self):
        return math.pi * self.R * self.R

    def intensity(self, points):
        return self.kappa * self.mu * np.asarray(self.p(points), dtype=float)


def _region(W_obs, border, R):
    if border is None:
        border = border_region(W_obs, R)
    return shapely.union(W_obs.polygon, border.polygon)


def parent_conditional_intensity(y, pattern, params, W_obs, border=None):
    """Approximate conditional intensity of parents at ``y``.

    Returns ``inf`` (with a warning) when p(y) = 0 and an observed point
    covers ``y``.
    """
    y = np.asarray(y, dtype=float).reshape(2)
    R, mu, kappa = params.R, params.mu, params.kappa
    a = params.disc_area
    pts = pattern.points
    n_cover = int(np.sum(np.hypot(*(pts - y).T) < R)) if len(pts) else 0
    p_y = float(params.p(y))
    if n_cover:
        if p_y == 0:
            warnings.warn(f"p(y) = 0 at covered point {tuple(y)}: parent intensity is infinite",
                          stacklevel=2)
            return math.inf
        first = n_cover / (mu * p_y * a)
    else:
        first = 0.0
    return first + kappa * math.exp(-mu * _clipped_p(params.p, y, R, W_obs) / a)


def matern_local_intensity(x_o, pattern, params, W_obs, border=None, corrected=True,
                           max_area=None):
    """Local intensity at an unobserved target by polygon clipping.

    Parameters
    ----------
    x_o : point
    pattern : PointPattern
        Observed offspring in ``W_obs``.
    params : MaternParams
    W_obs : Window
    border : Window, optional
        Outer border of thickness R; default ``border_region(W_obs, R)``.
    corrected : bool
        Apply the 1 / (pi R^2) factor to both terms (default).  The literal
        form multiplies the unobserved-part term by kappa mu p(x_o) only.
    """
    x_o = np.asarray(x_o, dtype=float).reshape(2)
    R, mu, kappa = params.R, params.mu, params.kappa
    a = params.disc_area
    p_o = float(params.p(x_o))
    if p_o == 0:
        return 0.0
    region = _region(W_obs, border, R)
    A = shapely.intersection(disc(x_o, R, DISC_SEGMENTS), region)
    outside = max(a - DISC_SCALE * A.area, 0.0)
    # data term: each observed point adds the integral of 1/p over A ∩ b(x, R)
    first = 0.0
    zero_hit = False
    pts = pattern.points
    if len(pts) and A.area > 0:
        near = pts[np.hypot(*(pts - x_o).T) < 2.0 * R]
        for x in near:
            piece = shapely.intersection(A, disc(x, R, DISC_SEGMENTS))
            if piece.area <= 0:
                continue
            val, hit = params.p.integrate_reciprocal(piece)
            zero_hit |= hit
            first += DISC_SCALE * val / (mu * a)
    if zero_hit:
        warnings.warn("p = 0 inside an observed disc: those locations are excluded", stacklevel=2)
    second = 0.0
    if A.area > 0:
        nodes, w = polygon_quadrature(A, max_area or (R / 10.0) ** 2)
        P = np.array([_clipped_p(params.p, y, R, W_obs) for y in nodes])
        second = DISC_SCALE * float(np.dot(w, kappa * np.exp(-mu * P / a)))
    if corrected:
        return mu * p_o / a * (first + second + kappa * outside)
    return mu * p_o / a * (first + second) + kappa * mu * p_o * outside


def _clipped_p(p, y, R, W_obs):
    clipped = shapely.intersection(disc(y, R, DISC_SEGMENTS), W_obs.polygon)
    return DISC_SCALE * p.integrate(clipped) if clipped.area > 0 else 0.0


class OracleRaster:
    """Batched oracle on a fixed target set.

    The disc integrals over y are evaluated on square cells of side ``h``
    (aligned with the origin) whose disc-overlap fractions come from
    ``subsample`` x ``subsample`` supersampling.  Everything that does not
    depend on the observed pattern is precomputed, so each pattern costs one
    neighbour count per cell and a sparse product.
    """

    def __init__(self, params, W_obs, targets, border=None, h=0.0025, subsample=8,
                 corrected=True):
        self.params = params
        self.W_obs = W_obs
        self.targets = np.atleast_2d(np.asarray(targets, dtype=float))
        self.corrected = corrected
        self.h = h
        R = params.R
        a = params.disc_area
        region = _region(W_obs, border, R)
        lo = np.floor((self.targets.min(axis=0) - R) / h) * h
        hi = np.ceil((self.targets.max(axis=0) + R) / h) * h
        nx, ny = np.round((hi - lo) / h).astype(int)
        xs = lo[0] + (np.arange(nx) + 0.5) * h
        ys = lo[1] + (np.arange(ny) + 0.5) * h
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        cells = np.column_stack([X.ravel(), Y.ravel()])
        in_region = shapely.contains_xy(region, cells[:, 0], cells[:, 1])
        # sub-cell offsets for the overlap fraction
        s = (np.arange(subsample) + 0.5) / subsample - 0.5
        off = h * np.array([(u, v) for u in s for v in s])
        tree = cKDTree(cells)
        rows, cols, vals = [], [], []
        for t, xo in enumerate(self.targets):
            idx = np.asarray(tree.query_ball_point(xo, R + h), dtype=np.int64)
            idx = idx[in_region[idx]]
            if not len(idx):
                continue
            d = np.hypot(*(cells[idx] - xo).T)
            frac = np.ones(len(idx))
            edge = d > R - h
            if np.any(edge):
                sub = cells[idx[edge]][:, None, :] + off[None, :, :]
                frac[edge] = (np.hypot(sub[..., 0] - xo[0], sub[..., 1] - xo[1]) < R).mean(axis=1)
            keep = frac > 0
            rows.append(np.full(int(keep.sum()), t))
            cols.append(idx[keep])
            vals.append(frac[keep] * h * h)
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        used, inv = np.unique(cols, return_inverse=True)
        self.cells = cells[used]
        self.weights = sp.csr_matrix((vals, (rows, inv.ravel())), shape=(len(self.targets), len(used)))
        self.outside = np.maximum(a - np.asarray(self.weights.sum(axis=1)).ravel(), 0.0)
        self.p_cells = np.asarray(params.p(self.cells), dtype=float).reshape(-1)
        self.P_cells = self._clipped_integrals()
        self.p_targets = np.asarray(params.p(self.targets), dtype=float).reshape(-1)
        self.unobserved = params.kappa * np.exp(-params.mu * self.P_cells / a)
        self.excluded_cells = 0

    def _clipped_integrals(self):
        R = self.params.R
        poly = self.W_obs.polygon
        out = np.zeros(len(self.cells))
        discs = [disc(c, R, DISC_SEGMENTS) for c in self.cells]
        clipped = shapely.intersection(poly, discs)
        for k, geom in enumerate(clipped):
            if geom.area > 0:
                out[k] = DISC_SCALE * self.params.p.integrate(geom)
        return out

    def _combine(self, lp):
        a = self.params.disc_area
        mu, kappa = self.params.mu, self.params.kappa
        inner = self.weights @ lp
        if self.corrected:
            return mu * self.p_targets / a * (inner + kappa * self.outside)
        return mu * self.p_targets / a * inner + kappa * mu * self.p_targets * self.outside

    def parent_intensity(self, pattern):
        """lp at the cell centres; infinite cells are zeroed and counted."""
        a = self.params.disc_area
        if len(pattern):
            counts = cKDTree(pattern.points).query_ball_point(self.cells, self.params.R,
                                                              return_length=True)
        else:
            counts = np.zeros(len(self.cells))
        counts = np.asarray(counts, dtype=float)
        zero = self.p_cells <= 0
        bad = zero & (counts > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            first = np.where(zero, 0.0, counts / (self.params.mu * self.p_cells * a))
        lp = first + self.unobserved
        lp[bad] = 0.0
        self.excluded_cells = int(bad.sum())
        return lp

    def __call__(self, pattern):
        return self._combine(self.parent_intensity(pattern))

    def expected(self):
        """Oracle with counts replaced by their expectation kappa mu P(y)."""
        a = self.params.disc_area
        with np.errstate(divide="ignore", invalid="ignore"):
            first = np.where(self.p_cells > 0,
                             self.params.kappa * self.P_cells / (self.p_cells * a), 0.0)
        return self._combine(first + self.unobserved)


def oracle_grid(pattern, params, targets, W_obs, border=None, corrected=True, method="raster",
                shape=None, bounds=None, **raster_kw):
    """Oracle local intensity at every target, as a PredictionGrid."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if method == "exact":
        vals = np.array([matern_local_intensity(t, pattern, params, W_obs, border, corrected)
                         for t in targets])
    elif method == "raster":
        vals = OracleRaster(params, W_obs, targets, border, corrected=corrected, **raster_kw)(pattern)
    else:
        raise InvalidArgumentError(f"unknown oracle method {method!r}")
    inside = W_obs.contains(targets)
    vals = np.where(inside, np.nan, vals)
    reasons = {int(k): "target inside the observation window" for k in np.flatnonzero(inside)}
    return PredictionGrid(targets, vals, ~inside, reasons, None, shape, bounds)
