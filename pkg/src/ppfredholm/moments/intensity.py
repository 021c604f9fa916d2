"""First-order models: intensity functions, thinning fields and covariates."""
import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.interpolate import RegularGridInterpolator

from ..errors import EvaluationError, InvalidArgumentError, InvalidModelError
from ..geometry import Window, distance_to_set
from ..geometry.polyquad import polygon_quadrature

_BIG = 1e12


def _pts(points):
    p = np.asarray(points, dtype=float)
    return np.atleast_2d(p).reshape(-1, 2), p.ndim == 1


# ----------------------------------------------------------------------
# thinning fields


class ThinningField:
    """Deterministic retention probability p(x) defined on the whole plane."""

    #: polylines along which p is discontinuous
    breaklines = ()

    def __call__(self, points):
        raise NotImplementedError

    def describe(self):
        return {"kind": type(self).__name__}

    def integrate(self, geom, max_area=None):
        """Integral of p over a shapely (multi)polygon."""
        nodes, w = polygon_quadrature(geom, max_area or geom.area / 200 + 1e-300)
        return float(np.dot(w, self(nodes))) if len(w) else 0.0

    def integrate_reciprocal(self, geom, max_area=None):
        """Integral of 1/p over ``geom`` restricted to {p > 0}.

        Returns ``(value, hit_zero)`` where ``hit_zero`` reports that part of
        the region has p = 0 (the integrand is infinite there and excluded).
        """
        nodes, w = polygon_quadrature(geom, max_area or geom.area / 200 + 1e-300)
        if not len(w):
            return 0.0, False
        p = self(nodes)
        pos = p > 0
        return float(np.dot(w[pos], 1.0 / p[pos])), bool(np.any(~pos))


@dataclass(frozen=True)
class ConstantThinning(ThinningField):
    value: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise InvalidModelError("thinning probability must lie in [0, 1]")

    def __call__(self, points):
        pts, single = _pts(points)
        out = np.full(len(pts), float(self.value))
        return float(out[0]) if single else out

    def describe(self):
        return {"kind": "constant", "value": self.value}

    def integrate(self, geom, max_area=None):
        return self.value * geom.area

    def integrate_reciprocal(self, geom, max_area=None):
        if geom.area <= 0:
            return 0.0, False
        if self.value == 0:
            return 0.0, True
        return geom.area / self.value, False


@dataclass(frozen=True)
class StepThinning(ThinningField):
    """p(x) = alpha1 if x1 <= v else alpha2."""

    alpha1: float = 0.8
    alpha2: float = 0.2
    v: float = 0.5

    def __post_init__(self):
        for a in (self.alpha1, self.alpha2):
            if not (0.0 <= a <= 1.0):
                raise InvalidModelError("thinning probability must lie in [0, 1]")

    @property
    def breaklines(self):
        return (np.array([[self.v, -_BIG], [self.v, _BIG]]),)

    def __call__(self, points):
        pts, single = _pts(points)
        out = np.where(pts[:, 0] <= self.v, self.alpha1, self.alpha2)
        return float(out[0]) if single else out

    def describe(self):
        return {"kind": "step", "alpha1": self.alpha1, "alpha2": self.alpha2, "v": self.v}

    def _halves(self, geom):
        left = shapely.clip_by_rect(geom, -_BIG, -_BIG, self.v, _BIG).area
        return left, geom.area - left

    def integrate(self, geom, max_area=None):
        left, right = self._halves(geom)
        return self.alpha1 * left + self.alpha2 * right

    def integrate_reciprocal(self, geom, max_area=None):
        total, zero = 0.0, False
        for a, p in zip(self._halves(geom), (self.alpha1, self.alpha2)):
            if a <= 1e-15:
                continue
            if p == 0:
                zero = True
            else:
                total += a / p
        return total, zero


@dataclass(frozen=True)
class LinearThinning(ThinningField):
    """p(x) = 1 - x1, clipped to [0, 1] outside the unit strip."""

    def __call__(self, points):
        pts, single = _pts(points)
        out = np.clip(1.0 - pts[:, 0], 0.0, 1.0)
        return float(out[0]) if single else out

    def describe(self):
        return {"kind": "linear"}

    def integrate(self, geom, max_area=None):
        low = shapely.clip_by_rect(geom, -_BIG, -_BIG, 0.0, _BIG)
        mid = shapely.clip_by_rect(geom, 0.0, -_BIG, 1.0, _BIG)
        total = low.area
        if mid.area > 0:
            total += mid.area * (1.0 - mid.centroid.x)
        return total

    def integrate_reciprocal(self, geom, max_area=None):
        low = shapely.clip_by_rect(geom, -_BIG, -_BIG, 0.0, _BIG)
        mid = shapely.clip_by_rect(geom, 0.0, -_BIG, 1.0, _BIG)
        high = shapely.clip_by_rect(geom, 1.0, -_BIG, _BIG, _BIG)
        total = low.area
        if mid.area > 0:
            val, _ = super().integrate_reciprocal(mid, max_area)
            total += val
        return total, high.area > 1e-15


@dataclass(frozen=True)
class CallableThinning(ThinningField):
    func: object = None
    label: str = "callable"

    def __call__(self, points):
        pts, single = _pts(points)
        out = np.asarray(self.func(pts), dtype=float).reshape(-1)
        if np.any(~np.isfinite(out)) or np.any(out < 0) or np.any(out > 1):
            raise InvalidModelError("thinning probability must lie in [0, 1]")
        return float(out[0]) if single else out

    def describe(self):
        return {"kind": "callable", "label": self.label}


# ----------------------------------------------------------------------
# covariates


class CovariateField:
    name = "covariate"

    def __call__(self, points):
        raise NotImplementedError


class DistanceField(CovariateField):
    """Distance to a point set, a list of polylines or a window boundary."""

    def __init__(self, geometry, name="distance"):
        if isinstance(geometry, np.ndarray) and geometry.ndim == 2 and len(geometry) == 0:
            raise InvalidArgumentError("empty geometry for distance covariate")
        if isinstance(geometry, (list, tuple)) and not geometry:
            raise InvalidArgumentError("empty geometry for distance covariate")
        self.geometry = geometry
        self.name = name

    def __call__(self, points):
        pts, single = _pts(points)
        d = np.atleast_1d(distance_to_set(pts, self.geometry))
        return float(d[0]) if single else d


class RasterField(CovariateField):
    """Bilinear interpolation of values on a regular grid."""

    def __init__(self, x, y, values, name="raster"):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.values = np.asarray(values, dtype=float).reshape(len(self.x), len(self.y))
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("raster covariate contains non-finite values")
        self.name = name
        self._interp = RegularGridInterpolator((self.x, self.y), self.values, bounds_error=False,
                                               fill_value=None)

    @classmethod
    def from_points(cls, xyz, name="raster", tol=1e-9):
        """Infer the grid from scattered ``x, y, value`` rows; irregular grids are rejected."""
        xyz = np.asarray(xyz, dtype=float)
        xs = np.unique(xyz[:, 0])
        ys = np.unique(xyz[:, 1])
        if len(xs) * len(ys) != len(xyz):
            raise InvalidArgumentError("raster rows do not form a complete regular grid")
        for u in (xs, ys):
            if len(u) > 2 and np.ptp(np.diff(u)) > tol * max(1.0, np.ptp(u)):
                raise InvalidArgumentError("raster grid spacing is irregular")
        vals = np.full((len(xs), len(ys)), np.nan)
        vals[np.searchsorted(xs, xyz[:, 0]), np.searchsorted(ys, xyz[:, 1])] = xyz[:, 2]
        if np.any(np.isnan(vals)):
            raise InvalidArgumentError("raster rows do not form a complete regular grid")
        return cls(xs, ys, vals, name)

    def __call__(self, points):
        pts, single = _pts(points)
        out = self._interp(pts)
        return float(out[0]) if single else out


# ----------------------------------------------------------------------
# design matrices for log-linear models


class LinearDesign:
    """Intercept (optional) plus one linear column per covariate."""

    def __init__(self, covariates, intercept=True):
        self.covariates = dict(covariates)
        self.intercept = intercept
        self.names = (["intercept"] if intercept else []) + list(self.covariates)

    def __call__(self, points):
        pts, _ = _pts(points)
        cols = [np.ones(len(pts))] if self.intercept else []
        cols += [np.asarray(f(pts), dtype=float).reshape(-1) for f in self.covariates.values()]
        return np.column_stack(cols)

    def describe(self):
        return {"kind": "linear", "names": self.names}


class BandedDistanceDesign:
    """Quadratic trend, distance-to-fault bands, volcano and plate distances.

    Columns: 1, x1, x2, x1^2, x1 x2, x2^2, five band columns
    ``I{band_k}(D_f) * D_f`` delimited by the four knots, then D_v, D_pb.
    """

    def __init__(self, fault, volcano, plate, knots=(6.73, 43.48, 54.783, 112.0)):
        knots = tuple(float(k) for k in knots)
        if len(knots) != 4 or any(b <= a for a, b in zip(knots[:-1], knots[1:])):
            raise InvalidModelError("knots must be four strictly increasing values")
        self.fault, self.volcano, self.plate = fault, volcano, plate
        self.knots = knots
        self.names = ["b0", "x1", "x2", "x1^2", "x1*x2", "x2^2",
                      "Df_band1", "Df_band2", "Df_band3", "Df_band4", "Df_band5", "Dv", "Dpb"]

    def __call__(self, points):
        pts, _ = _pts(points)
        x1, x2 = pts[:, 0], pts[:, 1]
        df = np.asarray(self.fault(pts), dtype=float).reshape(-1)
        dv = np.asarray(self.volcano(pts), dtype=float).reshape(-1)
        dpb = np.asarray(self.plate(pts), dtype=float).reshape(-1)
        edges = (-np.inf,) + self.knots + (np.inf,)
        bands = [np.where((df > lo) & (df <= hi), df, 0.0) for lo, hi in zip(edges[:-1], edges[1:])]
        # the first band is closed at zero: I{D_f <= phi_1}
        bands[0] = np.where(df <= self.knots[0], df, 0.0)
        return np.column_stack([np.ones_like(x1), x1, x2, x1 * x1, x1 * x2, x2 * x2, *bands, dv, dpb])

    def describe(self):
        return {"kind": "banded_distance", "knots": list(self.knots)}


# ----------------------------------------------------------------------
# intensity models


class IntensityModel:
    """Intensity function lambda(x) >= 0."""

    breaklines = ()

    def __call__(self, points):
        raise NotImplementedError

    def describe(self):
        return {"kind": type(self).__name__}


@dataclass(frozen=True)
class ConstantIntensity(IntensityModel):
    value: float

    def __post_init__(self):
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise InvalidModelError("constant intensity must be finite and non-negative")

    def __call__(self, points):
        pts, single = _pts(points)
        out = np.full(len(pts), float(self.value))
        return float(out[0]) if single else out

    def describe(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True, eq=False)
class PiecewiseIntensity(IntensityModel):
    """Constant value per region; the first region containing a point wins."""

    regions: tuple
    values: tuple

    def __post_init__(self):
        regions = tuple(self.regions)
        values = tuple(float(v) for v in self.values)
        if len(regions) != len(values) or not regions:
            raise InvalidModelError("need one value per region")
        if any(not isinstance(r, Window) for r in regions):
            raise InvalidModelError("regions must be Window instances")
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise InvalidModelError("piecewise intensity values must be finite and non-negative")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "values", values)

    @property
    def breaklines(self):
        lines = []
        for r in self.regions:
            for ring in r.rings:
                lines.append(np.vstack([ring, ring[:1]]))
        return tuple(lines)

    def region_index(self, points):
        pts, _ = _pts(points)
        idx = np.full(len(pts), -1)
        for k, r in enumerate(self.regions):
            free = idx < 0
            if not np.any(free):
                break
            hit = np.zeros(len(pts), dtype=bool)
            hit[free] = r.contains(pts[free])
            idx[hit] = k
        return idx

    def __call__(self, points):
        pts, single = _pts(points)
        idx = self.region_index(pts)
        if np.any(idx < 0):
            k = int(np.flatnonzero(idx < 0)[0])
            raise EvaluationError(f"point {tuple(pts[k])} is outside every region of the partition")
        out = np.asarray(self.values)[idx]
        return float(out[0]) if single else out

    def describe(self):
        return {"kind": "piecewise", "values": list(self.values),
                "regions": [r.outer.tolist() for r in self.regions]}


@dataclass(frozen=True)
class ThinnedClusterIntensity(IntensityModel):
    """lambda(x) = kappa * mu * p(x) of a p-thinned Matérn cluster process."""

    kappa: float
    mu: float
    thinning: ThinningField

    def __post_init__(self):
        if not (self.kappa >= 0 and self.mu >= 0):
            raise InvalidModelError("kappa and mu must be non-negative")

    @property
    def breaklines(self):
        return self.thinning.breaklines

    def __call__(self, points):
        pts, single = _pts(points)
        out = self.kappa * self.mu * np.asarray(self.thinning(pts), dtype=float).reshape(-1)
        return float(out[0]) if single else out

    def describe(self):
        return {"kind": "thinned_cluster", "kappa": self.kappa, "mu": self.mu,
                "thinning": self.thinning.describe()}


@dataclass(frozen=True, eq=False)
class LogLinearIntensity(IntensityModel):
    """lambda(x) = exp(design(x) @ coefficients)."""

    design: object
    coefficients: np.ndarray
    std_errors: np.ndarray = field(default=None)

    def __post_init__(self):
        beta = np.array(self.coefficients, dtype=float).ravel()
        if not np.all(np.isfinite(beta)):
            raise InvalidModelError("non-finite log-linear coefficients")
        beta.setflags(write=False)
        object.__setattr__(self, "coefficients", beta)

    @property
    def names(self):
        return list(getattr(self.design, "names", [f"b{k}" for k in range(len(self.coefficients))]))

    def log_intensity(self, points):
        pts, _ = _pts(points)
        X = self.design(pts)
        if X.shape[1] != len(self.coefficients):
            raise EvaluationError("design width does not match the number of coefficients")
        if not np.all(np.isfinite(X)):
            k = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
            raise EvaluationError(f"covariate not evaluable at {tuple(pts[k])}")
        return X @ self.coefficients

    def __call__(self, points):
        pts, single = _pts(points)
        out = np.exp(self.log_intensity(pts))
        return float(out[0]) if single else out

    def describe(self):
        d = getattr(self.design, "describe", lambda: {})()
        return {"kind": "log_linear", "design": d, "coefficients": self.coefficients.tolist()}


def eval_intensity(model, x):
    """lambda(x) for a single point (float) or an array of points."""
    out = model(x)
    return float(out) if np.ndim(out) == 0 else np.asarray(out, dtype=float)


def half_plane_partition(window, v=0.5, axis=0):
    """Split the bounding box of ``window`` at ``x_axis = v`` into two rectangles."""
    x0, y0, x1, y1 = window.bounds
    if axis == 0:
        return (Window.rectangle(x0, y0, v, y1), Window.rectangle(v, y0, x1, y1))
    return (Window.rectangle(x0, y0, x1, v), Window.rectangle(x0, v, x1, y1))
