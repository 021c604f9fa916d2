"""Moment estimation: kernel pcf, piecewise MLE, pcf NLS, log-linear Poisson fit."""
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import shapely
from scipy import linalg
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from ..errors import FitFailure, InvalidArgumentError, InvalidModelError
from ..geometry import triangulate
from .intensity import LogLinearIntensity, PiecewiseIntensity
from .pcf import EmpiricalPCF, ExpPlusOnePCF, ExpScaledPCF, MaternPCF

STOYAN = 0.15
# default lower end of the pcf fit range, in kernel bandwidths
FIT_RMIN_BANDWIDTHS = 4.0


# ----------------------------------------------------------------------
# kernel pair correlation estimate


@lru_cache(maxsize=8)
def _set_covariance(window, reach, n):
    """Bilinear interpolant of u -> area(W ∩ (W + u)) on [-reach, reach]^2."""
    poly = window.polygon
    ax = np.linspace(-reach, reach, n)
    ux, uy = np.meshgrid(ax, ax, indexing="ij")
    vals = np.empty(ux.shape)
    half = n // 2 + 1
    # gamma(u) = gamma(-u): compute one half and mirror
    for i in range(half):
        shifted = [shapely.affinity.translate(poly, ux[i, j], uy[i, j]) for j in range(n)]
        vals[i] = shapely.area(shapely.intersection(poly, shifted))
    vals[half:] = vals[: n - half][::-1, ::-1]
    return RegularGridInterpolator((ax, ax), vals)


def translation_weights(window, vectors, grid=161):
    """Set covariance area(W ∩ (W + u)) at lag vectors ``u``."""
    vec = np.atleast_2d(vectors)
    if not len(vec):
        return np.zeros(0)
    reach = float(np.abs(vec).max()) * 1.0001 + 1e-12
    reach = math.ceil(reach * 100.0) / 100.0
    return _set_covariance(window, reach, grid)(vec)


def estimate_pcf_kernel(pattern, lam, r_grid=None, bandwidth=None, n_grid=512):
    """Kernel estimate of the pair correlation function.

    Epanechnikov smoothing of the inter-point distances, each pair weighted
    by 1 / (lambda(x) lambda(y) area(W ∩ (W + x - y))) (translation edge
    correction).

    Parameters
    ----------
    pattern : PointPattern
    lam : callable
        Intensity model evaluated at the data points.
    r_grid : array_like, optional
        Distances, all > 0.  Defaults to ``n_grid`` points on (0, s / 4]
        with ``s`` the shorter side of the bounding box of W.
    bandwidth : float, optional
        Kernel half-width; default ``0.15 / sqrt(n / area)``.

    Returns
    -------
    EmpiricalPCF
        With ``flagged`` marking r < bandwidth / 2.
    """
    n = len(pattern)
    if n < 2:
        raise InvalidArgumentError("pair correlation estimation needs at least 2 points")
    window = pattern.window
    if r_grid is None:
        x0, y0, x1, y1 = window.bounds
        rmax = 0.25 * min(x1 - x0, y1 - y0)
        r = rmax * np.arange(1, n_grid + 1) / n_grid
    else:
        r = np.asarray(r_grid, dtype=float).ravel()
        r = r[r > 0]
        if r.size < 2 or np.any(np.diff(r) <= 0):
            raise InvalidArgumentError("r grid must be increasing with at least 2 positive values")
    lam_x = np.asarray(lam(pattern.points), dtype=float).reshape(-1)
    if np.any(~np.isfinite(lam_x)) or np.any(lam_x <= 0):
        k = int(np.flatnonzero(~(lam_x > 0))[0])
        raise InvalidModelError(f"intensity is not positive at data point {tuple(pattern.points[k])}")
    b = float(bandwidth) if bandwidth is not None else STOYAN / math.sqrt(n / window.area)
    if not b > 0:
        raise InvalidArgumentError("bandwidth must be positive")

    pairs = cKDTree(pattern.points).query_pairs(r[-1] + b, output_type="ndarray")
    g = np.zeros_like(r)
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        u = pattern.points[j] - pattern.points[i]
        d = np.hypot(u[:, 0], u[:, 1])
        gamma = translation_weights(window, u)
        # unordered pairs counted twice
        wt = 2.0 / (lam_x[i] * lam_x[j] * gamma)
        lo = np.searchsorted(r, d - b, side="left")
        hi = np.searchsorted(r, d + b, side="right")
        span = hi - lo
        for off in range(int(span.max()) if len(span) else 0):
            sel = off < span
            k = lo[sel] + off
            t = (r[k] - d[sel]) / b
            kern = np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t) / b, 0.0)
            np.add.at(g, k, kern * wt[sel])
    g /= 2.0 * np.pi * r
    return EmpiricalPCF(r, g, flagged=r < 0.5 * b, bandwidth=b)


# ----------------------------------------------------------------------
# first-order fits


def fit_intensity_piecewise_mle(pattern, regions):
    """Count / area per region, restricted to the pattern window."""
    regions = tuple(regions)
    if not regions:
        raise InvalidArgumentError("need at least one region")
    values = []
    poly = pattern.window.polygon
    assigned = np.zeros(len(pattern), dtype=bool)
    for k, reg in enumerate(regions):
        a = shapely.intersection(poly, reg.polygon).area
        if a <= 0:
            raise InvalidArgumentError(f"region {k} has zero area inside the window")
        hit = reg.contains(pattern.points) & ~assigned if len(pattern) else assigned
        assigned |= hit
        values.append(float(hit.sum()) / a)
    return PiecewiseIntensity(regions, tuple(values))


@dataclass
class LogLinearFit:
    model: LogLinearIntensity
    std_errors: np.ndarray
    loglik: float
    iterations: int
    score_norm: float
    names: list = field(default_factory=list)


def _rank_check(X, names, tol=1e-10):
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * diag[0])) if diag.size else 0
    if rank == X.shape[1]:
        return
    dropped = piv[rank:]
    kept = piv[:rank]
    involved = set()
    for c in dropped:
        coef, *_ = linalg.lstsq(X[:, kept], X[:, c])
        involved.add(int(c))
        involved.update(int(kept[m]) for m in np.flatnonzero(np.abs(coef) > 1e-8))
    cols = [names[c] for c in sorted(involved)]
    raise FitFailure(f"design matrix is rank deficient; collinear columns: {', '.join(cols)}",
                     columns=cols)


def fit_intensity_loglinear(pattern, design, mesh=None, target_edge=None, order=2,
                            max_iter=100, tol=1e-8):
    """Maximum-likelihood log-linear intensity by quadrature-weighted Poisson regression.

    The log-likelihood sum log lambda(x_i) - integral lambda is approximated with
    dummy points at mesh quadrature nodes (Berman-Turner device) and maximized
    by Newton / iteratively reweighted least squares.

    Parameters
    ----------
    pattern : PointPattern
    design : callable
        Maps points (n, 2) to the design matrix (n, p); ``design.names``
        labels the columns.
    mesh : TriangleMesh, optional
        Quadrature mesh of the pattern window.  Built with ``target_edge``
        (default diam / 60) when omitted.

    Returns
    -------
    LogLinearFit
    """
    window = pattern.window
    if mesh is None:
        mesh = triangulate(window, target_edge or window.diameter / 60.0)
    q = mesh.quadrature(order)
    Xd = np.asarray(design(pattern.points), dtype=float) if len(pattern) else None
    Xq = np.asarray(design(q.points), dtype=float)
    p = Xq.shape[1]
    names = list(getattr(design, "names", [f"b{k}" for k in range(p)]))
    Xall = Xq if Xd is None else np.vstack([Xd, Xq])
    if not np.all(np.isfinite(Xall)):
        raise FitFailure("covariates are not finite at every data and quadrature point")
    _rank_check(Xall, names)
    n = len(pattern)
    if n == 0:
        raise FitFailure("no data points: the log-linear MLE does not exist")

    # standardize columns; an exactly constant column acts as intercept
    sd = Xall.std(axis=0)
    const = sd == 0
    mean = np.where(const, 0.0, Xall.mean(axis=0)) if np.any(const) else np.zeros(p)
    scale = np.where(const, 1.0, sd)
    Zd = (Xd - mean) / scale
    Zq = (Xq - mean) / scale
    w = q.weights
    sum_d = Zd.sum(axis=0)

    def loglik(beta):
        eta_q = Zq @ beta
        return float(Zd.sum(axis=0) @ beta - np.dot(w, np.exp(eta_q))), eta_q

    beta = np.zeros(p)
    if np.any(const):
        c = int(np.flatnonzero(const)[0])
        beta[c] = math.log(n / window.area) / Xall[0, c]
    ll, eta = loglik(beta)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        mu = w * np.exp(eta)
        grad = sum_d - Zq.T @ mu
        H = (Zq * mu[:, None]).T @ Zq
        try:
            step = linalg.solve(H, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            raise FitFailure("information matrix is singular", best=beta) from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new, eta_new = loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
            if t < 1e-10:
                raise FitFailure("line search failed", best=beta)
        # deviance = -2 loglik
        change = 2.0 * abs(ll_new - ll)
        beta, ll, eta = cand, ll_new, eta_new
        if change < tol:
            converged = True
            break
    if not converged or not np.all(np.isfinite(beta)) or np.abs(beta).max() > 1e3:
        raise FitFailure(f"no convergence after {it} iterations (possible separation)", best=beta)

    mu = w * np.exp(eta)
    grad = sum_d - Zq.T @ mu
    H = (Zq * mu[:, None]).T @ Zq
    cov_z = linalg.inv(H)
    # back-transform beta_orig = A beta_z
    A = np.diag(1.0 / scale)
    if np.any(const):
        c = int(np.flatnonzero(const)[0])
        A[c, :] -= (mean / scale) / Xall[0, c]
        A[c, c] = 1.0
    beta_orig = A @ beta
    cov = A @ cov_z @ A.T
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    score_orig = np.linalg.norm(np.linalg.solve(A.T, grad))
    model = LogLinearIntensity(design, beta_orig, se)
    return LogLinearFit(model, se, ll, it, float(score_orig), names)


# ----------------------------------------------------------------------
# pcf nonlinear least squares


def _initial_guess(family, r, g):
    e0 = max(float(g[0]) - 1.0, 1e-3)
    if family == "matern":
        below = np.flatnonzero(g - 1.0 < 0.05 * e0)
        reach = r[below[0]] if len(below) else r[-1]
        a2 = max(reach / 2.0, r[0])
        return np.array([1.0 / (math.pi * a2 * a2 * e0), a2])
    mid = r[len(r) // 2]
    a3 = 1.0 / e0
    em = max(float(np.interp(mid, r, g)) - 1.0, 1e-3 * e0)
    a4 = max(-math.log(a3 * em) / math.sqrt(mid), 1e-3)
    return np.array([a3, a4])


def fit_pcf_nls(emp, family="matern", r_range=None, initial=None, max_iter=200, xtol=1e-8,
                wrapped=True):
    """Least-squares fit of a parametric pcf to a tabulated estimate.

    Minimizes sum_k (g(r_k) - g_emp(r_k))^2 over the knots inside
    ``r_range`` with Levenberg-Marquardt on log-parameters.

    Parameters
    ----------
    emp : EmpiricalPCF
    family : {"matern", "exp_plus_one", "exp_scaled"}
    r_range : (float, float), optional
        Inclusive fit range.  Defaults to r >= 4 * bandwidth for kernel
        estimates (the smoothing bias near r = 0 is severe) and to all knots
        otherwise.
    initial : sequence of float, optional
        Starting parameters, (alpha1, alpha2), (alpha3, alpha4) or (a1, a2).
    wrapped : bool
        Form of the exp_scaled family (see :class:`ExpScaledPCF`).

    Raises
    ------
    FitFailure
        On non-convergence; ``best`` holds the last model.
    """
    family = family.lower()
    if family not in ("matern", "exp_plus_one", "exp_scaled"):
        raise InvalidArgumentError(f"cannot fit pcf family {family!r}")
    r, g = emp.r, emp.g
    if r_range is None and emp.bandwidth is not None:
        r_range = (FIT_RMIN_BANDWIDTHS * emp.bandwidth, math.inf)
    if r_range is not None:
        sel = (r >= r_range[0]) & (r <= r_range[1])
        r, g = r[sel], g[sel]
    if r.size < 5:
        raise InvalidArgumentError("need at least 5 tabulated values in the fit range")
    if initial is None:
        if family == "exp_scaled" and not wrapped:
            initial = _initial_literal(r, g)
        else:
            initial = _initial_guess("matern" if family == "matern" else "exp", r, g)
    x0 = np.asarray(initial, dtype=float)
    if np.any(x0 <= 0) or not np.all(np.isfinite(x0)):
        raise InvalidArgumentError("initial guess must be positive and finite")
    if family == "matern":
        build = MaternPCF
    elif family == "exp_plus_one":
        build = ExpPlusOnePCF
    else:
        def build(a1, a2):
            return ExpScaledPCF(a1, a2, wrapped)

    def resid(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            a, c = np.exp(theta)
            out = build(a, c)(r) - g if np.isfinite(a) and np.isfinite(c) and a > 0 and c > 0 else None
        return out if out is not None and np.all(np.isfinite(out)) else np.full(r.size, 1e6)

    res = least_squares(resid, np.log(x0), method="lm", xtol=xtol, ftol=1e-15, gtol=1e-15,
                        max_nfev=max_iter * (len(x0) + 1))
    model = build(*(float(v) for v in np.exp(res.x)))
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitFailure(f"nls did not converge: {res.message}", best=model)
    return model


def _initial_literal(r, g):
    # log g = -log a1 - a2 sqrt(r), fitted on the positive part
    ok = g > 0
    if ok.sum() < 2:
        return np.array([1.0, 1e-3])
    slope, icpt = np.polyfit(np.sqrt(r[ok]), np.log(g[ok]), 1)
    return np.array([math.exp(-icpt), max(-slope, 1e-3)])


# ----------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class Admissibility:
    admissible: bool
    reasons: tuple = ()
    median_excess: float = float("nan")

    def __bool__(self):
        return self.admissible


def admissibility_check(g_emp, R, predictions=None, threshold=0.05, upper=6000.0):
    """Post-hoc filter on an empirical pcf and (optionally) its predictions.

    (i) median |g - 1| over tabulated r > 2R must be below ``threshold``;
    (ii) predictions must be positive and at most ``upper``.
    """
    far = g_emp.r > 2.0 * R
    if not np.any(far):
        raise InvalidArgumentError(f"no tabulated pcf values beyond 2R = {2.0 * R:g}")
    med = float(np.median(np.abs(g_emp.g[far] - 1.0)))
    reasons = []
    if not med < threshold:
        reasons.append(f"(i) median |g - 1| beyond 2R is {med:.4g} >= {threshold:g}")
    if predictions is not None:
        p = np.asarray(predictions, dtype=float).ravel()
        p = p[np.isfinite(p)]
        if p.size and (p.min() <= 0 or p.max() > upper):
            reasons.append(f"(ii) predictions range [{p.min():.6g}, {p.max():.6g}] "
                           f"outside (0, {upper:g}]")
    return Admissibility(not reasons, tuple(reasons), med)
