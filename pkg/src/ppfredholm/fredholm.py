"""Galerkin solution of the Fredholm equation for the prediction weights.

The weight function w(.; x_o) solves

    w(x) + integral k(x, y) w(y) dy = f(x; x_o)   on W_obs,

and the predictor is the sum of w over the observed points.  With the
excess e = g - 1 and c(y) = integral lambda(z) e(|z - y|) dz, the default
normalization uses Lambda = integral lambda:

    k(x, y)    = lambda(y) [e(|x - y|) - c(y) / Lambda]
    f(x; x_o)  = lambda(x_o) [e(|x - x_o|) + (1 - c(x_o)) / Lambda]

The alternative ``"main_text"`` normalization replaces the projection by
1 / area(W_obs).  Discretization with the P1 basis gives (M + K) w = F.
"""
import hashlib
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import shapely
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import AssemblyError, EvaluationError, InvalidArgumentError, NumericError, SolverStateError
from .geometry import mass_matrix, triangulate

log = logging.getLogger(__name__)

NORMALIZATIONS = ("appendix", "main_text")
EPS = 1e-12
CACHE_VERSION = 1
# dense pair-block budget (entries) for kernel sweeps
_BLOCK_ENTRIES = 6_000_000


def _check_norm(normalization):
    if normalization not in NORMALIZATIONS:
        raise InvalidArgumentError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")


def _finite(vals, points, what):
    bad = ~np.isfinite(vals)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite {what} at {tuple(np.atleast_2d(points)[k])}")


# ----------------------------------------------------------------------
# pointwise kernel and source


def inner_integral(y, lam, g, points, weights):
    """c(y) = integral lambda(z) (g(|z - y|) - 1) dz by the given quadrature."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    lw = weights * np.asarray(lam(points), dtype=float).reshape(-1)
    out = np.empty(len(y))
    for k, yk in enumerate(y):
        out[k] = np.dot(lw, g.excess(np.hypot(*(points - yk).T)))
    return out


def kernel_k(x, y, lam, g, Lambda, nu, c_y, normalization="appendix"):
    """Fredholm kernel k(x, y); ``c_y`` is the inner integral at ``y``."""
    _check_norm(normalization)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(*(x - y).T) if x.ndim > 1 or y.ndim > 1 else math.hypot(*(x - y))
    lam_y = np.asarray(lam(y), dtype=float)
    e = np.asarray(g.excess(r), dtype=float)
    _finite(np.atleast_1d(lam_y * e), np.atleast_2d(y), "kernel value")
    if normalization == "appendix":
        out = lam_y * (e - c_y / Lambda)
    else:
        out = lam_y * (e - c_y / nu + 1.0 - Lambda / nu)
    return float(out) if np.ndim(out) == 0 else out


def source_f(x, x_o, lam, g, Lambda, nu, c_o, normalization="appendix"):
    """Source term f(x; x_o); ``c_o`` is the inner integral at ``x_o``."""
    _check_norm(normalization)
    x = np.asarray(x, dtype=float)
    x_o = np.asarray(x_o, dtype=float)
    lam_o = float(lam(x_o))
    r = np.hypot(*(np.atleast_2d(x) - x_o).T)
    e = np.asarray(g.excess(r), dtype=float)
    if normalization == "appendix":
        out = lam_o * (e + (1.0 - c_o) / Lambda)
    else:
        out = lam_o * (1.0 / nu + e + 1.0 - (c_o + Lambda) / nu)
    _finite(out, np.atleast_2d(x), "source value")
    return float(out[0]) if x.ndim == 1 else out


# ----------------------------------------------------------------------
# pair sweeps


def _spatial_blocks(points, per_block):
    """Index arrays grouping points into compact square cells."""
    lo = points.min(axis=0)
    span = np.maximum(points.max(axis=0) - lo, 1e-12)
    ncell = max(1, int(round(math.sqrt(len(points) / per_block))))
    cell = np.minimum((ncell * (points - lo) / span).astype(np.int64), ncell - 1)
    key = cell[:, 0] * ncell + cell[:, 1]
    order = np.argsort(key, kind="stable")
    bounds = np.flatnonzero(np.diff(key[order])) + 1
    return np.split(order, bounds)


class _PairSweep:
    """Blocked evaluation of E @ V with E[p, q] = e(|x_p - y_q|).

    Pairs beyond the support of e are skipped using a k-d tree.
    """

    def __init__(self, g, rows, cols):
        self.g = g
        self.rows = rows
        self.cols = cols
        self.support = float(getattr(g, "support", math.inf))
        self.tree = cKDTree(cols) if math.isfinite(self.support) else None
        n_near = len(cols)
        if self.tree is not None:
            area = np.prod(np.ptp(cols, axis=0)) or 1.0
            n_near = min(len(cols), int(len(cols) * math.pi * self.support ** 2 / area) + 1)
        self.per_block = max(64, min(4096, _BLOCK_ENTRIES // (4 * n_near + 1)))
        self.pairs = 0

    def blocks(self):
        if self.support <= 0:
            return
        for blk in _spatial_blocks(self.rows, self.per_block):
            pts = self.rows[blk]
            if self.tree is None:
                cand = slice(None)
                cpts = self.cols
            else:
                centre = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
                half = 0.5 * float(np.hypot(*np.ptp(pts, axis=0)))
                cand = np.asarray(self.tree.query_ball_point(centre, half + self.support), dtype=np.int64)
                if not len(cand):
                    continue
                cand.sort()
                cpts = self.cols[cand]
            E = np.asarray(self.g.excess(cdist(pts, cpts)), dtype=float)
            self.pairs += E.size
            yield blk, cand, E


def _excess_matrix(g, rows, cols):
    """Sparse (len(rows), len(cols)) matrix of e(|x - y|) for compact e, dense otherwise."""
    support = float(getattr(g, "support", math.inf))
    if math.isfinite(support):
        if support <= 0:
            return sp.csr_matrix((len(rows), len(cols)))
        D = cKDTree(rows).sparse_distance_matrix(cKDTree(cols), support, output_type="coo_matrix")
        vals = np.asarray(g.excess(D.data), dtype=float)
        return sp.csr_matrix((vals, (D.row, D.col)), shape=(len(rows), len(cols)))
    return np.asarray(g.excess(cdist(rows, cols)), dtype=float)


# ----------------------------------------------------------------------
# operator


@dataclass(eq=False)
class FredholmOperator:
    """Assembled Galerkin system for fixed (mesh, lambda, g).

    Attributes
    ----------
    M : scipy.sparse.csr_matrix
        P1 mass matrix.
    K : ndarray
        Dense kernel matrix; independent of the target point.
    lu : tuple
        LU factorization of M + K as returned by ``scipy.linalg.lu_factor``.
    Lambda, nu : float
        Integral of lambda over the mesh and mesh area.
    """

    mesh: object
    lam: object
    g: object
    M: sp.csr_matrix
    K: np.ndarray
    lu: tuple
    Lambda: float
    nu: float
    normalization: str = "appendix"
    orders: tuple = (2, 4)
    stats: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.mesh.n_nodes

    @property
    def basis_integrals(self):
        return np.asarray(self.M.sum(axis=1)).ravel()

    def fingerprint(self):
        return operator_fingerprint(self.mesh, self.lam, self.g, self.normalization, self.orders)

    def inner(self, y):
        """c(y) computed with the source quadrature."""
        q = self.mesh.quadrature(self.orders[1])
        return inner_integral(y, self.lam, self.g, q.points, q.weights)

    def kernel(self, x, y):
        return kernel_k(x, y, self.lam, self.g, self.Lambda, self.nu, self.inner(np.atleast_2d(y)),
                        self.normalization)

    def source(self, x, x_o):
        return source_f(x, x_o, self.lam, self.g, self.Lambda, self.nu, float(self.inner(x_o)[0]),
                        self.normalization)

    def load_vectors(self, targets):
        """Galerkin load vectors F (N, T), lambda(x_o) and c(x_o) for each target."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        q = self.mesh.quadrature(self.orders[1])
        lam_q = np.asarray(self.lam(q.points), dtype=float).reshape(-1)
        lam_o = np.asarray(self.lam(targets), dtype=float).reshape(-1)
        _finite(lam_o, targets, "intensity")
        E = _excess_matrix(self.g, q.points, targets)
        c_o = np.asarray(E.T @ (q.weights * lam_q)).ravel()
        m = self.basis_integrals
        EF = q.phi.T @ (E.multiply(q.weights[:, None]) if sp.issparse(E) else q.weights[:, None] * E)
        EF = EF.toarray() if sp.issparse(EF) else np.asarray(EF)
        if self.normalization == "appendix":
            const = (1.0 - c_o) / self.Lambda
        else:
            const = 1.0 / self.nu + 1.0 - (c_o + self.Lambda) / self.nu
        F = (EF + np.outer(m, const)) * lam_o[None, :]
        return F, lam_o, c_o

    def solve(self, F):
        if self.lu is None:
            raise SolverStateError("operator has no factorization")
        return linalg.lu_solve(self.lu, F, check_finite=False)

    def apply(self, W):
        """(M + K) @ W."""
        return self.M @ W + self.K @ W


def operator_fingerprint(mesh, lam, g, normalization, orders):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.nodes).tobytes())
    h.update(np.ascontiguousarray(mesh.triangles).tobytes())
    desc = {"lam": _describe(lam), "g": _describe(g), "norm": normalization, "orders": list(orders)}
    h.update(json.dumps(desc, sort_keys=True, default=str).encode())
    return h.hexdigest()


def _describe(model):
    d = getattr(model, "describe", None)
    return d() if callable(d) else repr(model)


def _rank_one_update(K, u, v, rows=1024):
    """K += outer(u, v) in row chunks, avoiding an N x N temporary."""
    for i in range(0, K.shape[0], rows):
        K[i:i + rows] += np.outer(u[i:i + rows], v)


def assemble(mesh, lam, g, orders=(2, 4), normalization="appendix", factorize=True):
    """Assemble M and K and factorize M + K.

    Parameters
    ----------
    mesh : TriangleMesh
    lam : callable
        Intensity model.
    g : PairCorrelationModel
        Must provide ``excess(r) = g(r) - 1`` and ``support``.
    orders : (int, int)
        Quadrature orders for the double integrals in K and for single
        integrals (load vectors, inner integral at targets).
    normalization : {"appendix", "main_text"}

    Returns
    -------
    FredholmOperator
    """
    _check_norm(normalization)
    t0 = time.perf_counter()
    M = mass_matrix(mesh)
    q = mesh.quadrature(orders[0])
    lam_q = np.asarray(lam(q.points), dtype=float).reshape(-1)
    _finite(lam_q, q.points, "intensity")
    if np.any(lam_q < 0):
        raise NumericError("negative intensity at a quadrature node")
    _finite(np.asarray(g.excess(np.array([0.0, 1e-6, 1.0])), dtype=float), np.zeros((3, 2)), "pcf value")
    lw = q.weights * lam_q
    Lambda = float(np.sum(lw))
    nu = float(mesh.total_area)
    if not Lambda > 0:
        raise AssemblyError("integral of the intensity over the window is zero")
    N = mesh.n_nodes
    # B[i, p] = phi_i(x_p) w_p ; BL[j, q] = phi_j(y_q) w_q lambda(y_q)
    B = q.phi.multiply(q.weights[:, None]).T.tocsc()
    BL = q.phi.multiply(lw[:, None]).T.tocsc()
    K = np.zeros((N, N))
    c = np.zeros(len(q))
    sweep = _PairSweep(g, q.points, q.points)
    for blk, cand, E in sweep.blocks():
        c[blk] = E @ lw[cand]
        Bi = B[:, blk]
        ni = np.unique(Bi.indices)
        BLj = BL[:, cand]
        nj = np.unique(BLj.indices)
        T1 = BLj.tocsr()[nj] @ E.T
        K[np.ix_(ni, nj)] += Bi.tocsr()[ni] @ T1.T
    _finite(c, q.points, "inner integral")
    m = np.asarray(M.sum(axis=1)).ravel()
    qv = q.phi.T @ (lw * c)
    if normalization == "appendix":
        _rank_one_update(K, -m / Lambda, qv)
    else:
        lv = q.phi.T @ lw
        _rank_one_update(K, -m / nu, qv)
        _rank_one_update(K, (1.0 - Lambda / nu) * m, lv)
    if not np.all(np.isfinite(K)):
        raise AssemblyError("non-finite entries in the kernel matrix")
    stats = {
        "nodes": N,
        "triangles": mesh.n_triangles,
        "quadrature_nodes": len(q),
        "pair_evaluations": int(sweep.pairs),
        "triangle_pairs": int(sweep.pairs // (q.weights.size // mesh.n_triangles) ** 2),
        "assembly_seconds": time.perf_counter() - t0,
    }
    op = FredholmOperator(mesh, lam, g, M, K, None, Lambda, nu, normalization, tuple(orders), stats)
    if factorize:
        factorize_operator(op)
    log.info("assembled %d x %d operator in %.1fs", N, N, time.perf_counter() - t0)
    return op


def factorize_operator(op):
    t0 = time.perf_counter()
    A = op.K.copy()
    Mc = op.M.tocoo()
    Mc.sum_duplicates()
    A[Mc.row, Mc.col] += Mc.data
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            lu = linalg.lu_factor(A, overwrite_a=True, check_finite=False)
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as exc:
            raise AssemblyError(f"M + K is singular ({exc}); refine the mesh") from None
    d = np.abs(np.diag(lu[0]))
    if d.min() <= 1e-14 * d.max():
        raise AssemblyError("M + K is numerically singular; refine the mesh")
    op.lu = lu
    op.stats["factor_seconds"] = time.perf_counter() - t0
    return op


def build_mesh(window, target_edge, lam=None):
    """Mesh of ``window`` conforming to the discontinuities of ``lam``."""
    return triangulate(window, target_edge, breaklines=getattr(lam, "breaklines", ()))


# ----------------------------------------------------------------------
# weight fields and predictions


@dataclass(eq=False)
class WeightField:
    """P1 weight function w(.; x_o) with solver diagnostics."""

    operator: FredholmOperator
    x_o: np.ndarray
    coefficients: np.ndarray
    lam_o: float
    solver_residual: float
    unbiasedness: float = float("nan")

    def __call__(self, points):
        P, ok = self.operator.mesh.interpolation_matrix(points)
        if not np.all(ok):
            k = int(np.flatnonzero(~ok)[0])
            raise EvaluationError(f"point {tuple(np.atleast_2d(points)[k])} is outside the mesh")
        return P @ self.coefficients


def _solver_residuals(op, W, F):
    R = op.apply(W) - F
    num = np.linalg.norm(R, axis=0)
    den = np.maximum(np.linalg.norm(F, axis=0), EPS)
    return np.where(np.linalg.norm(F, axis=0) > 0, num / den, num)


def _in_window(op, targets):
    window = op.mesh.window
    if window is None:
        tri, _ = op.mesh.locate(targets, tol=-1e-9)
        return tri >= 0
    on_edge = shapely.distance(window.polygon.boundary, shapely.points(targets)) <= 1e-12
    return window.contains(targets) & ~on_edge


def solve_weights(op, x_o):
    """Weight field for one target point (warns if x_o lies inside W_obs)."""
    x_o = np.asarray(x_o, dtype=float).reshape(2)
    if op.lu is None:
        raise SolverStateError("operator has not been factorized")
    if _in_window(op, x_o[None, :])[0]:
        warnings.warn(f"target {tuple(x_o)} lies inside the observation window", stacklevel=2)
    F, lam_o, _ = op.load_vectors(x_o[None, :])
    W = op.solve(F)
    res = _solver_residuals(op, W, F)[0]
    wf = WeightField(op, x_o, W[:, 0], float(lam_o[0]), float(res))
    wf.unbiasedness = unbiasedness_residual(wf, op.lam)
    return wf


def solve_weights_batch(op, targets):
    """Coefficient matrix (N, T) plus lambda(x_o) and solver residuals."""
    F, lam_o, _ = op.load_vectors(targets)
    W = op.solve(F)
    return W, lam_o, _solver_residuals(op, W, F)


def _pattern_row(op, pattern):
    """Row vector s with s @ w = sum of w over the pattern points."""
    if not len(pattern):
        return np.zeros(op.n_nodes)
    P, ok = op.mesh.interpolation_matrix(pattern.points)
    if not np.all(ok):
        k = int(np.flatnonzero(~ok)[0])
        raise EvaluationError(f"observed point {tuple(pattern.points[k])} is outside the mesh")
    return np.asarray(P.sum(axis=0)).ravel()


def weight_profile(wf, edges, order=4):
    """Angular average of w(.; x_o) in annuli around x_o.

    Returns the area-weighted mean of the weight field over the part of
    each annulus ``edges[k] <= |x - x_o| < edges[k + 1]`` covered by the
    mesh; annuli missing the mesh are NaN.
    """
    edges = np.asarray(edges, dtype=float)
    q = wf.operator.mesh.quadrature(order)
    r = np.hypot(*(q.points - wf.x_o).T)
    vals = q.phi @ wf.coefficients
    k = np.searchsorted(edges, r, side="right") - 1
    ok = (k >= 0) & (k < len(edges) - 1)
    n = len(edges) - 1
    area = np.bincount(k[ok], q.weights[ok], minlength=n)
    total = np.bincount(k[ok], q.weights[ok] * vals[ok], minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(area > 0, total / area, np.nan)


def predict(wf, pattern):
    """Predicted local intensity: sum of w(x; x_o) over the observed points."""
    if not len(pattern):
        return 0.0
    return float(_pattern_row(wf.operator, pattern) @ wf.coefficients)


def unbiasedness_residual(wf, lam, order=4):
    """|integral lambda w - lambda(x_o)| / max(lambda(x_o), eps)."""
    op = wf.operator
    q = op.mesh.quadrature(order)
    integ = float(np.dot(q.weights * np.asarray(lam(q.points), dtype=float).reshape(-1),
                         q.phi @ wf.coefficients))
    lam_o = float(lam(wf.x_o))
    return abs(integ - lam_o) / max(lam_o, EPS)


def unbiasedness_residuals(op, W, lam_o, order=4):
    q = op.mesh.quadrature(order)
    a = q.phi.T @ (q.weights * np.asarray(op.lam(q.points), dtype=float).reshape(-1))
    return np.abs(a @ W - lam_o) / np.maximum(lam_o, EPS)


def prediction_variance(wf, lam=None, g=None):
    """Error variance of the predictor for a weight field.

    integral lambda w^2 + double integral lambda(x) lambda(y) w(x) w(y) (g - 1),
    both by the kernel quadrature of the operator.
    """
    op = wf.operator
    return float(prediction_variances(op, wf.coefficients[:, None], lam, g)[0])


def prediction_variances(op, W, lam=None, g=None):
    lam = lam or op.lam
    g = g or op.g
    q = op.mesh.quadrature(op.orders[0])
    lw = q.weights * np.asarray(lam(q.points), dtype=float).reshape(-1)
    Wq = q.phi @ W
    first = (lw[:, None] * Wq * Wq).sum(axis=0)
    V = lw[:, None] * Wq
    second = np.zeros(W.shape[1])
    for blk, cand, E in _PairSweep(g, q.points, q.points).blocks():
        second += np.einsum("ij,ij->j", V[blk], E @ V[cand])
    var = first + second
    scale = np.maximum(np.abs(first), EPS)
    if np.any(var < -1e-8 * scale):
        warnings.warn("negative prediction variance: the pair correlation may be inadmissible",
                      stacklevel=2)
    return var


@dataclass(eq=False)
class PredictionGrid:
    """Predictions over target points.

    ``mask`` is True where a value was produced; ``reasons`` explains the
    masked targets.  ``shape`` is (nx, ny) for regular grids, with targets
    in x-major order.
    """

    targets: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    reasons: dict = field(default_factory=dict)
    variance: np.ndarray = None
    shape: tuple = None
    bounds: tuple = None
    clamped: bool = False

    def __len__(self):
        return len(self.targets)

    def clamp(self):
        """Copy with negative values set to zero (for map rendering)."""
        vals = np.where(self.mask & (self.values < 0), 0.0, self.values)
        return PredictionGrid(self.targets, vals, self.mask, dict(self.reasons), self.variance,
                              self.shape, self.bounds, True)

    @property
    def negative_count(self):
        return int(np.sum(self.mask & (self.values < 0)))

    def as_image(self):
        if self.shape is None:
            raise InvalidArgumentError("targets do not form a regular grid")
        return np.where(self.mask, self.values, np.nan).reshape(self.shape)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            cols = ["x", "y", "lambda_hat"] + (["variance"] if self.variance is not None else [])
            fh.write(",".join(cols) + "\n")
            for k, (x, y) in enumerate(self.targets.tolist()):
                if self.mask[k]:
                    row = [repr(x), repr(y), repr(float(self.values[k]))]
                    if self.variance is not None:
                        row.append(repr(float(self.variance[k])))
                else:
                    row = [repr(x), repr(y), "nan"] + (["nan"] if self.variance is not None else [])
                fh.write(",".join(row) + "\n")


def grid_targets(bounds, nx, ny):
    """Cell-centred regular grid over (xmin, ymin, xmax, ymax), x-major order."""
    x0, y0, x1, y1 = bounds
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def predict_grid(op, pattern, targets, clamp=False, variance=False, shape=None, bounds=None):
    """Predictions at many targets with one factorization.

    Targets inside the observation window or with a non-evaluable intensity
    are masked with a reason; the remaining targets are solved together.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    T = len(targets)
    mask = np.ones(T, dtype=bool)
    reasons = {}
    inside = _in_window(op, targets)
    for k in np.flatnonzero(inside):
        reasons[int(k)] = "target inside the observation window"
    mask &= ~inside
    try:
        lam_vals = np.asarray(op.lam(targets), dtype=float).reshape(-1)
        bad = ~np.isfinite(lam_vals)
    except Exception as exc:  # evaluate one by one to isolate failures
        bad = np.zeros(T, dtype=bool)
        for k in range(T):
            try:
                bad[k] = not np.isfinite(float(op.lam(targets[k])))
            except Exception:
                bad[k] = True
                reasons.setdefault(k, f"intensity not evaluable: {exc}")
    for k in np.flatnonzero(bad & mask):
        reasons.setdefault(int(k), "intensity not finite at target")
    mask &= ~bad
    values = np.full(T, np.nan)
    var = np.full(T, np.nan) if variance else None
    idx = np.flatnonzero(mask)
    if len(idx):
        W, _, res = solve_weights_batch(op, targets[idx])
        values[idx] = _pattern_row(op, pattern) @ W if len(pattern) else 0.0
        if variance:
            var[idx] = prediction_variances(op, W)
        if np.any(res > 1e-10):
            log.warning("solver residual %.3g above tolerance", float(res.max()))
    grid = PredictionGrid(targets, values, mask, reasons, var, shape, bounds)
    return grid.clamp() if clamp else grid


# ----------------------------------------------------------------------
# persistence


def save_operator(op, path):
    """Versioned npz cache of M, K and the LU factors."""
    M = op.M.tocsr()
    np.savez(
        path,
        header=np.array(f"ppfredholm-operator v{CACHE_VERSION}"),
        fingerprint=np.array(op.fingerprint()),
        normalization=np.array(op.normalization),
        orders=np.array(op.orders),
        nodes=op.mesh.nodes,
        triangles=op.mesh.triangles,
        M_data=M.data, M_indices=M.indices, M_indptr=M.indptr,
        K=op.K,
        lu=op.lu[0] if op.lu is not None else np.zeros((0, 0)),
        piv=op.lu[1] if op.lu is not None else np.zeros(0, dtype=np.int32),
        scalars=np.array([op.Lambda, op.nu]),
        stats=np.array(json.dumps(op.stats)),
    )


def load_operator(path, mesh, lam, g):
    """Load a cached operator; the fingerprint must match (mesh, lam, g)."""
    with np.load(path, allow_pickle=False) as z:
        header = str(z["header"])
        if header != f"ppfredholm-operator v{CACHE_VERSION}":
            raise SolverStateError(f"{path}: unsupported cache header {header!r}")
        norm = str(z["normalization"])
        orders = tuple(int(o) for o in z["orders"])
        expected = operator_fingerprint(mesh, lam, g, norm, orders)
        if str(z["fingerprint"]) != expected:
            raise SolverStateError(f"{path}: cache does not match the mesh and moments")
        N = mesh.n_nodes
        M = sp.csr_matrix((z["M_data"], z["M_indices"], z["M_indptr"]), shape=(N, N))
        lu = (z["lu"], z["piv"]) if z["lu"].size else None
        Lambda, nu = (float(v) for v in z["scalars"])
        stats = json.loads(str(z["stats"]))
        return FredholmOperator(mesh, lam, g, M, z["K"], lu, Lambda, nu, norm, orders, stats)


def write_weights(wf, path):
    """Weight field sampled at mesh nodes as ``x,y,w`` CSV."""
    nodes = wf.operator.mesh.nodes
    with open(path, "w", newline="") as fh:
        fh.write("x,y,w\n")
        for (x, y), w in zip(nodes.tolist(), wf.coefficients.tolist()):
            fh.write(f"{x!r},{y!r},{w!r}\n")
