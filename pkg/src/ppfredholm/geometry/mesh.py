"""Conforming P1 triangle meshes, quadrature nodes and basis integrals."""
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from ..errors import InvalidGeometryError, MeshParseError, NumericError
from . import quadrature
from .window import SNAP_TOL, Window, segment_distance

_M_LOCAL = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class QuadratureNodes:
    """Physical quadrature nodes of a mesh for one rule.

    ``phi`` is the sparse (Q, N) matrix of basis values at the nodes, so that
    ``phi.T @ (weights * f)`` is the vector of integrals of ``f * phi_i``.
    """

    points: np.ndarray
    weights: np.ndarray
    triangle: np.ndarray
    phi: sp.csr_matrix
    order: int

    def __len__(self):
        return len(self.weights)


class TriangleMesh:
    """Conforming triangulation with the piecewise-linear basis.

    Parameters
    ----------
    nodes : array_like, shape (N, 2)
    triangles : array_like of int, shape (T, 3)
        Zero-based node indices.  Clockwise triangles are rejected.
    window : Window, optional
        The window the mesh tiles, kept for bookkeeping.
    """

    def __init__(self, nodes, triangles, window=None, validate=True):
        nodes = np.array(nodes, dtype=float).reshape(-1, 2)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        nodes.setflags(write=False)
        triangles.setflags(write=False)
        self.nodes = nodes
        self.triangles = triangles
        self.window = window
        self._quad_cache = {}
        if validate:
            self.validate()

    def __repr__(self):
        return f"TriangleMesh(nodes={self.n_nodes}, triangles={self.n_triangles})"

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self):
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self):
        return self.signed_areas

    @property
    def total_area(self):
        return float(math.fsum(self.signed_areas))

    @cached_property
    def edges(self):
        """Unique undirected edges (E, 2) and per-edge triangle counts."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts

    def edge_lengths(self):
        p = self.nodes[self.triangles]
        return np.stack(
            [np.hypot(*(p[:, (k + 1) % 3] - p[:, k]).T) for k in range(3)], axis=1
        )

    @property
    def max_edge(self):
        return float(self.edge_lengths().max())

    def angles(self):
        """Interior angles in degrees, shape (T, 3)."""
        p = self.nodes[self.triangles]
        out = np.empty((self.n_triangles, 3))
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            cosang = (u * v).sum(1) / np.hypot(*u.T) / np.hypot(*v.T)
            out[:, k] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return out

    @property
    def min_angle(self):
        return float(self.angles().min())

    def validate(self):
        """Check positive orientation, index range and conformity."""
        t = self.triangles
        if self.n_triangles == 0:
            raise InvalidGeometryError("mesh has no triangles")
        if t.min() < 0 or t.max() >= self.n_nodes:
            raise InvalidGeometryError("triangle references a missing node")
        bad = np.flatnonzero(self.signed_areas <= 0)
        if len(bad):
            raise InvalidGeometryError(
                f"{len(bad)} degenerate or clockwise triangle(s), first is #{bad[0]}"
            )
        uniq, counts = self.edges
        if np.any(counts > 2):
            raise InvalidGeometryError("non-manifold edge shared by more than two triangles")
        # hanging nodes sit in the interior of an edge used by one triangle only
        bnd = uniq[counts == 1]
        a, b = self.nodes[bnd[:, 0]], self.nodes[bnd[:, 1]]
        mid = 0.5 * (a + b)
        half = 0.5 * np.hypot(*(b - a).T)
        tree = cKDTree(self.nodes)
        for k, cand in enumerate(tree.query_ball_point(mid, half + SNAP_TOL)):
            cand = [c for c in cand if c != bnd[k, 0] and c != bnd[k, 1]]
            if not cand:
                continue
            d = segment_distance(self.nodes[cand], np.array([[a[k], b[k]]]))
            if np.any(np.atleast_1d(d) <= SNAP_TOL):
                raise InvalidGeometryError(f"hanging node on boundary edge {tuple(bnd[k])}")

    # ------------------------------------------------------------------
    # quadrature and point location

    def quadrature(self, order=4):
        """Quadrature nodes for a rule of at least ``order`` (cached)."""
        r = quadrature.rule(order)
        if r.order in self._quad_cache:
            return self._quad_cache[r.order]
        p = self.nodes[self.triangles]
        pts = np.einsum("qk,tkd->tqd", r.bary, p).reshape(-1, 2)
        w = (self.signed_areas[:, None] * r.weights[None, :]).ravel()
        tri = np.repeat(np.arange(self.n_triangles), r.n_points)
        rows = np.repeat(np.arange(len(w)), 3)
        cols = self.triangles[tri].ravel()
        vals = np.tile(r.bary, (self.n_triangles, 1)).ravel()
        phi = sp.csr_matrix((vals, (rows, cols)), shape=(len(w), self.n_nodes))
        for arr in (pts, w, tri):
            arr.setflags(write=False)
        qn = QuadratureNodes(pts, w, tri, phi, r.order)
        self._quad_cache[r.order] = qn
        return qn

    @cached_property
    def _centroid_tree(self):
        return cKDTree(self.nodes[self.triangles].mean(axis=1))

    def barycentric(self, points, tri):
        p = self.nodes[self.triangles[tri]]
        v0 = p[:, 1] - p[:, 0]
        v1 = p[:, 2] - p[:, 0]
        v2 = points - p[:, 0]
        det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
        l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def locate(self, points, tol=1e-9):
        """Containing triangle and barycentric coordinates of each point.

        Returns ``(tri, bary)``; ``tri`` is -1 for points outside the mesh.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(pts)
        tri = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 3))
        todo = np.arange(n)
        # containing triangles are among the nearest centroids (bounded aspect)
        k = 8
        while len(todo) and k <= 128:
            kk = min(k, self.n_triangles)
            _, cand = self._centroid_tree.query(pts[todo], k=kk)
            cand = cand.reshape(len(todo), kk)
            best = np.full(len(todo), -np.inf)
            for j in range(kk):
                b = self.barycentric(pts[todo], cand[:, j])
                score = b.min(axis=1)
                better = score > best
                best = np.where(better, score, best)
                tri[todo[better]] = cand[better, j]
                bary[todo[better]] = b[better]
            found = best >= -tol
            tri[todo[~found]] = -1
            todo = todo[~found]
            if kk == self.n_triangles:
                break
            k *= 4
        return tri, bary

    def interpolation_matrix(self, points):
        """Sparse (n, N) matrix evaluating P1 fields at ``points``.

        Rows of points outside the mesh are empty; the mask of located points
        is returned alongside.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri, bary = self.locate(pts)
        ok = tri >= 0
        rows = np.repeat(np.flatnonzero(ok), 3)
        cols = self.triangles[tri[ok]].ravel()
        vals = bary[ok].ravel()
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(pts), self.n_nodes))
        return mat, ok

    def refine(self):
        """Uniform red refinement: every triangle split into four."""
        uniq, _ = self.edges
        n0 = self.n_nodes
        mids = 0.5 * (self.nodes[uniq[:, 0]] + self.nodes[uniq[:, 1]])
        key = {(int(a), int(b)): n0 + k for k, (a, b) in enumerate(uniq)}

        def m(a, b):
            return key[(a, b) if a < b else (b, a)]

        new = []
        for a, b, c in self.triangles.tolist():
            ab, bc, ca = m(a, b), m(b, c), m(c, a)
            new.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
        return TriangleMesh(np.vstack([self.nodes, mids]), np.array(new), self.window)


def mass_matrix(mesh):
    """Exact P1 mass matrix as a symmetric sparse CSR matrix."""
    a = mesh.signed_areas
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    vals = (a[:, None, None] * _M_LOCAL[None]).reshape(len(a), 9).ravel()
    M = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    M.sum_duplicates()
    return M


def integrate_basis(mesh, f, rule=None):
    """Vector of integrals of ``f * phi_i`` over the mesh.

    Parameters
    ----------
    f : callable
        Maps an (n, 2) array of points to n values.
    rule : int or QuadratureRule, optional
        Quadrature order (default 4).
    """
    order = 4 if rule is None else getattr(rule, "order", rule)
    qn = mesh.quadrature(order)
    vals = np.asarray(f(qn.points), dtype=float).reshape(-1)
    if vals.shape[0] != len(qn):
        vals = np.broadcast_to(vals, (len(qn),))
    bad = ~np.isfinite(vals)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite integrand {vals[k]!r} at quadrature point {tuple(qn.points[k])}")
    return qn.phi.T @ (qn.weights * vals)


# ----------------------------------------------------------------------
# meshing


def _split_ring(ring, h):
    pts = []
    n = len(ring)
    for k in range(n):
        a, b = ring[k], ring[(k + 1) % n]
        m = max(1, int(math.ceil(np.hypot(*(b - a)) / h - 1e-9)))
        for j in range(m):
            pts.append(a + (b - a) * (j / m))
    return np.array(pts)


def _split_line(line, h):
    pts = [line[0]]
    for a, b in zip(line[:-1], line[1:]):
        m = max(1, int(math.ceil(np.hypot(*(b - a)) / h - 1e-9)))
        for j in range(1, m + 1):
            pts.append(a + (b - a) * (j / m))
    return np.array(pts)


def triangulate(window, target_edge, breaklines=(), min_angle=20.0, max_edge_factor=1.5,
                area_factor=0.6, shrink=0.8):
    """Quality constrained Delaunay triangulation of a window.

    Parameters
    ----------
    window : Window
    target_edge : float
        Nominal edge length; every edge of the result is at most
        ``max_edge_factor * target_edge``.
    breaklines : sequence of (k, 2) arrays
        Interior polylines the mesh must conform to, e.g. discontinuities
        of the intensity.  They are clipped to the window.
    min_angle : float
        Minimum angle bound in degrees.
    """
    import shapely
    import triangle as tr
    from shapely.geometry import LineString

    if not isinstance(window, Window):
        raise InvalidGeometryError("triangulate expects a Window")
    if not (target_edge > 0):
        raise InvalidGeometryError("target_edge must be positive")
    h = float(target_edge)
    verts, segs = [], []

    def add_chain(pts, closed):
        base = sum(len(v) for v in verts)
        verts.append(pts)
        n = len(pts)
        stop = n if closed else n - 1
        for k in range(stop):
            segs.append((base + k, base + (k + 1) % n))

    for ring in window.rings:
        add_chain(_split_ring(ring, h), closed=True)
    poly = window.polygon
    for line in breaklines:
        clipped = LineString(np.asarray(line, dtype=float)).intersection(poly)
        for piece in getattr(clipped, "geoms", [clipped]):
            if piece.is_empty or piece.geom_type != "LineString" or piece.length <= SNAP_TOL:
                continue
            add_chain(_split_line(np.asarray(piece.coords), h), closed=False)

    V = np.concatenate(verts)
    # merge coincident vertices (breakline ends on the boundary)
    key = np.round(V / SNAP_TOL).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    V = V[first]
    S = np.array([(inv[a], inv[b]) for a, b in segs if inv[a] != inv[b]])
    S = np.unique(np.sort(S, axis=1), axis=0)
    data = {"vertices": V, "segments": S}
    if window.holes:
        data["holes"] = np.array(
            [np.asarray(shapely.Polygon(hl).representative_point().coords[0]) for hl in window.holes]
        )
    max_area = area_factor * h * h
    res = tr.triangulate(data, f"pq{min_angle:g}a{max_area:.17g}Q")
    for _ in range(30):
        nodes, tris = res["vertices"], res["triangles"]
        p = nodes[tris]
        lengths = np.stack([np.hypot(*(p[:, (k + 1) % 3] - p[:, k]).T) for k in range(3)], axis=1)
        long = lengths.max(axis=1) > max_edge_factor * h
        if not np.any(long):
            break
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        ar = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        res["triangle_max_area"] = np.where(long, shrink * ar, -1.0).reshape(-1, 1)
        res = tr.triangulate(res, f"rpq{min_angle:g}aQ")
    else:  # pragma: no cover - refinement always terminates in practice
        raise InvalidGeometryError("edge-length refinement did not converge")
    nodes = np.asarray(res["vertices"], dtype=float)
    tris = np.asarray(res["triangles"], dtype=np.int64)
    # drop unreferenced vertices
    used = np.unique(tris)
    remap = np.full(len(nodes), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes, tris = nodes[used], remap[tris]
    p = nodes[tris]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    cw = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) < 0
    tris[cw] = tris[cw][:, [0, 2, 1]]
    mesh = TriangleMesh(nodes, tris, window)
    if abs(mesh.total_area - window.area) > 1e-9 * window.area:
        raise InvalidGeometryError(
            f"mesh area {mesh.total_area!r} does not match window area {window.area!r}"
        )
    return mesh


# ----------------------------------------------------------------------
# text format


def save_mesh(mesh, path):
    """Write the line-oriented text format with 1-based ids."""
    lines = [f"NODES {mesh.n_nodes}"]
    lines += [f"{k + 1} {x!r} {y!r}" for k, (x, y) in enumerate(mesh.nodes.tolist())]
    lines.append(f"TRIANGLES {mesh.n_triangles}")
    lines += [f"{k + 1} {a + 1} {b + 1} {c + 1}" for k, (a, b, c) in enumerate(mesh.triangles.tolist())]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path, window=None):
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def header(name):
        nonlocal pos
        if pos >= len(lines):
            raise MeshParseError(f"missing {name} header", pos + 1)
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshParseError(f"expected '{name} <count>'", pos + 1)
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshParseError(f"bad {name} count {parts[1]!r}", pos + 1) from None
        if count <= 0:
            raise MeshParseError(f"empty {name} section", pos + 1)
        pos += 1
        return count

    n = header("NODES")
    nodes = np.empty((n, 2))
    for k in range(n):
        lineno = pos + 1
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file in NODES", lineno)
        parts = lines[pos].split()
        if len(parts) != 3:
            raise MeshParseError("node line needs '<id> <x> <y>'", lineno)
        try:
            idx, x, y = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            raise MeshParseError("malformed node line", lineno) from None
        if idx != k + 1:
            raise MeshParseError(f"node ids must be contiguous from 1, got {idx}", lineno)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise MeshParseError("non-finite node coordinate", lineno)
        nodes[k] = (x, y)
        pos += 1
    m = header("TRIANGLES")
    tris = np.empty((m, 3), dtype=np.int64)
    for k in range(m):
        lineno = pos + 1
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file in TRIANGLES", lineno)
        parts = lines[pos].split()
        if len(parts) != 4:
            raise MeshParseError("triangle line needs '<id> <n1> <n2> <n3>'", lineno)
        try:
            vals = [int(v) for v in parts]
        except ValueError:
            raise MeshParseError("malformed triangle line", lineno) from None
        if vals[0] != k + 1:
            raise MeshParseError(f"triangle ids must be contiguous from 1, got {vals[0]}", lineno)
        for v in vals[1:]:
            if v < 1 or v > n:
                raise MeshParseError(f"node reference {v} out of range 1..{n}", lineno)
        tris[k] = [v - 1 for v in vals[1:]]
        pos += 1
    if pos != len(lines):
        raise MeshParseError("trailing content after TRIANGLES section", pos + 1)
    try:
        return TriangleMesh(nodes, tris, window)
    except InvalidGeometryError as exc:
        raise MeshParseError(f"invalid mesh: {exc}") from exc
