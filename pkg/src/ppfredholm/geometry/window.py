"""Planar windows: a simple outer polygon with disjoint polygonal holes."""
import math

import numpy as np
import shapely
from shapely.geometry import LinearRing, Polygon

from ..errors import InvalidArgumentError, InvalidGeometryError

# points within this distance of an edge count as inside
BOUNDARY_TOL = 1e-12
# vertex-snapping tolerance for conformity checks
SNAP_TOL = 1e-10


def _signed_area(ring):
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _as_ring(coords, what):
    ring = np.array(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise InvalidGeometryError(f"{what}: expected a sequence of (x, y) pairs")
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise InvalidGeometryError(f"{what}: a polygon needs at least 3 vertices")
    if not np.all(np.isfinite(ring)):
        raise InvalidGeometryError(f"{what}: non-finite coordinates")
    if not LinearRing(ring).is_simple:
        raise InvalidGeometryError(f"{what}: polygon is not simple")
    if abs(_signed_area(ring)) <= 0.0:
        raise InvalidGeometryError(f"{what}: polygon has zero area")
    return ring


class Window:
    """Polygonal window with holes.

    The outer ring is stored counterclockwise and holes clockwise.  Instances
    are immutable; coordinate arrays are read-only.

    Parameters
    ----------
    outer : array_like, shape (n, 2)
        Vertices of the outer boundary (either orientation, not closed).
    holes : sequence of array_like
        Vertices of each hole; holes must lie strictly inside ``outer`` and be
        pairwise disjoint.
    """

    __slots__ = ("outer", "holes", "_polygon")

    def __init__(self, outer, holes=()):
        outer = _as_ring(outer, "outer")
        if _signed_area(outer) < 0:
            outer = outer[::-1].copy()
        rings = []
        for k, h in enumerate(holes):
            h = _as_ring(h, f"hole {k}")
            if _signed_area(h) > 0:
                h = h[::-1].copy()
            rings.append(h)
        outer_poly = Polygon(outer)
        hole_polys = [Polygon(h) for h in rings]
        for k, hp in enumerate(hole_polys):
            if not outer_poly.contains_properly(hp):
                raise InvalidGeometryError(f"hole {k} is not strictly inside the outer boundary")
            for j in range(k):
                if not hp.disjoint(hole_polys[j]):
                    raise InvalidGeometryError(f"holes {j} and {k} intersect")
        outer.setflags(write=False)
        for h in rings:
            h.setflags(write=False)
        self.outer = outer
        self.holes = tuple(rings)
        self._polygon = Polygon(outer, [h for h in rings])
        if self.area <= 0:
            raise InvalidGeometryError("window has non-positive area")

    @classmethod
    def rectangle(cls, xmin, ymin, xmax, ymax, holes=()):
        if not (xmax > xmin and ymax > ymin):
            raise InvalidGeometryError("degenerate rectangle")
        return cls(_rect(xmin, ymin, xmax, ymax), holes)

    @classmethod
    def from_shapely(cls, poly):
        if poly.geom_type != "Polygon":
            raise InvalidGeometryError(f"expected a single polygon, got {poly.geom_type}")
        return cls(np.asarray(poly.exterior.coords), [np.asarray(r.coords) for r in poly.interiors])

    def __setattr__(self, name, value):
        if hasattr(self, "_polygon") and name in self.__slots__:
            raise AttributeError("Window is immutable")
        object.__setattr__(self, name, value)

    def __repr__(self):
        return f"Window(outer={len(self.outer)} vertices, holes={len(self.holes)}, area={self.area:.6g})"

    def __eq__(self, other):
        if not isinstance(other, Window):
            return NotImplemented
        return (
            np.array_equal(self.outer, other.outer)
            and len(self.holes) == len(other.holes)
            and all(np.array_equal(a, b) for a, b in zip(self.holes, other.holes))
        )

    def __hash__(self):
        return hash((self.outer.tobytes(),) + tuple(h.tobytes() for h in self.holes))

    @property
    def polygon(self):
        """The window as a shapely polygon."""
        return self._polygon

    @property
    def rings(self):
        return (self.outer,) + self.holes

    @property
    def area(self):
        return area(self)

    @property
    def bounds(self):
        lo = self.outer.min(axis=0)
        hi = self.outer.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @property
    def diameter(self):
        pts = self.outer
        d = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def segments(self, outer_only=False):
        """Boundary edges as an array of shape (m, 2, 2)."""
        rings = (self.outer,) if outer_only else self.rings
        return np.concatenate([np.stack([r, np.roll(r, -1, axis=0)], axis=1) for r in rings])

    def contains(self, points):
        return contains(self, points)


def _rect(xmin, ymin, xmax, ymax):
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]], dtype=float)


def area(w):
    """Area of the outer polygon minus the holes (shoelace formula)."""
    a = abs(_signed_area(w.outer)) - sum(abs(_signed_area(h)) for h in w.holes)
    if a <= 0:
        raise InvalidGeometryError("window has non-positive area")
    return a


def _in_ring(points, ring):
    """Even-odd rule; boundary points are not handled here."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    x0, y0 = ring[:, 0], ring[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for a, b, c, d in zip(x0, y0, x1, y1):
        crosses = (b > y) != (d > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = a + (y - b) * (c - a) / (d - b)
        inside ^= crosses & (x < xint)
    return inside


def _as_points(points):
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    return np.atleast_2d(pts).reshape(-1, 2), single


def segment_distance(points, segments, chunk=4096):
    """Distance from each point to the nearest of ``segments`` (shape (m, 2, 2))."""
    pts, single = _as_points(points)
    segs = np.asarray(segments, dtype=float).reshape(-1, 2, 2)
    if len(segs) == 0:
        raise InvalidArgumentError("empty segment set")
    a = segs[:, 0]
    ab = segs[:, 1] - a
    ll = (ab ** 2).sum(-1)
    safe = np.where(ll > 0, ll, 1.0)
    out = np.empty(len(pts))
    step = max(1, chunk * 64 // max(len(segs), 1))
    for s in range(0, len(pts), step):
        p = pts[s:s + step, None, :]
        ap = p - a[None]
        t = np.clip((ap * ab[None]).sum(-1) / safe, 0.0, 1.0)
        t = np.where(ll > 0, t, 0.0)
        d = ap - t[..., None] * ab[None]
        out[s:s + step] = np.sqrt((d ** 2).sum(-1).min(axis=1))
    return out[0] if single else out


def contains(w, points):
    """Membership test for one point or an array of points.

    A point is inside when it lies in the outer polygon and in no hole.
    Points within ``BOUNDARY_TOL`` of any edge are classified as inside.
    """
    pts, single = _as_points(points)
    near_outer = segment_distance(pts, w.segments(outer_only=True)) <= BOUNDARY_TOL
    result = _in_ring(pts, w.outer) | near_outer
    for h in w.holes:
        hs = np.stack([h, np.roll(h, -1, axis=0)], axis=1)
        in_h = _in_ring(pts, h) & (segment_distance(pts, hs) > BOUNDARY_TOL)
        result &= ~in_h
    return bool(result[0]) if single else result


def distance_to_set(x, s):
    """Euclidean distance from ``x`` to a geometric set.

    Parameters
    ----------
    x : array_like, shape (2,) or (n, 2)
    s : Window, ndarray of shape (m, 2), or list of polylines
        A :class:`Window` means its boundary (outer ring and hole rings); a
        2-D array is a point set; a list of (k, 2) arrays is a set of
        polylines.

    Returns
    -------
    float or ndarray
    """
    pts, single = _as_points(x)
    if isinstance(s, Window):
        d = segment_distance(pts, s.segments())
    elif isinstance(s, np.ndarray) and s.ndim == 2:
        if len(s) == 0:
            raise InvalidArgumentError("empty point set")
        from scipy.spatial import cKDTree

        d, _ = cKDTree(s).query(pts)
    else:
        lines = [np.asarray(line, dtype=float).reshape(-1, 2) for line in s]
        if not lines:
            raise InvalidArgumentError("empty polyline set")
        segs = []
        for line in lines:
            if len(line) == 1:
                segs.append(np.stack([line, line], axis=1))
            else:
                segs.append(np.stack([line[:-1], line[1:]], axis=1))
        d = segment_distance(pts, np.concatenate(segs))
    d = np.asarray(d, dtype=float)
    return float(d[0]) if single else d


def border_region(w, R, corners="round", segments_per_arc=16):
    """Ring of thickness ``R`` outside the outer boundary of ``w``.

    Holes contribute nothing: only the outer boundary is dilated.  With
    ``corners="round"`` the dilation is the Minkowski sum with a disc, each
    corner arc discretised with ``segments_per_arc`` segments; ``"mitre"``
    gives sharp corners (for rectangles, the dilated rectangle).
    """
    if not (R > 0) or not math.isfinite(R):
        raise InvalidArgumentError("border thickness R must be positive")
    outer = Polygon(w.outer)
    if corners == "round":
        grown = outer.buffer(R, quad_segs=segments_per_arc, join_style="round")
    elif corners == "mitre":
        grown = outer.buffer(R, join_style="mitre", mitre_limit=1e6)
    else:
        raise InvalidArgumentError(f"unknown corner style {corners!r}")
    grown = shapely.set_precision(grown, 0.0)
    return Window(np.asarray(grown.exterior.coords), [w.outer])


def union_polygon(*windows):
    """Shapely union of several windows (used for W_obs plus its border)."""
    return shapely.union_all([wd.polygon for wd in windows])
