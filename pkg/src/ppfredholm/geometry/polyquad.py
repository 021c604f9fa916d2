"""Quadrature over arbitrary shapely polygons (clipped discs and the like)."""
import numpy as np
import shapely
from shapely.geometry import Point, Polygon

from . import quadrature


def disc(center, radius, segments=64):
    """Regular ``segments``-gon inscribed in the circle b(center, radius)."""
    t = 2.0 * np.pi * np.arange(segments) / segments
    return Polygon(np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)]))


def _polygons(geom):
    if geom.is_empty:
        return []
    if geom.geom_type == "Polygon":
        return [geom]
    if hasattr(geom, "geoms"):
        out = []
        for g in geom.geoms:
            out.extend(_polygons(g))
        return out
    return []


def polygon_quadrature(geom, max_area, order=4):
    """Nodes and weights integrating over a (multi)polygon.

    The region is triangulated with a maximum triangle area and a rule of
    degree ``order`` is applied on every triangle.
    """
    import triangle as tr

    r = quadrature.rule(order)
    pts_all, w_all = [], []
    for poly in _polygons(geom):
        if poly.area <= 0:
            continue
        verts, segs, holes = [], [], []
        for ring in [poly.exterior] + list(poly.interiors):
            c = np.asarray(ring.coords)[:-1]
            base = sum(len(v) for v in verts)
            verts.append(c)
            n = len(c)
            segs.extend((base + k, base + (k + 1) % n) for k in range(n))
        for ring in poly.interiors:
            holes.append(np.asarray(Polygon(ring).representative_point().coords[0]))
        data = {"vertices": np.concatenate(verts), "segments": np.array(segs)}
        if holes:
            data["holes"] = np.array(holes)
        res = tr.triangulate(data, f"pq20a{max_area:.17g}Q")
        if "triangles" not in res or len(res["triangles"]) == 0:
            continue
        p = res["vertices"][res["triangles"]]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        a = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        pts_all.append(np.einsum("qk,tkd->tqd", r.bary, p).reshape(-1, 2))
        w_all.append((a[:, None] * r.weights[None, :]).ravel())
    if not pts_all:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(pts_all), np.concatenate(w_all)


def clip_area(geom, region):
    return float(shapely.intersection(geom, region).area)


def point(x, y):
    return Point(x, y)
