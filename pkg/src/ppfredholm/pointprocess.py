"""Point patterns and simulators: Poisson, Matérn cluster, independent thinning."""
import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidModelError, ModelInconsistencyError
from .geometry import SNAP_TOL, Window, triangulate


class PointPattern:
    """Finite simple point pattern stored clipped to its window.

    Parameters
    ----------
    points : array_like, shape (n, 2)
    window : Window
        Every point must lie in the window; duplicate points are rejected.
    """

    __slots__ = ("points", "window")

    def __init__(self, points, window):
        pts = np.array(points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("point coordinates must be finite")
        if len(pts):
            inside = window.contains(pts)
            if not np.all(inside):
                k = int(np.flatnonzero(~inside)[0])
                raise InvalidArgumentError(f"point {tuple(pts[k])} lies outside the window")
            if len(np.unique(pts, axis=0)) != len(pts):
                raise InvalidArgumentError("duplicate points: the pattern must be simple")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "window", window)

    def __setattr__(self, name, value):
        raise AttributeError("PointPattern is immutable")

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        return f"PointPattern(n={len(self)}, {self.window!r})"

    @property
    def n(self):
        return len(self.points)

    def union(self, other):
        """Superposition of two patterns on the same window."""
        if other.window != self.window:
            raise InvalidArgumentError("patterns live on different windows")
        return PointPattern(np.vstack([self.points, other.points]), self.window)

    def count(self, region):
        """Number of points inside a window ``region``."""
        return int(region.contains(self.points).sum()) if len(self) else 0


@dataclass(frozen=True)
class SeededStream:
    """Counter-based random substream identified by ``(seed, stream)``.

    Each call to :meth:`generator` restarts the substream, so identical
    ``(seed, stream)`` pairs replay identical draws.
    """

    seed: int
    stream: int = 0

    def generator(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream):
        return SeededStream(self.seed, stream)


def _rng(rng):
    if isinstance(rng, SeededStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise InvalidArgumentError(f"unsupported random source {type(rng).__name__}")


def _uniform_in_window(gen, n, window):
    x0, y0, x1, y1 = window.bounds
    pts = np.column_stack([gen.uniform(x0, x1, n), gen.uniform(y0, y1, n)])
    return pts[window.contains(pts)] if n else pts


def probe_max_intensity(lam, window, target_edge=None, safety=1.2):
    """Upper bound for ``lam`` on ``window`` from a coarse mesh probe.

    The maximum over mesh vertices and order-4 quadrature nodes, times
    ``safety``.
    """
    edge = target_edge or window.diameter / 20.0
    mesh = triangulate(window, edge, breaklines=getattr(lam, "breaklines", ()))
    probe = np.vstack([mesh.nodes, mesh.quadrature(4).points])
    vals = np.asarray(lam(probe), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise InvalidModelError("intensity is not finite on the window")
    if np.any(vals < 0):
        raise InvalidModelError("intensity is negative on the window")
    return safety * float(vals.max())


def simulate_poisson(lam, window, rng=None, lam_max=None):
    """Poisson process with intensity ``lam`` (constant or callable) on ``window``.

    Inhomogeneous intensities are simulated by rejection from a homogeneous
    process of rate ``lam_max`` (probed automatically when omitted).
    """
    gen = _rng(rng)
    if np.isscalar(lam):
        lam0 = float(lam)
        if not (lam0 >= 0 and math.isfinite(lam0)):
            raise InvalidModelError("constant intensity must be finite and non-negative")
        x0, y0, x1, y1 = window.bounds
        n = gen.poisson(lam0 * (x1 - x0) * (y1 - y0))
        return PointPattern(_uniform_in_window(gen, n, window), window)
    if lam_max is None:
        lam_max = probe_max_intensity(lam, window)
    lam_max = float(lam_max)
    if not math.isfinite(lam_max) or lam_max < 0:
        raise InvalidModelError(f"dominating intensity {lam_max} is not finite")
    if lam_max == 0:
        return PointPattern(np.zeros((0, 2)), window)
    x0, y0, x1, y1 = window.bounds
    n = gen.poisson(lam_max * (x1 - x0) * (y1 - y0))
    pts = _uniform_in_window(gen, n, window)
    u = gen.uniform(size=len(pts))
    vals = np.asarray(lam(pts), dtype=float).reshape(-1)
    if np.any(vals > lam_max):
        k = int(np.argmax(vals))
        raise ModelInconsistencyError(
            f"intensity {vals[k]:.6g} at {tuple(pts[k])} exceeds the dominating bound {lam_max:.6g}")
    return PointPattern(pts[u * lam_max < vals], window)


def simulate_matern_cluster(kappa, mu, R, window, rng=None, return_parents=False):
    """Stationary Matérn cluster process observed on ``window``.

    Parents are Poisson(kappa) on the bounding box of ``window`` dilated by
    ``R``; each gets Poisson(mu) offspring uniform in its disc of radius R.
    Offspring outside the window are dropped and parents are not returned
    unless ``return_parents`` is set.
    """
    if not (kappa >= 0 and mu >= 0):
        raise InvalidModelError("kappa and mu must be non-negative")
    if not R > 0:
        raise InvalidModelError("cluster radius must be positive")
    gen = _rng(rng)
    x0, y0, x1, y1 = window.bounds
    x0, y0, x1, y1 = x0 - R, y0 - R, x1 + R, y1 + R
    npar = gen.poisson(kappa * (x1 - x0) * (y1 - y0))
    parents = np.column_stack([gen.uniform(x0, x1, npar), gen.uniform(y0, y1, npar)])
    counts = gen.poisson(mu, size=npar)
    total = int(counts.sum())
    rad = R * np.sqrt(gen.uniform(size=total))
    ang = 2.0 * np.pi * gen.uniform(size=total)
    centres = np.repeat(parents, counts, axis=0)
    kids = centres + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    kids = kids[window.contains(kids)] if total else kids
    pattern = PointPattern(kids, window)
    return (pattern, parents) if return_parents else pattern


def thin(p, pattern, rng=None):
    """Independent thinning: each point is kept with probability p(x)."""
    gen = _rng(rng)
    if not len(pattern):
        return pattern
    if np.isscalar(p):
        probs = np.full(len(pattern), float(p))
    else:
        probs = np.asarray(p(pattern.points), dtype=float).reshape(-1)
    if not np.all(np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
        raise InvalidModelError("retention probabilities must lie in [0, 1]")
    keep = gen.uniform(size=len(pattern)) < probs
    return PointPattern(pattern.points[keep], pattern.window)


def simulate_thinned_cluster(kappa, mu, R, p, window, rng=None):
    """Thinned Matérn cluster pattern (one generator drives both stages)."""
    gen = _rng(rng)
    return thin(p, simulate_matern_cluster(kappa, mu, R, window, gen), gen)


def restrict(pattern, sub):
    """Points of ``pattern`` inside ``sub``, carried by ``sub``."""
    if not isinstance(sub, Window):
        raise InvalidArgumentError("restrict needs a Window")
    if not pattern.window.polygon.buffer(SNAP_TOL).covers(sub.polygon):
        raise InvalidArgumentError("sub-window is not contained in the pattern window")
    pts = pattern.points
    return PointPattern(pts[sub.contains(pts)] if len(pts) else pts, sub)


def write_pattern(pattern, path):
    """Write ``x,y`` CSV with shortest round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        fh.write("x,y\n")
        for x, y in pattern.points.tolist():
            fh.write(f"{x!r},{y!r}\n")


def read_pattern(path, window, clip=False):
    """Read an ``x,y`` CSV; out-of-window points raise unless ``clip``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["x", "y"]:
            raise InvalidArgumentError(f"{path}: expected header 'x,y'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                x, y = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise InvalidArgumentError(f"{path}: line {lineno}: malformed row {row!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise InvalidArgumentError(f"{path}: line {lineno}: non-finite coordinate")
            rows.append((x, y))
    pts = np.array(rows, dtype=float).reshape(-1, 2)
    if len(pts):
        inside = window.contains(pts)
        if not np.all(inside):
            if not clip:
                k = int(np.flatnonzero(~inside)[0])
                raise InvalidArgumentError(f"{path}: point {tuple(pts[k])} lies outside the window")
            pts = pts[inside]
    return PointPattern(pts, window)
