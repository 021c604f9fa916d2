"""Synthetic stand-in for the covariate case study.

A 600 km x 600 km window with random faults, a handful of volcanoes, one
plate boundary and an irregular masked zone.  Points come from a thinned
Matérn cluster process whose first-order intensity is log-linear in the
banded distance design, scaled to a requested expected count.
"""
import json
import math
import os

import numpy as np

from ..geometry import Window, triangulate
from ..moments import BandedDistanceDesign, CallableThinning, DistanceField, LogLinearIntensity
from ..moments.io import write_points, write_polylines
from ..pointprocess import SeededStream, restrict, simulate_thinned_cluster, write_pattern

SIDE = 600.0
MASK = ((330.0, 300.0), (480.0, 330.0), (470.0, 470.0), (340.0, 450.0))
# band slopes, volcano and plate distance effects (per km)
SLOPES = (-0.034, -0.0268, -0.0175, -0.0179, -0.0214)
DV, DPB = -0.002, -0.0093
CLUSTER_R, CLUSTER_MU = 10.0, 40.0


def _faults(gen, n=9):
    lines = []
    for _ in range(n):
        start = gen.uniform(40, SIDE - 40, 2)
        heading = gen.uniform(0, 2 * math.pi)
        pts = [start]
        for _ in range(int(gen.integers(3, 7))):
            heading += gen.normal(0, 0.35)
            step = gen.uniform(20, 45)
            nxt = np.clip(pts[-1] + step * np.array([math.cos(heading), math.sin(heading)]), 0, SIDE)
            pts.append(nxt)
        lines.append(np.array(pts))
    return lines


def _plate():
    x = np.linspace(0, SIDE, 25)
    return [np.column_stack([x, 120 + 60 * np.sin(x / SIDE * math.pi) + 0.1 * x])]


def synthetic_analogue(directory, n_points=1200, seed=0):
    """Write the analogue inputs to ``directory`` and return their paths.

    Files: ``pattern.csv`` (points outside the mask), ``fault.csv``,
    ``plate.csv`` (``id,x,y`` polylines), ``volcano.csv`` (``x,y``),
    ``window.csv`` (``ring,x,y``; ring 0 is the outer boundary, ring 1 the
    mask) and ``truth.json``.
    """
    os.makedirs(directory, exist_ok=True)
    gen = SeededStream(seed, 0).generator()
    faults = _faults(gen)
    volcanoes = gen.uniform(60, SIDE - 60, (6, 2))
    plate = _plate()
    design = BandedDistanceDesign(DistanceField(faults, "fault"), DistanceField(volcanoes, "volcano"),
                                  DistanceField(plate, "plate"))
    beta = np.zeros(13)
    beta[6:11] = SLOPES
    beta[11], beta[12] = DV, DPB
    W = Window.rectangle(0.0, 0.0, SIDE, SIDE)
    q = triangulate(W, SIDE / 60.0).quadrature(2)
    total = float(np.dot(q.weights, np.exp(design(q.points) @ beta)))
    beta[0] = math.log(n_points / total)
    lam = LogLinearIntensity(design, beta)
    lam_max = 1.05 * float(np.max(lam(q.points)))
    p = CallableThinning(lambda x: np.minimum(lam(x) / lam_max, 1.0), "synthetic")
    full = simulate_thinned_cluster(lam_max / CLUSTER_MU, CLUSTER_MU, CLUSTER_R, p, W,
                                    SeededStream(seed, 1))
    W_obs = Window.rectangle(0.0, 0.0, SIDE, SIDE, holes=[np.array(MASK)])
    obs = restrict(full, W_obs)
    paths = {k: os.path.join(directory, f"{k}.csv") for k in ("pattern", "fault", "plate", "volcano",
                                                            "window")}
    write_pattern(obs, paths["pattern"])
    write_polylines(faults, paths["fault"])
    write_polylines(plate, paths["plate"])
    write_points(volcanoes, paths["volcano"])
    write_window(W_obs, paths["window"])
    truth = {"coefficients": beta.tolist(), "names": design.names, "cluster_radius": CLUSTER_R,
             "cluster_mu": CLUSTER_MU, "lam_max": lam_max, "n_total": len(full),
             "n_observed": len(obs), "seed": seed}
    with open(os.path.join(directory, "truth.json"), "w") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")
    return paths


def write_window(window, path):
    with open(path, "w", newline="") as fh:
        fh.write("ring,x,y\n")
        for k, ring in enumerate(window.rings):
            for x, y in np.asarray(ring, dtype=float).tolist():
                fh.write(f"{k},{x!r},{y!r}\n")
