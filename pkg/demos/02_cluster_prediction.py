"""Predicting a thinned Matérn cluster process inside a hole.

Simulates one IMCP(p1, 0.09) pattern on the unit square, keeps the points
outside the central square, predicts the local intensity on a grid inside
the square with the true moments, and compares with the closed-form oracle
of the cluster process.  Maps are written as log-scaled SVG heatmaps next to
this script's output directory.

Run: python3 demos/02_cluster_prediction.py [output_dir]
"""
import os
import sys

import numpy as np

from ppfredholm.cli.svg import heatmap
from ppfredholm.fredholm import assemble, build_mesh, grid_targets, predict_grid
from ppfredholm.oracle import oracle_grid
from ppfredholm.study import Scenario

out = sys.argv[1] if len(sys.argv) > 1 else "demo_output"
os.makedirs(out, exist_ok=True)

s = Scenario("p1", 0.09)
pattern = s.simulate(replicate=7)
print(f"{s.label}: {len(pattern)} observed points outside the hole")

# a coarser mesh than the study default keeps the demo under a minute
mesh = build_mesh(s.W_obs, 0.02, s.intensity)
op = assemble(mesh, s.intensity, s.pcf)
print(f"operator on {mesh.n_triangles} triangles, {op.stats['pair_evaluations']} kernel evaluations")

shape = (21, 21)
targets = grid_targets(s.pred_bounds, *shape)
pred = predict_grid(op, pattern, targets, shape=shape, bounds=s.pred_bounds)
orc = oracle_grid(pattern, s.params, targets, s.W_obs, shape=shape, bounds=s.pred_bounds)

lam = s.intensity(targets)
print(f"true intensity in the hole: {lam.min():.0f} (right half) to {lam.max():.0f} (left half)")
print(f"prediction: mean {pred.values.mean():.1f}, range [{pred.values.min():.1f}, {pred.values.max():.1f}], "
      f"{pred.negative_count} negative")
print(f"oracle:     mean {orc.values.mean():.1f}, range [{orc.values.min():.1f}, {orc.values.max():.1f}]")
print(f"correlation between prediction and oracle over the grid: "
      f"{np.corrcoef(pred.values, orc.values)[0, 1]:.3f}")

for name, grid in (("prediction", pred), ("oracle", orc)):
    path = os.path.join(out, f"{name}.svg")
    heatmap(grid.clamp().as_image(), s.pred_bounds, path, title=f"{name}, {s.label}")
    print("wrote", path)
