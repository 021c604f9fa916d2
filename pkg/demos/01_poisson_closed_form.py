"""Weights and predictions when the pattern carries no interaction.

For a Poisson process (g = 1) the weight function solving the integral
equation is the constant lambda(x_o) / Lambda, with Lambda the expected
count in the observation window.  The prediction is then the observed count
rescaled to the intensity at the target.  This script checks that on a
triangulated unit square with a square hole.

Run: python3 demos/01_poisson_closed_form.py
"""
import numpy as np

from ppfredholm.fredholm import assemble, predict, solve_weights
from ppfredholm.geometry import Window, mass_matrix, triangulate
from ppfredholm.moments import ConstantIntensity, PoissonPCF
from ppfredholm.pointprocess import SeededStream, simulate_poisson

hole = [[0.35, 0.35], [0.65, 0.35], [0.65, 0.65], [0.35, 0.65]]
W_obs = Window.rectangle(0, 0, 1, 1, holes=[hole])
print(f"observation window area: {W_obs.area:.4f}")

mesh = triangulate(W_obs, 0.03)
M = mass_matrix(mesh)
print(f"mesh: {mesh.n_triangles} triangles, {mesh.n_nodes} nodes; "
      f"sum of the mass matrix = {M.sum():.6f} (the window area)")

lam = ConstantIntensity(100.0)
op = assemble(mesh, lam, PoissonPCF())
wf = solve_weights(op, (0.5, 0.5))
print(f"weights: min {wf.coefficients.min():.10f}, max {wf.coefficients.max():.10f}, "
      f"closed form 1/0.91 = {1 / 0.91:.10f}")

pattern = simulate_poisson(lam, W_obs, SeededStream(seed=3, stream=0))
print(f"simulated {len(pattern)} points; prediction at the centre "
      f"{predict(wf, pattern):.6f} = count / 0.91 = {len(pattern) / 0.91:.6f}")
print(f"unbiasedness residual |int lambda w - lambda(x_o)| / lambda(x_o) = {wf.unbiasedness:.2e}")
