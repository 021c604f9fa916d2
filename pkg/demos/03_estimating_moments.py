"""Estimating the moments from a single pattern.

In practice neither the intensity nor the pair correlation function is
known.  Here they are estimated from one IMCP(p1, 0.09) replicate: a
piecewise-constant intensity by maximum likelihood, a kernel estimate of g,
and two parametric families fitted to it by nonlinear least squares.  The
admissibility filter then decides whether the kernel estimate is usable.

Run: python3 demos/03_estimating_moments.py
"""
import numpy as np

from ppfredholm.moments import (
    admissibility_check,
    estimate_pcf_kernel,
    fit_intensity_piecewise_mle,
    fit_pcf_nls,
    half_plane_partition,
)
from ppfredholm.study import Scenario

s = Scenario("p1", 0.09)
x = s.simulate(replicate=2)

lam_hat = fit_intensity_piecewise_mle(x, half_plane_partition(s.W, 0.5))
print(f"piecewise intensity: left {lam_hat.values[0]:.0f}, right {lam_hat.values[1]:.0f} "
      "(generating values 1600 and 400)")

g_emp = estimate_pcf_kernel(x, lam_hat)
r = np.array([0.01, 0.05, 0.1, 0.2])
print("r      kernel g   true g")
for ri, ge, gt in zip(r, g_emp(r), s.pcf(r)):
    print(f"{ri:<6} {ge:8.3f} {gt:8.3f}")

for family in ("matern", "exp_plus_one"):
    fit = fit_pcf_nls(g_emp, family)
    print(f"{family} fit: " + ", ".join(f"{k} = {v:.4g}" for k, v in fit.params().items()))

verdict = admissibility_check(g_emp, s.R)
print(f"admissible: {verdict.admissible}  median |g - 1| beyond 2R = {verdict.median_excess:.3f}"
      + (f"  ({'; '.join(verdict.reasons)})" if verdict.reasons else ""))
