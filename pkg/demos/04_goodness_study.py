"""A small goodness-of-prediction study.

Repeats simulate -> predict -> compare-with-oracle over replicates and
summarizes relative bias (RB) and relative RMSE per target, then by distance
to the edge of the prediction window.  The desk-scale study uses 200
replicates on a 0.012 mesh; this demo uses 30 replicates on a coarser mesh.

Run: python3 demos/04_goodness_study.py [report_dir]
"""
import sys

from ppfredholm.study import Scenario, run_goodness_study, write_report

s = Scenario("p1", 0.09, n=30, target_edge=0.024)
r = run_goodness_study(s, progress=lambda i, n: print(f"\rreplicate {i}/{n}", end="", flush=True))
print()
for k in ("theo_median_rb", "theo_median_abs_rb", "theo_median_rrmse", "negative_predictions",
          "runtime_seconds"):
    print(f"{k:24s} {r.summary[k]}")

print("\ndistance to boundary   median |RB|   median RRMSE")
for a, b in zip(r.profile("theo", "abs_rb", bins=5), r.profile("theo", "rrmse", bins=5)):
    print(f"[{a['lo']:.3f}, {a['hi']:.3f})        {a['median']:.3f}         {b['median']:.3f}")

if len(sys.argv) > 1:
    write_report(r, sys.argv[1], replicates=True)
    print("report written to", sys.argv[1])
