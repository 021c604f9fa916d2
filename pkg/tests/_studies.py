"""Shared expensive study runs for the acceptance suite (cached on disk)."""
from dataclasses import asdict

from ppfredholm.study import Scenario, SensitivityConfig, run_goodness_study, run_sensitivity_study

from ._cache import cached


def goodness(thinning, R, n=200):
    s = Scenario(thinning, R, n=n)
    return cached("goodness", s.to_dict(), lambda: run_goodness_study(s))


def sensitivity(n_admissible=100, progress=None):
    s = Scenario("p1", 0.09)
    cfg = SensitivityConfig(n_admissible=n_admissible)
    return cached("sensitivity", [s.to_dict(), asdict(cfg)],
                  lambda: run_sensitivity_study(s, cfg, progress=progress))
