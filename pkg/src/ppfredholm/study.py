"""Simulation studies: goodness of prediction and sensitivity to estimated moments."""
import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FitFailure, InvalidArgumentError, NumericError, PPFredholmError, StudyError
from .fredholm import (
    _pattern_row,
    assemble,
    build_mesh,
    grid_targets,
    solve_weights_batch,
)
from .geometry import Window, distance_to_set
from .moments import (
    LinearThinning,
    MaternPCF,
    StepThinning,
    ThinnedClusterIntensity,
    admissibility_check,
    estimate_pcf_kernel,
    fit_intensity_piecewise_mle,
    fit_pcf_nls,
    half_plane_partition,
)
from .oracle import MaternParams, OracleRaster
from .pointprocess import SeededStream, restrict, simulate_thinned_cluster

log = logging.getLogger(__name__)

REFERENCE_RADII = (0.05, 0.09, 0.13)
PRED_BOUNDS = {"p1": (0.35, 0.35, 0.65, 0.65), "p2": (0.05, 0.36, 0.95, 0.64)}
GRID = {"p1": (21, 21), "p2": (31, 11)}
FAILURE_LIMIT = 0.05
ARMS = ("theo", "mat", "exp", "emp")
ATTEMPTS_PER_ADMISSIBLE = 20


# ----------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Scenario:
    """One IMCP(p, R) configuration on the unit square.

    Parameters outside the reference sets (p1/p2 geometry, R in
    {0.05, 0.09, 0.13}, kappa = 50, mu = 40) are accepted and listed in
    ``overrides``.
    """

    thinning: str = "p1"
    R: float = 0.09
    kappa: float = 50.0
    mu: float = 40.0
    n: int = 200
    target_edge: float = 0.012
    seed: int = 0
    normalization: str = "appendix"
    grid: tuple = None
    oracle_h: float = 0.0025

    def __post_init__(self):
        if self.thinning not in PRED_BOUNDS:
            raise InvalidArgumentError(f"thinning must be 'p1' or 'p2', got {self.thinning!r}")
        if not (self.R > 0 and self.kappa >= 0 and self.mu >= 0 and self.n >= 1):
            raise InvalidArgumentError("invalid scenario parameters")
        if self.grid is None:
            object.__setattr__(self, "grid", GRID[self.thinning])
        object.__setattr__(self, "grid", tuple(int(v) for v in self.grid))
        for msg in self.overrides:
            log.info("scenario override: %s", msg)

    @property
    def overrides(self):
        out = []
        if not any(math.isclose(self.R, r) for r in REFERENCE_RADII):
            out.append(f"R = {self.R:g} not in {REFERENCE_RADII}")
        if self.kappa != 50.0 or self.mu != 40.0:
            out.append(f"kappa, mu = {self.kappa:g}, {self.mu:g} (reference 50, 40)")
        if self.grid != GRID[self.thinning]:
            out.append(f"target grid {self.grid} (reference {GRID[self.thinning]})")
        return out

    @property
    def label(self):
        return f"IMCP({self.thinning},{self.R:g})"

    @property
    def p(self):
        return StepThinning(0.8, 0.2, 0.5) if self.thinning == "p1" else LinearThinning()

    @property
    def W(self):
        return Window.rectangle(0.0, 0.0, 1.0, 1.0)

    @property
    def pred_bounds(self):
        return PRED_BOUNDS[self.thinning]

    @property
    def W_pred(self):
        return Window.rectangle(*self.pred_bounds)

    @property
    def W_obs(self):
        return Window.rectangle(0.0, 0.0, 1.0, 1.0, holes=[self.W_pred.outer])

    @property
    def targets(self):
        return grid_targets(self.pred_bounds, *self.grid)

    @property
    def params(self):
        return MaternParams(self.kappa, self.mu, self.R, self.p)

    @property
    def intensity(self):
        return ThinnedClusterIntensity(self.kappa, self.mu, self.p)

    @property
    def pcf(self):
        return MaternPCF(self.kappa, self.R)

    def simulate(self, replicate):
        """Observed pattern of one replicate (restricted to W_obs)."""
        full = simulate_thinned_cluster(self.kappa, self.mu, self.R, self.p, self.W,
                                        SeededStream(self.seed, replicate))
        return restrict(full, self.W_obs)

    def to_dict(self):
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d


# ----------------------------------------------------------------------
# metrics


def _check(pred, orc):
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    orc = np.atleast_2d(np.asarray(orc, dtype=float))
    if pred.shape != orc.shape:
        raise InvalidArgumentError(f"shape mismatch {pred.shape} vs {orc.shape}")
    return pred, orc


def relative_bias(predictions, oracles):
    """RB per target: sum_i (pred_i - orc_i) / sum_i orc_i over replicates (rows).

    Targets with a zero denominator are NaN.
    """
    pred, orc = _check(predictions, oracles)
    den = orc.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (pred - orc).sum(axis=0) / den
    return np.where(den > 0, out, np.nan)


def rrmse(predictions, oracles):
    """RRMSE per target: sqrt(mean (pred - orc)^2) / mean orc."""
    pred, orc = _check(predictions, oracles)
    den = orc.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(((pred - orc) ** 2).mean(axis=0)) / den
    return np.where(den > 0, out, np.nan)


@dataclass
class MetricField:
    targets: np.ndarray
    distance: np.ndarray
    rb: np.ndarray
    rrmse: np.ndarray
    n: int
    label: str = ""

    @property
    def excluded(self):
        return int(np.sum(np.isnan(self.rb) | np.isnan(self.rrmse)))

    def summary(self):
        ok = ~(np.isnan(self.rb) | np.isnan(self.rrmse))
        return {
            "median_abs_rb": float(np.median(np.abs(self.rb[ok]))) if ok.any() else math.nan,
            "median_rb": float(np.median(self.rb[ok])) if ok.any() else math.nan,
            "median_rrmse": float(np.median(self.rrmse[ok])) if ok.any() else math.nan,
            "excluded_targets": self.excluded,
        }


def metric_field(predictions, oracles, targets, distance, label=""):
    pred, orc = _check(predictions, oracles)
    return MetricField(np.asarray(targets), np.asarray(distance), relative_bias(pred, orc),
                       rrmse(pred, orc), pred.shape[0], label)


def distance_profile(distance, metric, bins=12, max_distance=None):
    """Equal-width distance bins with mean, median and 5/95% quantiles.

    Empty bins are reported with ``n = 0`` and NaN statistics; NaN metric
    values are ignored.
    """
    d = np.asarray(distance, dtype=float)
    m = np.asarray(metric, dtype=float)
    top = float(max_distance if max_distance is not None else d.max())
    edges = np.linspace(0.0, top, bins + 1)
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, bins - 1)
    rows = []
    for b in range(bins):
        vals = m[(idx == b) & ~np.isnan(m)]
        stats = dict(mean=math.nan, median=math.nan, q05=math.nan, q95=math.nan)
        if len(vals):
            stats = dict(mean=float(vals.mean()), median=float(np.median(vals)),
                         q05=float(np.quantile(vals, 0.05)), q95=float(np.quantile(vals, 0.95)))
        rows.append(dict(lo=float(edges[b]), hi=float(edges[b + 1]), n=int(len(vals)), **stats))
    return rows


def bootstrap(stat, *arrays, resamples=1000, seed=0):
    """Bootstrap distribution of ``stat`` over replicate rows.

    Each array is resampled independently (rows with replacement).
    """
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    out = np.empty(resamples)
    for b in range(resamples):
        picks = []
        for a in arrays:
            n = a[0].shape[0] if isinstance(a, tuple) else a.shape[0]
            i = gen.integers(0, n, n)
            picks.append(tuple(x[i] for x in a) if isinstance(a, tuple) else a[i])
        out[b] = stat(*picks)
    return out


def median_rrmse(pair):
    pred, orc = pair
    return float(np.nanmedian(rrmse(pred, orc)))


def total_variation(image):
    """Anisotropic total variation of a 2-D grid."""
    img = np.asarray(image, dtype=float)
    return float(np.nansum(np.abs(np.diff(img, axis=0))) + np.nansum(np.abs(np.diff(img, axis=1))))


# ----------------------------------------------------------------------
# studies


@dataclass
class StudyResult:
    scenario: Scenario
    kind: str
    targets: np.ndarray
    distance: np.ndarray
    predictions: dict
    oracles: np.ndarray
    metrics: dict = field(default_factory=dict)
    reference_metrics: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    negatives: np.ndarray = None
    parameters: list = field(default_factory=list)

    def profile(self, arm="theo", which="rb", bins=12, reference=False):
        src = self.reference_metrics if reference else self.metrics
        mf = src[arm]
        vals = np.abs(mf.rb) if which == "abs_rb" else getattr(mf, which)
        return distance_profile(mf.distance, vals, bins)


def _abort_check(failures, attempts, n_target, result):
    if len(failures) > FAILURE_LIMIT * max(n_target, attempts) and len(failures) > 1:
        raise StudyError(f"{len(failures)} replicate failures out of {attempts} attempts "
                         f"exceed {FAILURE_LIMIT:.0%}", result)


def run_goodness_study(scenario, mesh=None, prediction_hook=None, progress=None):
    """Predict with the true moments and score against the oracle.

    One operator is assembled and factorized per scenario; each replicate
    costs a simulation, one sparse row-sum and the oracle.

    Parameters
    ----------
    prediction_hook : callable, optional
        ``hook(predictions, oracle) -> predictions`` applied per replicate
        (testing aid).
    """
    s = scenario
    t0 = time.perf_counter()
    targets = s.targets
    lam = s.intensity
    mesh = mesh or build_mesh(s.W_obs, s.target_edge, lam)
    op = assemble(mesh, lam, s.pcf, normalization=s.normalization)
    W, lam_o, res = solve_weights_batch(op, targets)
    oracle = OracleRaster(s.params, s.W_obs, targets, h=s.oracle_h)
    t_setup = time.perf_counter() - t0
    preds, orcs, negs, failures = [], [], [], []
    distance = distance_to_set(targets, s.W_pred)
    result = StudyResult(s, "goodness", targets, distance, {"theo": None}, None)
    for rep in range(s.n):
        try:
            x = s.simulate(rep)
            pr = _pattern_row(op, x) @ W
            oc = oracle(x)
            if prediction_hook is not None:
                pr = np.asarray(prediction_hook(pr, oc), dtype=float)
            if not (np.all(np.isfinite(pr)) and np.all(np.isfinite(oc))):
                raise NumericError("non-finite prediction or oracle value")
        except PPFredholmError as exc:
            failures.append((rep, str(exc)))
            _abort_check(failures, rep + 1, s.n, result)
            continue
        preds.append(pr)
        orcs.append(oc)
        negs.append(int(np.sum(pr < 0)))
        if progress:
            progress(rep + 1, s.n)
    _abort_check(failures, s.n, s.n, result)
    P, O = np.array(preds), np.array(orcs)
    mf = metric_field(P, O, targets, distance, "theo")
    result.predictions = {"theo": P}
    result.oracles = O
    result.metrics = {"theo": mf}
    result.failures = failures
    result.negatives = np.array(negs)
    result.summary = {
        "scenario": s.label,
        "replicates": int(len(P)),
        "failures": len(failures),
        "nodes": mesh.n_nodes,
        "triangles": mesh.n_triangles,
        "negative_predictions": int(np.sum(negs)),
        "max_solver_residual": float(res.max()),
        "setup_seconds": round(t_setup, 3),
        "runtime_seconds": round(time.perf_counter() - t0, 3),
        **{f"theo_{k}": v for k, v in mf.summary().items()},
    }
    return result


@dataclass
class SensitivityConfig:
    """Estimator settings for the sensitivity study.

    ``target_edge`` sets the (shared) prediction mesh for all four arms.
    """

    n_admissible: int = 100
    max_attempts: int = None
    target_edge: float = 0.024
    fit_range: tuple = None
    bandwidth: float = None
    admissibility_R: float = None


def _intensity_and_pcf(s, x, cfg):
    f_lam = fit_intensity_piecewise_mle(x, half_plane_partition(s.W, 0.5))
    if min(f_lam.values) <= 0:
        raise FitFailure("fitted intensity vanishes on a half of the window")
    return f_lam, estimate_pcf_kernel(x, f_lam, bandwidth=cfg.bandwidth)


def run_sensitivity_study(scenario, config=None, progress=None):
    """Compare predictions with theoretical and estimated moments.

    Arms: ``theo`` (true lambda and Matérn g), ``mat`` / ``exp`` (piecewise
    MLE intensity with a Matérn / exponential-plus-one pcf fitted by NLS) and
    ``emp`` (piecewise MLE intensity with the kernel pcf estimate).
    Replicates are drawn until ``n_admissible`` pass the admissibility check
    of the empirical pcf (both the pcf condition and the range of the
    ``emp`` predictions); all arms are scored on that admissible set.  The
    checks run cheapest first, so a rejected replicate costs at most one
    assembly.
    """
    s = scenario
    cfg = config or SensitivityConfig()
    t0 = time.perf_counter()
    targets = s.targets
    distance = distance_to_set(targets, s.W_pred)
    lam_true = s.intensity
    mesh = build_mesh(s.W_obs, cfg.target_edge, lam_true)
    op_theo = assemble(mesh, lam_true, s.pcf, normalization=s.normalization)
    W_theo, _, _ = solve_weights_batch(op_theo, targets)
    oracle = OracleRaster(s.params, s.W_obs, targets, h=s.oracle_h)
    adm_R = cfg.admissibility_R or s.R
    max_attempts = cfg.max_attempts or ATTEMPTS_PER_ADMISSIBLE * cfg.n_admissible

    def predict_arm(lam, g, row):
        op = assemble(mesh, lam, g, normalization=s.normalization)
        return row @ solve_weights_batch(op, targets)[0]

    preds = {a: [] for a in ARMS}
    orcs, params, failures = [], [], []
    rejected = {"pcf": 0, "range": 0}
    result = StudyResult(s, "sensitivity", targets, distance, {}, None)
    rep = -1
    while len(orcs) < cfg.n_admissible and rep + 1 < max_attempts:
        rep += 1
        try:
            x = s.simulate(rep)
            f_lam, g_emp = _intensity_and_pcf(s, x, cfg)
            if not admissibility_check(g_emp, adm_R).admissible:
                rejected["pcf"] += 1
                continue
            row = _pattern_row(op_theo, x)
            arm_pred = {"theo": row @ W_theo, "emp": predict_arm(f_lam, g_emp, row)}
            if not admissibility_check(g_emp, adm_R, arm_pred["emp"]).admissible:
                rejected["range"] += 1
                continue
            g_mat = fit_pcf_nls(g_emp, "matern", cfg.fit_range)
            g_exp = fit_pcf_nls(g_emp, "exp_plus_one", cfg.fit_range)
            arm_pred["mat"] = predict_arm(f_lam, g_mat, row)
            arm_pred["exp"] = predict_arm(f_lam, g_exp, row)
            oc = oracle(x)
        except PPFredholmError as exc:
            failures.append((rep, str(exc)))
            _abort_check(failures, rep + 1, cfg.n_admissible, result)
            continue
        for arm in ARMS:
            preds[arm].append(arm_pred[arm])
        orcs.append(oc)
        params.append({"replicate": rep, "beta_left": f_lam.values[0],
                       "beta_right": f_lam.values[1], "alpha1": g_mat.alpha1,
                       "alpha2": g_mat.alpha2, "alpha3": g_exp.alpha3,
                       "alpha4": g_exp.alpha4})
        if progress:
            progress(len(orcs), cfg.n_admissible)
    attempts = rep + 1
    _abort_check(failures, attempts, cfg.n_admissible, result)
    O = np.array(orcs)
    P = {a: np.array(v) for a, v in preds.items()}
    result.predictions = P
    result.oracles = O
    result.failures = failures
    result.parameters = params
    result.negatives = np.array([int(np.sum(P["emp"][i] < 0)) for i in range(len(O))])
    if len(O):
        result.metrics = {a: metric_field(P[a], O, targets, distance, a) for a in ARMS}
        result.reference_metrics = {a: metric_field(P[a], P["theo"], targets, distance, a)
                                    for a in ARMS}
    summary = {
        "scenario": s.label,
        "admissible": int(len(O)),
        "attempts": attempts,
        "rejected_pcf": rejected["pcf"],
        "rejected_range": rejected["range"],
        "failures": len(failures),
        "triangles": mesh.n_triangles,
        "runtime_seconds": round(time.perf_counter() - t0, 3),
    }
    if params:
        tab = {k: np.array([p[k] for p in params]) for k in params[0] if k != "replicate"}
        for k, v in tab.items():
            summary[f"{k}_mean"] = float(v.mean())
            summary[f"{k}_sd"] = float(v.std(ddof=1)) if len(v) > 1 else math.nan
    for a, mf in result.metrics.items():
        for k, v in mf.summary().items():
            summary[f"{a}_oracle_{k}"] = v
    for a, mf in result.reference_metrics.items():
        for k, v in mf.summary().items():
            summary[f"{a}_theo_{k}"] = v
    result.summary = summary
    if len(O) < cfg.n_admissible:
        log.warning("only %d admissible replicates after %d attempts", len(O), attempts)
    return result


# ----------------------------------------------------------------------
# report


def write_report(result, directory, replicates=False, extra=None):
    """Study report: config.json, metrics.csv, summary.csv, optional replicates/."""
    os.makedirs(directory, exist_ok=True)
    cfg = {"scenario": result.scenario.to_dict(), "kind": result.kind,
           "overrides": result.scenario.overrides}
    if extra:
        cfg.update(extra)
    with open(os.path.join(directory, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    arms = list(result.metrics)
    with open(os.path.join(directory, "metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["x", "y", "distance"]
        for a in arms:
            head += [f"rb_{a}", f"rrmse_{a}"]
        for a in result.reference_metrics:
            head += [f"rb_{a}_vs_theo", f"rrmse_{a}_vs_theo"]
        w.writerow(head)
        for k, (x, y) in enumerate(result.targets.tolist()):
            row = [repr(x), repr(y), repr(float(result.distance[k]))]
            for a in arms:
                row += [repr(float(result.metrics[a].rb[k])), repr(float(result.metrics[a].rrmse[k]))]
            for a in result.reference_metrics:
                mf = result.reference_metrics[a]
                row += [repr(float(mf.rb[k])), repr(float(mf.rrmse[k]))]
            w.writerow(row)
    with open(os.path.join(directory, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in result.summary.items():
            if k.endswith("seconds"):
                continue
            w.writerow([k, repr(v) if isinstance(v, float) else v])
    if result.parameters:
        with open(os.path.join(directory, "parameters.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            keys = list(result.parameters[0])
            w.writerow(keys)
            for p in result.parameters:
                w.writerow([repr(float(p[k])) if k != "replicate" else p[k] for k in keys])
    if replicates:
        rd = os.path.join(directory, "replicates")
        os.makedirs(rd, exist_ok=True)
        np.savez_compressed(os.path.join(rd, "grids.npz"), targets=result.targets,
                            oracle=result.oracles,
                            **{f"pred_{a}": v for a, v in result.predictions.items()})
    timing = {k: v for k, v in result.summary.items() if k.endswith("seconds")}
    with open(os.path.join(directory, "timing.json"), "w") as fh:
        json.dump(timing, fh, indent=2)
        fh.write("\n")
