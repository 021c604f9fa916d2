"""Implementations of the command-line subcommands."""
import csv
import json
import logging
import math
import os
import time
import warnings

import numpy as np

from .. import fredholm as fh
from ..errors import ConfigError, FitFailure, InvalidArgumentError, NumericError
from ..geometry import Window, load_mesh
from ..moments import (
    BandedDistanceDesign,
    ConstantIntensity,
    ConstantThinning,
    LinearDesign,
    LinearThinning,
    MaternPCF,
    PoissonPCF,
    StepThinning,
    ThinnedClusterIntensity,
    admissibility_check,
    estimate_pcf_kernel,
    fit_intensity_loglinear,
    fit_intensity_piecewise_mle,
    fit_pcf_nls,
    from_params,
    half_plane_partition,
    read_covariate,
    read_pcf,
    write_pcf,
)
from ..pointprocess import (
    SeededStream,
    read_pattern,
    restrict,
    simulate_poisson,
    simulate_thinned_cluster,
    write_pattern,
)
from ..moments.io import read_points
from . import svg
from .config import FULL_N, serialize
from .synthetic import synthetic_analogue

log = logging.getLogger("ppfredholm.cli")

PCF_FAMILIES = {"matern": ("alpha1", "alpha2"), "exp_plus_one": ("alpha3", "alpha4"),
                "exp_scaled": ("a1", "a2")}


# ----------------------------------------------------------------------
# building blocks


def read_window(path):
    """Window from a ``ring,x,y`` CSV (ring 0 outer, others holes)."""
    if not os.path.exists(path):
        raise InvalidArgumentError(f"file not found: {path}")
    rings = {}
    with open(path, newline="") as fh_:
        reader = csv.reader(fh_)
        header = [h.strip().lower() for h in next(reader, [])]
        if header != ["ring", "x", "y"]:
            raise InvalidArgumentError(f"{path}: expected header ring,x,y")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                k, x, y = int(row[0]), float(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise InvalidArgumentError(f"{path}: line {lineno}: malformed row {row!r}") from None
            rings.setdefault(k, []).append((x, y))
    if 0 not in rings:
        raise InvalidArgumentError(f"{path}: no outer ring (ring 0)")
    return Window(rings[0], [rings[k] for k in sorted(rings) if k != 0])


def windows(cfg):
    """(W, W_obs, W_pred) from the [window] section; W_pred may be None."""
    if cfg.window["file"]:
        W_obs = read_window(cfg.path("window.file"))
        W = Window(W_obs.outer)
        W_pred = Window(W_obs.holes[0]) if W_obs.holes else None
        return W, W_obs, W_pred
    x0, y0, x1, y1 = cfg.window["bounds"]
    W = Window.rectangle(x0, y0, x1, y1)
    hole = cfg.window["hole"]
    if not hole:
        return W, W, None
    W_pred = Window.rectangle(*hole)
    return W, Window.rectangle(x0, y0, x1, y1, holes=[W_pred.outer]), W_pred


def thinning(cfg):
    th = cfg.thinning
    p = th["p"].lower()
    if p == "step":
        return StepThinning(th["alpha1"], th["alpha2"], th["v"])
    if p == "linear":
        return LinearThinning()
    return ConstantThinning(float(p))


def true_moments(cfg):
    pr = cfg.process
    p = thinning(cfg)
    if pr["model"] == "poisson":
        return ThinnedClusterIntensity(1.0, pr["intensity"], p), PoissonPCF()
    return ThinnedClusterIntensity(pr["kappa"], pr["mu"], p), MaternPCF(pr["kappa"], pr["radius"])


def load_pattern(cfg, window):
    path = cfg.path("pattern.file")
    if not path:
        raise ConfigError("a pattern file is required", "pattern.file")
    if not os.path.exists(path):
        raise InvalidArgumentError(f"file not found: {path}")
    return read_pattern(path, window, clip=cfg.pattern["clip"])


def design(cfg):
    cv = cfg.covariates
    if cv["design"] == "banded":
        fields = []
        for key in ("fault", "volcano", "plate"):
            if not cv[key]:
                raise ConfigError("required by the banded design", f"covariates.{key}")
            fields.append(read_covariate(cfg.path(f"covariates.{key}"), key))
        return BandedDistanceDesign(*fields, knots=cv["knots"])
    if not cv["files"]:
        raise ConfigError("no covariate files for the linear design", "covariates.files")
    covs = {}
    for f in cv["files"]:
        path = f if os.path.isabs(f) else os.path.join(cfg.base_dir, f)
        name = os.path.splitext(os.path.basename(path))[0]
        while name in covs:
            name += "_"
        covs[name] = read_covariate(path, name)
    return LinearDesign(covs, intercept=cv["intercept"])


class Moments:
    """Resolved (lambda, g) plus whatever was fitted on the way."""

    def __init__(self, lam, g, fits=None, g_emp=None, admissibility=None):
        self.lam, self.g = lam, g
        self.fits = fits or {}
        self.g_emp = g_emp
        self.admissibility = admissibility


def fit_moments(cfg, pattern, W, mesh=None):
    mo = cfg.moments
    fits = {}
    kind = mo["intensity"]
    if kind == "true":
        lam = true_moments(cfg)[0]
    elif kind == "constant":
        lam = ConstantIntensity(mo["value"])
    elif kind == "piecewise_fit":
        lam = fit_intensity_piecewise_mle(pattern, half_plane_partition(W, mo["split"]))
        fits["intensity"] = {"kind": "piecewise", "split": mo["split"],
                             "values": list(lam.values)}
    else:
        fit = fit_intensity_loglinear(pattern, design(cfg), mesh=mesh,
                                      target_edge=cfg.covariates["fit_edge"] or None)
        lam = fit.model
        fits["intensity"] = {"kind": "loglinear", "names": fit.names,
                             "coefficients": fit.model.coefficients.tolist(),
                             "std_errors": fit.std_errors.tolist(), "loglik": fit.loglik,
                             "iterations": fit.iterations}
    g_emp = adm = None
    family = mo["pcf"]
    needs_emp = family in ("kernel", "matern_fit", "exp_plus_one_fit", "exp_scaled_fit")
    if needs_emp:
        g_emp = estimate_pcf_kernel(pattern, lam, bandwidth=mo["bandwidth"] or None)
    elif family == "empirical" or (family.endswith("_fit") and mo["pcf_file"]):
        g_emp = read_pcf(cfg.path("moments.pcf_file"))
    if family == "true":
        g = true_moments(cfg)[1]
    elif family == "poisson":
        g = PoissonPCF()
    elif family in PCF_FAMILIES:
        params = dict(zip(PCF_FAMILIES[family], mo["pcf_params"]))
        if family == "exp_scaled":
            params["wrapped"] = mo["wrapped"]
        g = from_params(family, **params)
    elif family in ("kernel", "empirical"):
        g = g_emp
    else:
        base = family[:-4]
        g = fit_pcf_nls(g_emp, base, mo["fit_range"] or None, wrapped=mo["wrapped"])
        fits["pcf"] = {"family": base, **{k: v for k, v in g.params().items()}}
    if g_emp is not None and family != "empirical":
        R = cfg.process["radius"]
        if g_emp.r[-1] > 2 * R:
            adm = admissibility_check(g_emp, R)
    return Moments(lam, g, fits, g_emp, adm)


MAX_TRIANGLES = 2_000_000


def make_mesh(cfg, W_obs, lam, target_edge=None):
    if cfg.mesh["file"]:
        path = cfg.path("mesh.file")
        if not os.path.exists(path):
            raise InvalidArgumentError(f"file not found: {path}")
        return load_mesh(path, W_obs)
    h = target_edge or cfg.mesh["target_edge"]
    # equilateral-triangle count estimate; a dense operator needs far fewer
    estimate = W_obs.area / (math.sqrt(3) / 4 * h * h)
    if estimate > MAX_TRIANGLES:
        raise ConfigError(f"target edge {h:g} gives roughly {estimate:.2g} triangles on a window of "
                          f"area {W_obs.area:.4g}", "mesh.target_edge")
    return fh.build_mesh(W_obs, h, lam)


def require_files(cfg, keys):
    """Fail early on missing input files before any expensive step."""
    for key in keys:
        path = cfg.path(key)
        if path and not os.path.exists(path):
            raise InvalidArgumentError(f"{key}: file not found: {path}")


def operator(cfg, mesh, lam, g):
    """Assemble, or load from the cache when one is configured."""
    orders = tuple(cfg.mesh["orders"])
    norm = cfg.moments["normalization"]
    cache = cfg.path("mesh.cache_dir")
    path = None
    if cache:
        os.makedirs(cache, exist_ok=True)
        key = fh.operator_fingerprint(mesh, lam, g, norm, orders)
        path = os.path.join(cache, f"operator-{key[:20]}.npz")
        if os.path.exists(path):
            op = fh.load_operator(path, mesh, lam, g)
            if op.lu is None:
                fh.factorize_operator(op)
            log.info("operator cache hit: %s (assembly skipped)", path)
            return op
    op = fh.assemble(mesh, lam, g, orders=orders, normalization=norm)
    if path:
        fh.save_operator(op, path)
        log.info("operator cached: %s", path)
    return op


def targets(cfg, W_pred=None):
    """(points, shape, bounds) from the [targets] section."""
    tg = cfg.targets
    if tg["file"]:
        path = cfg.path("targets.file")
        if not os.path.exists(path):
            raise InvalidArgumentError(f"file not found: {path}")
        return read_points(path), None, None
    bounds = tg["bounds"] or (W_pred.bounds if W_pred is not None else None)
    if not bounds:
        raise ConfigError("no target bounds and no window hole to default to", "targets.bounds")
    nx, ny = tg["shape"]
    return fh.grid_targets(bounds, nx, ny), (nx, ny), tuple(bounds)


def output_path(cfg, default):
    out = cfg.run["output"]
    if not out:
        return default
    return out if os.path.isabs(out) else os.path.normpath(os.path.join(os.getcwd(), out))


def write_sidecar(path, cfg, version, **extra):
    doc = {"version": version, "config": serialize(cfg), **extra}
    with open(path, "w") as fh_:
        json.dump(doc, fh_, indent=2, sort_keys=True, default=_jsonable)
        fh_.write("\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return str(v)


def write_grid_csv(path, pts, values, column):
    with open(path, "w", newline="") as fh_:
        fh_.write(f"x,y,{column}\n")
        for (x, y), v in zip(pts.tolist(), np.asarray(values, dtype=float).tolist()):
            fh_.write(f"{x!r},{y!r},{v!r}\n" if math.isfinite(v) else f"{x!r},{y!r},nan\n")


def _svg_for(cfg, csv_path, image, bounds, title):
    if cfg.run["svg"] and image is not None:
        path = os.path.splitext(csv_path)[0] + ".svg"
        svg.heatmap(image, bounds, path, title=title, log=True)
        return path
    return None


# ----------------------------------------------------------------------
# commands


def cmd_simulate(cfg, version):
    W, W_obs, _ = windows(cfg)
    lam, _ = true_moments(cfg)
    seed = cfg.run["seed"]
    pr = cfg.process
    rng = SeededStream(seed, 0)
    if pr["model"] == "poisson":
        pattern = simulate_poisson(lam, W_obs, rng)
    else:
        full = simulate_thinned_cluster(pr["kappa"], pr["mu"], pr["radius"], thinning(cfg), W, rng)
        pattern = restrict(full, W_obs)
    out = output_path(cfg, cfg.path("pattern.file") or "pattern.csv")
    write_pattern(pattern, out)
    write_sidecar(out + ".json", cfg, version, seed=seed, points=len(pattern))
    log.info("wrote %d points to %s", len(pattern), out)
    return 0


def cmd_predict(cfg, version):
    W, W_obs, W_pred = windows(cfg)
    pattern = load_pattern(cfg, W_obs)
    lam0 = true_moments(cfg)[0] if cfg.moments["intensity"] == "true" else None
    mesh = make_mesh(cfg, W_obs, lam0)
    mom = fit_moments(cfg, pattern, W, mesh)
    op = operator(cfg, mesh, mom.lam, mom.g)
    pts, shape, bounds = targets(cfg, W_pred)
    grid = fh.predict_grid(op, pattern, pts, clamp=cfg.run["clamp"], variance=cfg.run["variance"],
                           shape=shape, bounds=bounds)
    out = output_path(cfg, "prediction.csv")
    grid.to_csv(out)
    image = grid.as_image() if shape else None
    svg_path = _svg_for(cfg, out, image, bounds, "predicted local intensity")
    reasons = {str(k): v for k, v in sorted(grid.reasons.items())}
    write_sidecar(out + ".json", cfg, version, targets=len(grid), masked=reasons,
                  negative=grid.negative_count, operator=op.fingerprint(), svg=svg_path,
                  fits=mom.fits)
    log.info("predicted %d of %d targets (%d negative)", int(grid.mask.sum()), len(grid),
             grid.negative_count)
    if not grid.mask.any():
        raise NumericError("every target failed or was masked")
    return 0


def _fit_one(cfg, pattern, W):
    mom = fit_moments(cfg, pattern, W)
    out = dict(mom.fits)
    if mom.admissibility is not None:
        out["admissibility"] = {"admissible": mom.admissibility.admissible,
                                "reasons": list(mom.admissibility.reasons),
                                "median_excess": mom.admissibility.median_excess}
    return mom, out


def cmd_fit(cfg, version):
    W, W_obs, _ = windows(cfg)
    out = output_path(cfg, "fit.json")
    n_rep = cfg.run["replicates"]
    if n_rep:
        return _fit_batch(cfg, W, W_obs, out, version, n_rep)
    if cfg.pattern["file"]:
        pattern = load_pattern(cfg, W_obs)
        mom, result = _fit_one(cfg, pattern, W)
        if mom.g_emp is not None and cfg.moments["pcf"] != "empirical":
            pcf_path = os.path.splitext(out)[0] + "_pcf.csv"
            write_pcf(mom.g_emp, pcf_path)
            result["empirical_pcf"] = pcf_path
    else:
        family = cfg.moments["pcf"]
        if not (family.endswith("_fit") and cfg.moments["pcf_file"]):
            raise ConfigError("without a pattern, fit needs moments.pcf = <family>_fit and "
                              "moments.pcf_file", "pattern.file")
        g_emp = read_pcf(cfg.path("moments.pcf_file"))
        g = fit_pcf_nls(g_emp, family[:-4], cfg.moments["fit_range"] or None,
                        wrapped=cfg.moments["wrapped"])
        result = {"pcf": {"family": family[:-4], **g.params()}}
    with open(out, "w") as fh_:
        json.dump({"version": version, **result}, fh_, indent=2, sort_keys=True, default=_jsonable)
        fh_.write("\n")
    log.info("wrote %s", out)
    return 0


def _fit_batch(cfg, W, W_obs, out, version, n_rep):
    """Fit simulated replicates and tabulate parameter means and SDs."""
    pr = cfg.process
    p = thinning(cfg)
    rows = []
    for rep in range(n_rep):
        full = simulate_thinned_cluster(pr["kappa"], pr["mu"], pr["radius"], p, W,
                                        SeededStream(cfg.run["seed"], rep))
        x = restrict(full, W_obs)
        lam = fit_intensity_piecewise_mle(x, half_plane_partition(W, cfg.moments["split"]))
        g_emp = estimate_pcf_kernel(x, lam, bandwidth=cfg.moments["bandwidth"] or None)
        row = {"replicate": rep, "beta_left": lam.values[0], "beta_right": lam.values[1]}
        for fam in ("matern", "exp_plus_one"):
            try:
                row.update(fit_pcf_nls(g_emp, fam, cfg.moments["fit_range"] or None).params())
            except FitFailure as exc:
                log.warning("replicate %d: %s fit failed: %s", rep, fam, exc)
                row.update({k: math.nan for k in PCF_FAMILIES[fam]})
        row["admissible"] = bool(admissibility_check(g_emp, pr["radius"]).admissible)
        rows.append(row)
    keys = [k for k in rows[0] if k != "replicate"]
    base = os.path.splitext(out)[0]
    with open(base + "_replicates.csv", "w", newline="") as fh_:
        fh_.write(",".join(["replicate"] + keys) + "\n")
        for r in rows:
            fh_.write(",".join([str(r["replicate"])] + [repr(float(r[k])) for k in keys]) + "\n")
    summary = {}
    with open(base + "_summary.csv", "w", newline="") as fh_:
        fh_.write("parameter,mean,sd,n\n")
        for k in keys:
            v = np.array([float(r[k]) for r in rows])
            v = v[np.isfinite(v)]
            mean = float(v.mean()) if len(v) else math.nan
            sd = float(v.std(ddof=1)) if len(v) > 1 else math.nan
            summary[k] = {"mean": mean, "sd": sd, "n": int(len(v))}
            fh_.write(f"{k},{mean!r},{sd!r},{len(v)}\n")
    with open(out, "w") as fh_:
        json.dump({"version": version, "replicates": n_rep, "summary": summary}, fh_, indent=2,
                  sort_keys=True)
        fh_.write("\n")
    return 0


def cmd_study(cfg, version):
    from ..study import Scenario, SensitivityConfig, run_goodness_study, run_sensitivity_study, write_report

    st = cfg.study
    if st["full_n"]:
        warnings.warn(f"full-size study ({FULL_N[st['kind']]} replicates) takes hours", stacklevel=2)
    mo = cfg.moments
    sc = Scenario(st["scenario"], st["radius"], st["kappa"], st["mu"], st["replicates"],
                  st["target_edge"], cfg.run["seed"], mo["normalization"], tuple(st["grid"]))
    if st["kind"] == "goodness":
        result = run_goodness_study(sc)
    else:
        sens = SensitivityConfig(n_admissible=st["replicates"], target_edge=st["target_edge"],
                                 fit_range=mo["fit_range"] or None, bandwidth=mo["bandwidth"] or None)
        result = run_sensitivity_study(sc, sens)
    out = output_path(cfg, "study")
    write_report(result, out, replicates=st["write_replicates"],
                 extra={"version": version, "config": serialize(cfg)})
    log.info("study report written to %s", out)
    return 0


def cmd_covariate_pipeline(cfg, version):
    """Log-linear fit, kernel pcf, parametric pcf fit and prediction in the masked zone."""
    out = output_path(cfg, "pipeline")
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    if cfg.covariates["synthetic"]:
        paths = synthetic_analogue(os.path.join(out, "inputs"), cfg.covariates["synthetic_points"],
                                   cfg.run["seed"])
        cfg.values["window"]["file"] = paths["window"]
        cfg.values["pattern"]["file"] = paths["pattern"]
        for key in ("fault", "volcano", "plate"):
            cfg.values["covariates"][key] = paths[key]
        cfg.values["covariates"]["design"] = "banded"
        cfg.values["targets"]["bounds"] = ()
    if cfg.moments["intensity"] == "true":
        cfg.values["moments"]["intensity"] = "loglinear_fit"
    if cfg.moments["pcf"] == "true":
        cfg.values["moments"]["pcf"] = "exp_scaled_fit"
    require_files(cfg, ["pattern.file", "mesh.file", "moments.pcf_file", "targets.file",
                        "covariates.fault", "covariates.volcano", "covariates.plate"])
    W, W_obs, W_pred = windows(cfg)
    if W_pred is None:
        raise ConfigError("the pipeline needs a masked zone (window hole)", "window.hole")
    pattern = load_pattern(cfg, W_obs)
    mesh = make_mesh(cfg, W_obs, None)
    log.info("mesh: %d triangles, %d nodes", mesh.n_triangles, mesh.n_nodes)
    mom = fit_moments(cfg, pattern, W, mesh)
    op = operator(cfg, mesh, mom.lam, mom.g)
    pts, shape, bounds = targets(cfg, W_pred)
    grid = fh.predict_grid(op, pattern, pts, clamp=cfg.run["clamp"], shape=shape, bounds=bounds)
    inside_pred = W_pred.contains(pts)
    grid.mask &= inside_pred
    for k in np.flatnonzero(~inside_pred):
        grid.reasons.setdefault(int(k), "target outside the masked zone")
    cond = np.where(grid.mask, grid.values, np.nan)
    lam_vals = np.where(grid.mask, np.asarray(mom.lam(pts), dtype=float), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = cond / lam_vals
    files = {}
    for name, vals, col, title in (
        ("conditional", cond, "lambda_hat", "predicted local intensity"),
        ("intensity", lam_vals, "lambda", "fitted intensity"),
        ("ratio", ratio, "ratio", "ratio of predicted to fitted intensity"),
    ):
        path = os.path.join(out, f"{name}.csv")
        write_grid_csv(path, pts, vals, col)
        image = vals.reshape(shape) if shape else None
        files[name] = {"csv": path, "svg": _svg_for(cfg, path, image, bounds, title)}
    if mom.g_emp is not None:
        write_pcf(mom.g_emp, os.path.join(out, "pcf_empirical.csv"))
    summary = {
        "points": len(pattern),
        "triangles": mesh.n_triangles,
        "nodes": mesh.n_nodes,
        "targets_predicted": int(grid.mask.sum()),
        "negative_predictions": int(np.sum(grid.mask & (grid.values < 0))),
        "fits": mom.fits,
        "files": files,
    }
    write_sidecar(os.path.join(out, "pipeline.json"), cfg, version, **summary)
    timing = {"assembly_seconds": op.stats.get("assembly_seconds"),
              "factor_seconds": op.stats.get("factor_seconds"),
              "runtime_seconds": time.perf_counter() - t0}
    with open(os.path.join(out, "timing.json"), "w") as fh_:
        json.dump(timing, fh_, indent=2)
        fh_.write("\n")
    log.info("pipeline finished in %.1fs", timing["runtime_seconds"])
    if not grid.mask.any():
        raise NumericError("no target in the masked zone could be predicted")
    return 0
