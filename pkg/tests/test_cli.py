import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ppfredholm.cli import build_fingerprint, main
from ppfredholm.cli.config import parse, serialize
from ppfredholm.errors import ConfigError
from ppfredholm.moments import EmpiricalPCF, MaternPCF, write_pcf
from ppfredholm.pointprocess import PointPattern, write_pattern


def run(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "ppfredholm", *map(str, args)], capture_output=True,
                          text=True, cwd=cwd)


def write(path, text):
    path.write_text(text)
    return path


def read_column(path, column):
    with open(path) as fh:
        return np.array([float(r[column]) for r in csv.DictReader(fh)])


POISSON_CFG = """\
[mesh]
target_edge = 0.05
[process]
model = poisson
intensity = 100
[thinning]
p = 1
[moments]
intensity = constant
value = 100
pcf = poisson
[pattern]
file = pattern.csv
[targets]
shape = [5, 5]
"""


@pytest.fixture
def poisson_setup(tmp_path, w_obs_p1):
    # 91 points: the expected count of a rate-100 process on W_obs
    gen = np.random.default_rng(0)
    pts = []
    while len(pts) < 91:
        x = gen.uniform(0, 1, 2)
        if w_obs_p1.contains(x[None])[0]:
            pts.append(x)
    write_pattern(PointPattern(np.array(pts), w_obs_p1), tmp_path / "pattern.csv")
    return write(tmp_path / "poisson.ini", POISSON_CFG)


# ---------------------------------------------------------------- configuration


def test_config_round_trip():
    cfg = parse(POISSON_CFG)
    text = serialize(cfg)
    again = parse(text)
    assert again == cfg
    assert serialize(again) == text


def test_config_defaults_resolve():
    cfg = parse("")
    assert cfg.get("targets.bounds") == (0.35, 0.35, 0.65, 0.65)
    assert cfg.study["grid"] == (21, 21)
    assert cfg.run["threads"] >= 1


def test_config_unknown_key_names_path():
    with pytest.raises(ConfigError, match="mesh.edge"):
        parse("[mesh]\nedge = 0.1\n")
    with pytest.raises(ConfigError, match="solver"):
        parse("[solver]\nx = 1\n")


def test_config_type_errors_name_key():
    with pytest.raises(ConfigError, match="mesh.target_edge"):
        parse("[mesh]\ntarget_edge = fine\n")
    with pytest.raises(ConfigError, match="window.bounds"):
        parse("[window]\nbounds = [0, 0, 1]\n")


def test_config_overrides():
    cfg = parse("", overrides=["process.kappa=25", "run.seed=4"])
    assert cfg.process["kappa"] == 25.0 and cfg.run["seed"] == 4
    with pytest.raises(ConfigError):
        parse("", overrides=["kappa=25"])


def test_dump_config(tmp_path, capsys):
    cfg_path = write(tmp_path / "c.ini", "[process]\nkappa = 30\n")
    assert main(["simulate", str(cfg_path), "--dump-config", "--seed", "9"]) == 0
    text = capsys.readouterr().out
    cfg = parse(text)
    assert cfg.process["kappa"] == 30.0 and cfg.run["seed"] == 9


def test_version_prints_fingerprint():
    out = run("--version")
    assert out.returncode == 0
    assert out.stdout.strip() == build_fingerprint()


# ---------------------------------------------------------------- simulate


def test_simulate_is_byte_reproducible(tmp_path):
    cfg_path = write(tmp_path / "sim.ini", "[process]\nradius = 0.09\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", str(cfg_path), "--seed", "1", "--output", str(a)]) == 0
    assert main(["simulate", str(cfg_path), "--seed", "1", "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) > 100
    side = json.loads((tmp_path / "a.csv.json").read_text())
    assert side["seed"] == 1 and side["version"] == build_fingerprint()
    assert "kappa = 50.0" in side["config"]


def test_simulate_mu_zero_writes_header_only(tmp_path):
    cfg_path = write(tmp_path / "sim.ini", "[process]\nmu = 0\n")
    out = tmp_path / "empty.csv"
    assert main(["simulate", str(cfg_path), "--output", str(out)]) == 0
    assert out.read_text() == "x,y\n"


def test_invalid_thinning_exit_2(tmp_path):
    cfg_path = write(tmp_path / "bad.ini", "[thinning]\np = 1.5\n")
    out = run("simulate", cfg_path)
    assert out.returncode == 2
    assert "thinning.p" in out.stderr


def test_missing_config_exit_2(tmp_path):
    out = run("simulate", tmp_path / "nope.ini")
    assert out.returncode == 2 and "nope.ini" in out.stderr


# ---------------------------------------------------------------- predict


def test_predict_poisson_closed_form(poisson_setup, tmp_path):
    out = tmp_path / "pred.csv"
    assert main(["predict", str(poisson_setup), "--output", str(out)]) == 0
    vals = read_column(out, "lambda_hat")
    assert len(vals) == 25
    np.testing.assert_allclose(vals, 91 / 0.91, rtol=1e-6)
    assert "<svg" in (tmp_path / "pred.svg").read_text()[:300]
    side = json.loads((tmp_path / "pred.csv.json").read_text())
    assert side["targets"] == 25 and side["masked"] == {}


def test_predict_cached_operator(poisson_setup, tmp_path):
    args = ["predict", poisson_setup, "--set", f"mesh.cache_dir={tmp_path / 'cache'}"]
    first = run(*args, "--output", tmp_path / "p1.csv")
    second = run(*args, "--output", tmp_path / "p2.csv")
    assert first.returncode == 0 and second.returncode == 0, second.stderr
    assert "cache hit" not in first.stderr
    assert "assembly skipped" in second.stderr
    assert (tmp_path / "p1.csv").read_bytes() == (tmp_path / "p2.csv").read_bytes()


def test_predict_masks_target_inside_observation_window(poisson_setup, tmp_path):
    write(tmp_path / "targets.csv", "x,y\n0.5,0.5\n0.1,0.1\n")
    out = tmp_path / "pred.csv"
    assert main(["predict", str(poisson_setup), "--output", str(out),
                 "--set", "targets.file=targets.csv"]) == 0
    vals = read_column(out, "lambda_hat")
    assert vals[0] == pytest.approx(100, rel=1e-6) and np.isnan(vals[1])
    masked = json.loads((tmp_path / "pred.csv.json").read_text())["masked"]
    assert masked == {"1": "target inside the observation window"}


def test_predict_missing_pattern_exit_2(poisson_setup, tmp_path):
    out = run("predict", poisson_setup, "--set", "pattern.file=absent.csv")
    assert out.returncode == 2
    assert "absent.csv" in out.stderr


def test_reingest_prediction_targets(poisson_setup, tmp_path):
    # an emitted grid can be read back as a target list
    out = tmp_path / "pred.csv"
    main(["predict", str(poisson_setup), "--output", str(out)])
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    write(tmp_path / "t.csv", "x,y\n" + "\n".join(f"{x!r},{y!r}" for x, y in rows[:, :2].tolist()))
    out2 = tmp_path / "pred2.csv"
    assert main(["predict", str(poisson_setup), "--output", str(out2),
                 "--set", "targets.file=t.csv"]) == 0
    np.testing.assert_array_equal(read_column(out2, "lambda_hat"), rows[:, 2])


# ---------------------------------------------------------------- fit


def test_fit_exact_tabulation_recovers_matern(tmp_path):
    r = np.linspace(0.005, 0.25, 60)
    g = MaternPCF(50.0, 0.09)
    write_pcf(EmpiricalPCF(r, g(r)), tmp_path / "g.csv")
    cfg_path = write(tmp_path / "fit.ini", "[moments]\npcf = matern_fit\npcf_file = g.csv\n"
                                           "fit_range = [0.005, 0.25]\n")
    out = tmp_path / "fit.json"
    assert main(["fit", str(cfg_path), "--output", str(out)]) == 0
    par = json.loads(out.read_text())["pcf"]
    assert par["alpha1"] == pytest.approx(50.0, rel=1e-6)
    assert par["alpha2"] == pytest.approx(0.09, rel=1e-6)


def test_fit_rank_deficient_covariates_exit_3(tmp_path, w_obs_p1):
    text = "x,y\n0.2,0.2\n0.8,0.7\n"
    write(tmp_path / "cova.csv", text)
    write(tmp_path / "covb.csv", text)
    pts = np.random.default_rng(1).uniform(0, 1, (400, 2))
    pts = pts[w_obs_p1.contains(pts)]
    write_pattern(PointPattern(pts, w_obs_p1), tmp_path / "pattern.csv")
    cfg_path = write(tmp_path / "fit.ini", "[moments]\nintensity = loglinear_fit\npcf = poisson\n"
                                           "[covariates]\nfiles = [cova.csv, covb.csv]\nfit_edge = 0.05\n"
                                           "[pattern]\nfile = pattern.csv\n")
    out = run("fit", cfg_path, "--output", tmp_path / "fit.json")
    assert out.returncode == 3, out.stderr
    assert "cova" in out.stderr and "covb" in out.stderr


def test_fit_replicate_batch_summary(tmp_path):
    cfg_path = write(tmp_path / "fit.ini", "[run]\nreplicates = 3\n")
    out = tmp_path / "batch.json"
    assert main(["fit", str(cfg_path), "--output", str(out)]) == 0
    summary = json.loads(out.read_text())["summary"]
    assert {"beta_left", "beta_right", "alpha1", "alpha2", "alpha3", "alpha4"} <= set(summary)
    assert (tmp_path / "batch_replicates.csv").read_text().count("\n") == 4


# ---------------------------------------------------------------- study


STUDY_CFG = """\
[study]
kind = {kind}
replicates = {n}
target_edge = 0.05
grid = [5, 5]
"""


def test_study_goodness_smoke_and_determinism(tmp_path):
    cfg_path = write(tmp_path / "s.ini", STUDY_CFG.format(kind="goodness", n=5))
    for name in ("a", "b"):
        assert main(["study", str(cfg_path), "--output", str(tmp_path / name)]) == 0
    for f in ("config.json", "metrics.csv", "summary.csv", "timing.json"):
        assert (tmp_path / "a" / f).exists()
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_study_sensitivity_schema(tmp_path):
    cfg_path = write(tmp_path / "s.ini", STUDY_CFG.format(kind="sensitivity", n=2))
    assert main(["study", str(cfg_path), "--output", str(tmp_path / "r")]) == 0
    head = (tmp_path / "r" / "metrics.csv").read_text().splitlines()[0].split(",")
    assert [h for h in head if h.startswith("rrmse_") and not h.endswith("_vs_theo")] == \
        ["rrmse_theo", "rrmse_mat", "rrmse_exp", "rrmse_emp"]


# ---------------------------------------------------------------- covariate pipeline


PIPE_CFG = """\
[mesh]
target_edge = 40
[covariates]
synthetic = true
synthetic_points = 600
fit_edge = 40
[targets]
shape = [4, 4]
"""


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    cfg_path = write(d / "p.ini", PIPE_CFG)
    assert main(["covariate-pipeline", str(cfg_path), "--output", str(d / "out")]) == 0
    return d / "out"


def test_pipeline_emits_three_maps(pipeline_run):
    for name in ("conditional", "intensity", "ratio"):
        assert (pipeline_run / f"{name}.csv").exists()
        assert "<svg" in (pipeline_run / f"{name}.svg").read_text()[:300]
    side = json.loads((pipeline_run / "pipeline.json").read_text())
    assert side["targets_predicted"] > 0
    assert len(side["fits"]["intensity"]["coefficients"]) == 13
    cond = read_column(pipeline_run / "conditional.csv", "lambda_hat")
    lam = read_column(pipeline_run / "intensity.csv", "lambda")
    ratio = read_column(pipeline_run / "ratio.csv", "ratio")
    ok = np.isfinite(ratio)
    np.testing.assert_allclose(ratio[ok], cond[ok] / lam[ok], rtol=1e-12)


def test_pipeline_missing_covariate_exit_2(tmp_path):
    write(tmp_path / "pattern.csv", "x,y\n10,10\n")
    cfg_path = write(tmp_path / "p.ini", "[window]\nbounds = [0, 0, 600, 600]\nhole = [300, 300, 400, 400]\n"
                                         "[covariates]\ndesign = banded\nfault = fault.csv\n"
                                         "volcano = v.csv\nplate = p.csv\n"
                                         "[pattern]\nfile = pattern.csv\n")
    out = run("covariate-pipeline", cfg_path, "--output", tmp_path / "o")
    assert out.returncode == 2
    assert "fault.csv" in out.stderr


def test_pipeline_poisson_ratio_is_constant(tmp_path):
    cfg_path = write(tmp_path / "p.ini", PIPE_CFG + "[moments]\npcf = poisson\n")
    assert main(["covariate-pipeline", str(cfg_path), "--output", str(tmp_path / "o")]) == 0
    ratio = read_column(tmp_path / "o" / "ratio.csv", "ratio")
    ratio = ratio[np.isfinite(ratio)]
    # with g = 1 every target gets count / integral of the fitted intensity
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-6)
    assert ratio[0] == pytest.approx(1.0, abs=0.02)


def test_oversized_mesh_rejected_before_meshing(poisson_setup):
    out = run("predict", poisson_setup, "--set", "mesh.target_edge=0.0001")
    assert out.returncode == 2
    assert "mesh.target_edge" in out.stderr
