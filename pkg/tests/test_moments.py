import math

import numpy as np
import pytest

from ppfredholm.errors import EvaluationError, FitFailure, InvalidArgumentError, InvalidModelError
from ppfredholm.geometry import Window, triangulate
from ppfredholm.moments import (
    BandedDistanceDesign,
    ConstantIntensity,
    DistanceField,
    EmpiricalPCF,
    ExpPlusOnePCF,
    ExpScaledPCF,
    LinearDesign,
    LogLinearIntensity,
    MaternPCF,
    PiecewiseIntensity,
    PoissonPCF,
    RasterField,
    StepThinning,
    ThinnedClusterIntensity,
    admissibility_check,
    estimate_pcf_kernel,
    eval_intensity,
    eval_pcf,
    fit_intensity_loglinear,
    fit_intensity_piecewise_mle,
    fit_pcf_nls,
    from_params,
    half_plane_partition,
    read_covariate,
    read_pcf,
    write_pcf,
)
from ppfredholm.pointprocess import (
    PointPattern,
    SeededStream,
    restrict,
    simulate_poisson,
    simulate_thinned_cluster,
)


def _matern_closed_form(r, kappa, R):
    u = min(r / (2 * R), 1.0)
    return 1 + 2 / (kappa * (math.pi * R) ** 2) * (math.acos(u) - u * math.sqrt(1 - u * u))


# ----------------------------------------------------------------------
# intensity models


def test_thinned_cluster_intensity_examples():
    lam = ThinnedClusterIntensity(50, 40, StepThinning(0.8, 0.2, 0.5))
    assert eval_intensity(lam, (0.25, 0.5)) == pytest.approx(1600.0, rel=1e-15)
    assert eval_intensity(lam, (0.75, 0.5)) == pytest.approx(400.0, rel=1e-15)


def test_loglinear_intercept_plug_in():
    beta = [-178.483, 0.611, 9.673, 0.034, -0.061, -0.114, -0.034,
            -0.0268, -0.0175, -0.0179, -0.0214, 0.0040, -0.0093]
    origin = np.array([[0.0, 0.0]])
    design = BandedDistanceDesign(DistanceField([np.array([[0.0, -1.0], [0.0, 1.0]])]),
                                  DistanceField(origin), DistanceField([np.array([[-1.0, 0.0], [1.0, 0.0]])]))
    lam = LogLinearIntensity(design, beta)
    assert eval_intensity(lam, (0.0, 0.0)) == pytest.approx(math.exp(-178.483), rel=1e-12)


def test_banded_design_columns():
    fault = lambda x: x[:, 0]  # noqa: E731
    zero = lambda x: np.zeros(len(x))  # noqa: E731
    design = BandedDistanceDesign(fault, zero, zero)
    # distances 3, 20, 50, 100, 200 land in bands 1..5
    pts = np.column_stack([[3.0, 20.0, 50.0, 100.0, 200.0], np.zeros(5)])
    X = design(pts)
    assert X.shape == (5, 13)
    assert np.array_equal(X[:, 6:11], np.diag([3.0, 20.0, 50.0, 100.0, 200.0]))
    # a knot belongs to the lower band
    assert design(np.array([[6.73, 0.0]]))[0, 6] == 6.73


def test_banded_design_knots_must_increase():
    with pytest.raises(InvalidModelError):
        BandedDistanceDesign(None, None, None, knots=(1, 2, 2, 3))


def test_piecewise_intensity_outside_partition():
    left = Window.rectangle(0, 0, 0.5, 1)
    lam = PiecewiseIntensity((left,), (3.0,))
    assert lam((0.25, 0.25)) == 3.0
    with pytest.raises(EvaluationError):
        lam((0.75, 0.25))


def test_loglinear_evaluation_error():
    design = LinearDesign({"c": lambda x: np.where(x[:, 0] > 0.5, np.nan, 1.0)})
    lam = LogLinearIntensity(design, [0.0, 1.0])
    with pytest.raises(EvaluationError):
        lam((0.75, 0.5))


def test_constant_intensity_validation():
    with pytest.raises(InvalidModelError):
        ConstantIntensity(-1.0)


def test_raster_bilinear():
    x = np.array([0.0, 1.0, 2.0])
    y = np.array([0.0, 1.0])
    vals = np.add.outer(2 * x, 3 * y)  # linear field, reproduced exactly
    f = RasterField(x, y, vals)
    pts = np.array([[0.5, 0.5], [1.7, 0.2]])
    assert np.allclose(f(pts), 2 * pts[:, 0] + 3 * pts[:, 1], atol=1e-14)


def test_read_covariate_dispatch(tmp_path):
    pts = tmp_path / "v.csv"
    pts.write_text("x,y\n3,4\n")
    assert read_covariate(str(pts))((0.0, 0.0)) == 5.0
    lines = tmp_path / "f.csv"
    lines.write_text("id,x,y\n1,0,0\n1,1,0\n2,5,5\n2,5,6\n")
    assert read_covariate(str(lines))((0.5, 2.0)) == pytest.approx(2.0)
    grid = tmp_path / "r.csv"
    grid.write_text("x,y,value\n" + "".join(f"{a},{b},{a + 10 * b}\n" for a in (0, 1) for b in (0, 1)))
    assert read_covariate(str(grid))((0.5, 0.5)) == pytest.approx(5.5)


def test_read_covariate_irregular_raster(tmp_path):
    grid = tmp_path / "r.csv"
    grid.write_text("x,y,value\n" + "".join(f"{a},{b},1\n" for a in (0, 1, 3) for b in (0, 1)))
    with pytest.raises(InvalidArgumentError, match="irregular"):
        read_covariate(str(grid))


# ----------------------------------------------------------------------
# pair correlation families


def test_matern_pcf_examples():
    g = MaternPCF(50, 0.05)
    assert 1 + 1 / (50 * math.pi * 0.05 ** 2) == pytest.approx(3.5465, abs=5e-5)
    assert eval_pcf(g, 0.0) == pytest.approx(_matern_closed_form(0.0, 50, 0.05), rel=1e-14)
    assert eval_pcf(g, 0.0) == pytest.approx(3.5465, abs=5e-5)
    assert eval_pcf(g, 0.1) == 1.0
    assert eval_pcf(g, 0.05) == pytest.approx(_matern_closed_form(0.05, 50, 0.05), rel=1e-14)
    assert eval_pcf(g, 0.05) == pytest.approx(1.9957, abs=5e-5)


def test_matern_support_and_monotonicity():
    g = MaternPCF(53.7, 0.078)
    r = np.linspace(0, 2 * 0.078, 4001)
    vals = g(r)
    assert np.all(np.diff(vals) <= 0)
    assert np.max(np.abs(np.diff(vals))) < 1e-2
    far = np.linspace(2 * 0.078, 5, 200)
    assert np.all(g(far) == 1.0)


def test_exp_families():
    assert ExpPlusOnePCF(0.377, 8.69)(0.0) == pytest.approx(1 + 1 / 0.377)
    literal = ExpScaledPCF(8.9502, 0.0266, wrapped=False)
    wrapped = ExpScaledPCF(8.9502, 0.0266)
    assert literal(0.0) == pytest.approx(1 / 8.9502)
    assert wrapped(0.0) == pytest.approx(1 + 1 / 8.9502)
    assert wrapped(1e8) == pytest.approx(1.0, abs=1e-12)
    assert literal(1e8) == pytest.approx(0.0, abs=1e-12)


def test_empirical_pcf_interpolation():
    g = EmpiricalPCF([0.1, 0.2, 0.3], [3.0, 2.0, 1.5])
    assert g(0.15) == pytest.approx(2.5)
    assert g(0.05) == pytest.approx(3.0)
    assert g(0.31) == 1.0


@pytest.mark.parametrize("r, g", [([0.2, 0.1], [1, 1]), ([0.1, 0.2], [1, -1]), ([0.1, 0.2], [1, np.nan])])
def test_empirical_pcf_invalid(r, g):
    with pytest.raises(InvalidModelError):
        EmpiricalPCF(r, g)


def test_poisson_pcf_and_factory():
    assert eval_pcf(PoissonPCF(), 0.3) == 1.0
    m = from_params("matern", alpha1=50, alpha2=0.05)
    assert m == MaternPCF(50.0, 0.05)
    with pytest.raises(InvalidModelError):
        from_params("nope")


def test_pcf_csv_round_trip(tmp_path):
    g = EmpiricalPCF(np.linspace(0.01, 0.2, 30), np.linspace(3, 1, 30))
    write_pcf(g, tmp_path / "g.csv")
    back = read_pcf(str(tmp_path / "g.csv"))
    assert np.array_equal(back.r, g.r) and np.array_equal(back.g, g.g)


# ----------------------------------------------------------------------
# kernel estimate of g


def test_kernel_pcf_poisson_mean_near_one(unit_square):
    pat = simulate_poisson(500.0, unit_square, SeededStream(13))
    est = estimate_pcf_kernel(pat, ConstantIntensity(500.0))
    sel = (est.r >= 0.05) & (est.r <= 0.2)
    assert 0.95 <= est.g[sel].mean() <= 1.05
    assert np.all(np.isfinite(est.g)) and np.all(est.g >= 0)
    assert np.all(est.flagged == (est.r < est.bandwidth / 2))


def test_kernel_pcf_poisson_unbiased_over_replicates(unit_square):
    lam = ConstantIntensity(500.0)
    G = []
    for k in range(500):
        est = estimate_pcf_kernel(simulate_poisson(500.0, unit_square, SeededStream(21, k)), lam)
        G.append(est.g)
    G = np.array(G)
    sel = (est.r >= 2 * est.bandwidth) & (est.r <= 0.25)
    z = (G.mean(0) - 1) / (G.std(0, ddof=1) / np.sqrt(len(G)))
    assert np.all(np.abs(z[sel]) < 3)


def test_kernel_pcf_detects_clustering(w_obs_p1):
    from ppfredholm.study import Scenario

    s = Scenario("p1", 0.09)
    pat = s.simulate(0)
    est = estimate_pcf_kernel(pat, s.intensity)
    assert est(0.01) > est(0.2)


def test_kernel_pcf_translation_correction_on_holed_window(w_obs_p1):
    lam = ConstantIntensity(800.0)
    means = []
    for k in range(40):
        pat = simulate_poisson(800.0, w_obs_p1, SeededStream(31, k))
        est = estimate_pcf_kernel(pat, lam)
        means.append(est.g[(est.r >= 0.05) & (est.r <= 0.2)].mean())
    assert np.mean(means) == pytest.approx(1.0, abs=0.02)


def test_kernel_pcf_errors(unit_square):
    one = PointPattern([[0.5, 0.5]], unit_square)
    with pytest.raises(InvalidArgumentError):
        estimate_pcf_kernel(one, ConstantIntensity(1.0))
    two = PointPattern([[0.5, 0.5], [0.6, 0.5]], unit_square)
    with pytest.raises(InvalidModelError):
        estimate_pcf_kernel(two, ConstantIntensity(0.0))
    est = estimate_pcf_kernel(two, ConstantIntensity(2.0), r_grid=[0.0, 0.05, 0.1])
    assert est.r[0] > 0


# ----------------------------------------------------------------------
# first-order fits


def _uniform_pattern(window, n, seed):
    gen = np.random.default_rng(seed)
    pts = []
    while len(pts) < n:
        p = gen.uniform(0, 1, 2)
        if window.contains(p):
            pts.append(p)
    return PointPattern(pts, window)


def test_piecewise_mle_count_over_area(w_obs_p1, unit_square):
    pat = _uniform_pattern(w_obs_p1, 91, 0)
    fit = fit_intensity_piecewise_mle(pat, [unit_square])
    assert fit.values[0] == pytest.approx(100.0, rel=1e-12)
    empty = PointPattern(np.zeros((0, 2)), w_obs_p1)
    assert fit_intensity_piecewise_mle(empty, half_plane_partition(w_obs_p1)).values == (0.0, 0.0)


def test_piecewise_mle_zero_area_region(w_obs_p1):
    pat = _uniform_pattern(w_obs_p1, 5, 1)
    with pytest.raises(InvalidArgumentError):
        fit_intensity_piecewise_mle(pat, [Window.rectangle(0.4, 0.4, 0.6, 0.6)])


def test_piecewise_mle_recovers_thinned_cluster_levels():
    from ppfredholm.study import Scenario

    s = Scenario("p1", 0.09)
    parts = half_plane_partition(s.W_obs)
    fits = np.array([fit_intensity_piecewise_mle(s.simulate(k), parts).values for k in range(60)])
    got = sorted(fits.mean(0))
    assert got[0] == pytest.approx(400, rel=0.15)
    assert got[1] == pytest.approx(1600, rel=0.15)


@pytest.fixture(scope="module")
def fit_mesh(w_obs_p1):
    return triangulate(w_obs_p1, 0.04)


def test_loglinear_intercept_only(w_obs_p1, fit_mesh):
    pat = _uniform_pattern(w_obs_p1, 91, 2)
    fit = fit_intensity_loglinear(pat, LinearDesign({}), mesh=fit_mesh)
    assert fit.model.coefficients[0] == pytest.approx(math.log(100.0), abs=1e-8)


def test_loglinear_recovery_and_score(w_obs_p1, fit_mesh):
    design = LinearDesign({"x": lambda p: p[:, 0], "d": DistanceField(np.array([[0.2, 0.8]]))})
    beta = np.array([math.log(900.0), 0.8, -1.2])
    truth = LogLinearIntensity(design, beta)
    lam_max = float(np.exp(beta[0] + 0.8))
    hits, n = np.zeros(3), 200
    for k in range(n):
        pat = simulate_poisson(truth, w_obs_p1, SeededStream(41, k), lam_max=lam_max)
        fit = fit_intensity_loglinear(pat, design, mesh=fit_mesh, order=4)
        assert fit.score_norm < 1e-6 * len(pat)
        hits += np.abs(fit.model.coefficients - beta) <= 2 * fit.std_errors
    assert np.all(hits / n >= 0.90)


def test_loglinear_marginal_coverage(w_obs_p1, fit_mesh):
    design = LinearDesign({"x": lambda p: p[:, 0], "y": lambda p: p[:, 1]})
    beta = np.array([math.log(700.0), 0.6, -0.9])
    truth = LogLinearIntensity(design, beta)
    hits = np.zeros(3)
    n = 200
    for k in range(n):
        pat = simulate_poisson(truth, w_obs_p1, SeededStream(43, k), lam_max=700 * math.exp(0.6))
        fit = fit_intensity_loglinear(pat, design, mesh=fit_mesh, order=4)
        hits += np.abs(fit.model.coefficients - beta) <= 2 * fit.std_errors
    assert np.all(hits / n >= 0.90)


def test_loglinear_duplicate_column(w_obs_p1, fit_mesh):
    pat = _uniform_pattern(w_obs_p1, 50, 3)
    f = lambda p: p[:, 0]  # noqa: E731
    design = LinearDesign({"a": f, "b": f})
    with pytest.raises(FitFailure) as info:
        fit_intensity_loglinear(pat, design, mesh=fit_mesh)
    assert set(info.value.columns) >= {"a", "b"}


def test_loglinear_empty_pattern(w_obs_p1, fit_mesh):
    with pytest.raises(FitFailure):
        fit_intensity_loglinear(PointPattern(np.zeros((0, 2)), w_obs_p1), LinearDesign({}), mesh=fit_mesh)


# ----------------------------------------------------------------------
# nonlinear least squares


@pytest.mark.parametrize("model, initial", [
    (MaternPCF(53.7, 0.078), (30.0, 0.05)),
    (ExpPlusOnePCF(0.377, 8.69), (1.0, 4.0)),
    (ExpScaledPCF(0.397, 0.313), (1.0, 0.1)),
    (ExpScaledPCF(8.9502, 0.0266, wrapped=False), (5.0, 0.1)),
])
def test_nls_fixed_point(model, initial):
    r = np.linspace(0.002, 0.3, 150)
    emp = EmpiricalPCF(r, model(r))
    family = model.name
    fit = fit_pcf_nls(emp, family, initial=initial, wrapped=getattr(model, "wrapped", True))
    want = np.array(list(model.params().values())[:2], dtype=float)
    got = np.array(list(fit.params().values())[:2], dtype=float)
    assert np.allclose(got, want, rtol=1e-6)


def test_nls_default_initial_guess():
    r = np.linspace(0.002, 0.3, 150)
    emp = EmpiricalPCF(r, MaternPCF(53.7, 0.078)(r))
    fit = fit_pcf_nls(emp, "matern")
    assert fit.alpha1 == pytest.approx(53.7, rel=1e-6)
    assert fit.alpha2 == pytest.approx(0.078, rel=1e-6)


def test_nls_argument_errors():
    emp = EmpiricalPCF([0.1, 0.2, 0.3], [2.0, 1.5, 1.0])
    with pytest.raises(InvalidArgumentError):
        fit_pcf_nls(emp, "matern")
    emp = EmpiricalPCF(np.linspace(0.01, 0.1, 10), np.ones(10))
    with pytest.raises(InvalidArgumentError):
        fit_pcf_nls(emp, "cauchy")
    with pytest.raises(InvalidArgumentError):
        fit_pcf_nls(emp, "matern", initial=(-1.0, 0.1))


def test_nls_non_convergence_reports_best():
    r = np.linspace(0.01, 0.3, 40)
    emp = EmpiricalPCF(r, MaternPCF(53.7, 0.078)(r))
    with pytest.raises(FitFailure) as info:
        fit_pcf_nls(emp, "exp_plus_one", initial=(1.0, 1.0), max_iter=1)
    assert info.value.best is not None


# ----------------------------------------------------------------------
# admissibility


def _flat(level):
    r = np.linspace(0.01, 0.5, 100)
    return EmpiricalPCF(r, np.where(r > 0.18, level, 2.0))


def test_admissibility_examples():
    assert admissibility_check(_flat(1.0), 0.09, predictions=[10.0, 5999.0]).admissible
    bad = admissibility_check(_flat(1.2), 0.09)
    assert not bad and bad.reasons[0].startswith("(i)")
    assert bad.median_excess == pytest.approx(0.2)
    for p in ([-10130.0, 100.0], [100.0, 13295.0]):
        out = admissibility_check(_flat(1.0), 0.09, predictions=p)
        assert not out and out.reasons[0].startswith("(ii)")


def test_admissibility_needs_values_beyond_2r():
    with pytest.raises(InvalidArgumentError):
        admissibility_check(EmpiricalPCF([0.01, 0.1], [2.0, 1.0]), 0.09)


def test_admissibility_ignores_predictions_when_absent():
    assert admissibility_check(_flat(1.01), 0.09).admissible
