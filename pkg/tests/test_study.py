import csv
import json
import math

import numpy as np
import pytest

from ppfredholm.errors import InvalidArgumentError, NumericError, StudyError
from ppfredholm.study import (
    Scenario,
    SensitivityConfig,
    bootstrap,
    distance_profile,
    median_rrmse,
    metric_field,
    relative_bias,
    rrmse,
    run_goodness_study,
    run_sensitivity_study,
    total_variation,
    write_report,
)

SMALL = dict(target_edge=0.05, grid=(7, 7), oracle_h=0.005)


@pytest.fixture(scope="module")
def small_goodness():
    return run_goodness_study(Scenario("p1", 0.09, n=6, **SMALL))


# ---------------------------------------------------------------- metrics


def test_metrics_zero_when_equal():
    x = np.random.default_rng(0).uniform(1, 5, (10, 4))
    assert np.all(relative_bias(x, x) == 0)
    assert np.all(rrmse(x, x) == 0)


def test_metrics_scaled_prediction():
    x = np.random.default_rng(1).uniform(1, 5, (10, 4))
    np.testing.assert_allclose(relative_bias(1.1 * x, x), 0.1, rtol=1e-12)
    np.testing.assert_allclose(rrmse(1.1 * x, x), 0.1 * np.sqrt((x**2).mean(0)) / x.mean(0), rtol=1e-12)


def test_metrics_worked_example():
    pred = np.array([[3.0], [5.0]])
    orc = np.array([[4.0], [4.0]])
    assert relative_bias(pred, orc)[0] == 0.0
    assert rrmse(pred, orc)[0] == pytest.approx(0.25)


def test_metrics_constant_offset():
    orc = np.random.default_rng(2).uniform(1, 3, (50, 3))
    np.testing.assert_allclose(relative_bias(orc + 0.2, orc), 0.2 / orc.mean(0), rtol=1e-12)
    np.testing.assert_allclose(rrmse(orc + 0.2, orc), 0.2 / orc.mean(0), rtol=1e-12)


def test_zero_denominator_is_excluded():
    orc = np.array([[0.0, 1.0, 0.0], [0.0, 2.0, 0.0]])
    pred = orc + 1
    mf = metric_field(pred, orc, np.zeros((3, 2)), np.zeros(3))
    assert np.isnan(mf.rb[0]) and np.isnan(mf.rrmse[2])
    assert mf.excluded == 2
    assert mf.summary()["median_rb"] == pytest.approx(2 / 3)


def test_metrics_permutation_invariant():
    gen = np.random.default_rng(3)
    orc = gen.uniform(1, 3, (40, 5))
    pred = orc + gen.normal(0, 0.3, orc.shape)
    perm = gen.permutation(40)
    np.testing.assert_allclose(relative_bias(pred[perm], orc[perm]), relative_bias(pred, orc), rtol=1e-12)
    np.testing.assert_allclose(rrmse(pred[perm], orc[perm]), rrmse(pred, orc), rtol=1e-12)


def test_metrics_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        rrmse(np.ones((2, 3)), np.ones((3, 2)))


# ---------------------------------------------------------------- profiles and summaries


def test_distance_profile_constant_metric():
    d = np.linspace(0, 1, 101)
    rows = distance_profile(d, np.full(101, 0.3), bins=5)
    assert len(rows) == 5
    assert sum(r["n"] for r in rows) == 101
    for r in rows:
        assert r["mean"] == pytest.approx(0.3) and r["q05"] == pytest.approx(0.3)


def test_distance_profile_identity_metric_increases():
    d = np.random.default_rng(4).uniform(0, 2, 500)
    means = [r["mean"] for r in distance_profile(d, d, bins=8)]
    assert np.all(np.diff(means) > 0)
    rows = distance_profile(d, d, bins=8)
    for r in rows:
        assert r["lo"] <= r["mean"] <= r["hi"]


def test_distance_profile_empty_bins():
    rows = distance_profile([0.0, 0.1, 0.95], [1.0, 2.0, 3.0], bins=10, max_distance=1.0)
    assert rows[5]["n"] == 0 and math.isnan(rows[5]["median"])
    assert rows[9]["n"] == 1 and rows[9]["median"] == 3.0


def test_bootstrap_deterministic_and_centred():
    x = np.random.default_rng(5).normal(2.0, 1.0, 200)
    a = bootstrap(np.mean, x, resamples=300, seed=7)
    b = bootstrap(np.mean, x, resamples=300, seed=7)
    assert np.array_equal(a, b)
    assert abs(a.mean() - x.mean()) < 0.03
    # standard error of the mean
    assert a.std() == pytest.approx(x.std() / np.sqrt(200), rel=0.2)


def test_bootstrap_tuple_resamples_rows_jointly():
    orc = np.random.default_rng(6).uniform(1, 2, (30, 4))
    out = bootstrap(median_rrmse, (orc, orc), resamples=50, seed=0)
    assert np.all(out == 0)


def test_total_variation():
    assert total_variation(np.ones((5, 5))) == 0
    ramp = np.tile(np.arange(4.0), (3, 1))
    assert total_variation(ramp) == pytest.approx(9.0)


# ---------------------------------------------------------------- goodness study


def test_goodness_forced_oracle_gives_zero_metrics():
    s = Scenario("p1", 0.09, n=1, **SMALL)
    r = run_goodness_study(s, prediction_hook=lambda pred, orc: orc)
    mf = r.metrics["theo"]
    ok = ~np.isnan(mf.rb)
    assert ok.any()
    assert np.all(mf.rb[ok] == 0) and np.all(mf.rrmse[ok] == 0)


def test_goodness_outputs(small_goodness):
    r = small_goodness
    n_t = 49
    assert r.predictions["theo"].shape == (6, n_t)
    assert r.oracles.shape == (6, n_t)
    assert r.summary["replicates"] == 6 and r.summary["failures"] == 0
    assert r.negatives.shape == (6,)
    assert np.all(r.distance >= 0)
    # the oracle is nonnegative everywhere
    assert np.all(r.oracles >= 0)


def test_goodness_deterministic(small_goodness, tmp_path):
    again = run_goodness_study(Scenario("p1", 0.09, n=6, **SMALL))
    assert np.array_equal(again.predictions["theo"], small_goodness.predictions["theo"])
    assert np.array_equal(again.oracles, small_goodness.oracles)
    write_report(small_goodness, tmp_path / "a", replicates=True)
    write_report(again, tmp_path / "b", replicates=True)
    for name in ("config.json", "metrics.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_goodness_aborts_on_failures():
    def hook(pred, orc):
        raise NumericError("forced")

    with pytest.raises(StudyError) as info:
        run_goodness_study(Scenario("p1", 0.09, n=10, **SMALL), prediction_hook=hook)
    assert info.value.result is not None


def test_goodness_tolerates_rare_failures():
    calls = []

    def hook(pred, orc):
        calls.append(1)
        if len(calls) == 3:
            raise NumericError("forced")
        return pred

    r = run_goodness_study(Scenario("p1", 0.09, n=25, **SMALL), prediction_hook=hook)
    assert r.summary["replicates"] == 24
    assert [f[0] for f in r.failures] == [2]


def test_oracle_smoother_than_prediction(small_goodness):
    r = small_goodness
    shape = r.scenario.grid
    tv_pred = [total_variation(p.reshape(shape)) for p in r.predictions["theo"]]
    tv_orc = [total_variation(o.reshape(shape)) for o in r.oracles]
    assert np.median(tv_orc) < np.median(tv_pred)


def test_profile_helper(small_goodness):
    rows = small_goodness.profile("theo", "abs_rb", bins=4)
    assert len(rows) == 4 and sum(r["n"] for r in rows) == 49


def test_scenario_overrides_listed():
    assert Scenario("p1", 0.09).overrides == []
    s = Scenario("p2", 0.07, kappa=30, grid=(3, 3))
    assert len(s.overrides) == 3
    assert s.label == "IMCP(p2,0.07)"
    with pytest.raises(InvalidArgumentError):
        Scenario("p3", 0.09)
    with pytest.raises(InvalidArgumentError):
        Scenario("p1", -0.1)


def test_report_layout(small_goodness, tmp_path):
    write_report(small_goodness, tmp_path, replicates=True, extra={"note": "x"})
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["scenario"]["n"] == 6 and cfg["kind"] == "goodness" and cfg["note"] == "x"
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "distance", "rb_theo", "rrmse_theo"]
    assert len(rows) == 50
    summary = dict(csv.reader(open(tmp_path / "summary.csv")))
    assert "runtime_seconds" not in summary and summary["replicates"] == "6"
    assert "runtime_seconds" in json.loads((tmp_path / "timing.json").read_text())
    grids = np.load(tmp_path / "replicates" / "grids.npz")
    assert grids["pred_theo"].shape == (6, 49)


# ---------------------------------------------------------------- sensitivity study


@pytest.fixture(scope="module")
def small_sensitivity():
    s = Scenario("p1", 0.09, **SMALL)
    return run_sensitivity_study(s, SensitivityConfig(n_admissible=2, target_edge=0.05))


def test_sensitivity_self_comparison_is_zero(small_sensitivity):
    mf = small_sensitivity.reference_metrics["theo"]
    ok = ~np.isnan(mf.rb)
    assert np.all(mf.rb[ok] == 0) and np.all(mf.rrmse[ok] == 0)


def test_sensitivity_schema(small_sensitivity, tmp_path):
    r = small_sensitivity
    assert set(r.predictions) == {"theo", "mat", "exp", "emp"}
    assert r.summary["admissible"] == 2
    assert r.summary["attempts"] >= 2
    assert len(r.parameters) == 2
    write_report(r, tmp_path)
    head = (tmp_path / "metrics.csv").read_text().splitlines()[0].split(",")
    for arm in ("theo", "mat", "exp", "emp"):
        assert f"rb_{arm}" in head and f"rrmse_{arm}_vs_theo" in head
    assert (tmp_path / "parameters.csv").exists()
