import numpy as np
import pytest
from scipy.spatial import cKDTree

from ppfredholm.errors import InvalidArgumentError, InvalidModelError, ModelInconsistencyError
from ppfredholm.geometry import Window
from ppfredholm.moments import PiecewiseIntensity, StepThinning, half_plane_partition
from ppfredholm.pointprocess import (
    PointPattern,
    SeededStream,
    read_pattern,
    restrict,
    simulate_matern_cluster,
    simulate_poisson,
    simulate_thinned_cluster,
    thin,
    write_pattern,
)


def test_pattern_rejects_duplicates(unit_square):
    with pytest.raises(InvalidArgumentError, match="duplicate"):
        PointPattern([[0.2, 0.2], [0.2, 0.2]], unit_square)


def test_pattern_rejects_outside_points(unit_square):
    with pytest.raises(InvalidArgumentError, match="outside"):
        PointPattern([[1.2, 0.2]], unit_square)


def test_pattern_immutable(unit_square):
    pat = PointPattern([[0.2, 0.2]], unit_square)
    with pytest.raises(AttributeError):
        pat.window = None
    with pytest.raises(ValueError):
        pat.points[0, 0] = 0.5


def test_seeded_stream_determinism(unit_square):
    a = simulate_matern_cluster(50, 40, 0.05, unit_square, SeededStream(11, 3))
    b = simulate_matern_cluster(50, 40, 0.05, unit_square, SeededStream(11, 3))
    c = simulate_matern_cluster(50, 40, 0.05, unit_square, SeededStream(11, 4))
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_poisson_zero_intensity(unit_square):
    assert len(simulate_poisson(0.0, unit_square, SeededStream(0))) == 0
    zero = PiecewiseIntensity(half_plane_partition(unit_square), (0.0, 0.0))
    assert len(simulate_poisson(zero, unit_square, SeededStream(0), lam_max=0.0)) == 0


def test_poisson_mean_count(unit_square):
    counts = np.array([len(simulate_poisson(100.0, unit_square, SeededStream(1, k)))
                       for k in range(10_000)])
    assert 98 <= counts.mean() <= 102
    # variance equals the mean for a Poisson count
    assert counts.var() == pytest.approx(100, rel=0.05)


def test_poisson_piecewise_mean_counts(unit_square):
    left, right = half_plane_partition(unit_square)
    lam = PiecewiseIntensity((left, right), (1600.0, 400.0))
    n = 400
    counts = np.zeros((n, 2))
    for k in range(n):
        pts = simulate_poisson(lam, unit_square, SeededStream(2, k)).points
        counts[k] = (pts[:, 0] <= 0.5).sum(), (pts[:, 0] > 0.5).sum()
    m = counts.mean(0)
    assert m[0] == pytest.approx(800, rel=0.03)
    assert m[1] == pytest.approx(200, rel=0.03)


def test_poisson_bound_violation(unit_square):
    lam = PiecewiseIntensity(half_plane_partition(unit_square), (100.0, 10.0))
    with pytest.raises(ModelInconsistencyError):
        simulate_poisson(lam, unit_square, SeededStream(0), lam_max=50.0)
    with pytest.raises(InvalidModelError):
        simulate_poisson(lam, unit_square, SeededStream(0), lam_max=np.inf)


def test_matern_zero_offspring(unit_square):
    assert len(simulate_matern_cluster(50, 0, 0.05, unit_square, SeededStream(0))) == 0


def test_matern_invalid_parameters(unit_square):
    with pytest.raises(InvalidModelError):
        simulate_matern_cluster(50, 40, 0.0, unit_square)
    with pytest.raises(InvalidModelError):
        simulate_matern_cluster(-1, 40, 0.05, unit_square)


@pytest.fixture(scope="module")
def matern_replicates(unit_square):
    return [simulate_matern_cluster(50, 40, 0.05, unit_square, SeededStream(5, k)).points
            for k in range(1000)]


def test_matern_mean_count(matern_replicates):
    counts = np.array([len(p) for p in matern_replicates])
    assert counts.mean() == pytest.approx(2000, rel=0.03)
    se = counts.std(ddof=1) / np.sqrt(len(counts))
    assert abs(counts.mean() - 2000) < 5 * se


def test_matern_edge_rate_matches_interior(matern_replicates):
    R = 0.05
    edge = interior = 0
    for p in matern_replicates:
        near = np.min(np.column_stack([p, 1 - p]), axis=1) < R
        edge += near.sum()
        interior += (~near).sum()
    n = len(matern_replicates)
    edge_area = 1 - (1 - 2 * R) ** 2
    rate_edge = edge / n / edge_area
    rate_interior = interior / n / (1 - edge_area)
    # without parents in the dilated box the edge rate would drop by about 20%
    assert rate_edge == pytest.approx(rate_interior, rel=0.03)


def test_thin_identity_and_empty(unit_square):
    pat = simulate_matern_cluster(50, 40, 0.05, unit_square, SeededStream(0))
    assert np.array_equal(thin(1.0, pat, SeededStream(1)).points, pat.points)
    assert len(thin(0.0, pat, SeededStream(1))) == 0


def test_thin_invalid_probability(unit_square):
    pat = PointPattern([[0.2, 0.2]], unit_square)
    with pytest.raises(InvalidModelError):
        thin(1.5, pat)
    with pytest.raises(InvalidModelError):
        thin(lambda x: -np.ones(len(x)), pat)


def test_thinned_cluster_mean_count(unit_square):
    p1 = StepThinning(0.8, 0.2, 0.5)
    counts = np.array([len(simulate_thinned_cluster(50, 40, 0.05, p1, unit_square, SeededStream(6, k)))
                       for k in range(1000)])
    assert counts.mean() == pytest.approx(1000, rel=0.03)


def test_thinning_commutes_with_restriction(unit_square, w_obs_p1):
    p1 = StepThinning(0.8, 0.2, 0.5)
    n = 400
    a, b = np.zeros(n), np.zeros(n)
    close_a, close_b = np.zeros(n), np.zeros(n)
    for k in range(n):
        base = simulate_matern_cluster(50, 40, 0.05, unit_square, SeededStream(7, k))
        x = restrict(thin(p1, base, SeededStream(8, k)), w_obs_p1).points
        y = thin(p1, restrict(base, w_obs_p1), SeededStream(9, k)).points
        a[k], b[k] = len(x), len(y)
        # pairs closer than 0.02, a crude K-statistic
        for arr, pts in ((close_a, x), (close_b, y)):
            arr[k] = len(cKDTree(pts).query_pairs(0.02))
    se = np.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
    assert abs(a.mean() - b.mean()) < 5 * se
    se = np.sqrt(close_a.var(ddof=1) / n + close_b.var(ddof=1) / n)
    assert abs(close_a.mean() - close_b.mean()) < 5 * se


def test_restrict_identity(unit_square):
    pat = simulate_poisson(50.0, unit_square, SeededStream(0))
    assert np.array_equal(restrict(pat, unit_square).points, pat.points)


def test_restrict_point_in_hole(unit_square, w_obs_p1):
    pat = PointPattern([[0.5, 0.5]], unit_square)
    out = restrict(pat, w_obs_p1)
    assert len(out) == 0 and out.window == w_obs_p1


def test_restrict_errors(unit_square):
    pat = PointPattern([[0.5, 0.5]], unit_square)
    with pytest.raises(InvalidArgumentError):
        restrict(pat, Window.rectangle(0.5, 0.5, 1.5, 1.5))
    with pytest.raises(Exception):
        restrict(pat, Window([[0, 0], [1, 0], [2, 0]]))


def test_pattern_csv_round_trip(tmp_path, w_obs_p1):
    pat = simulate_poisson(200.0, w_obs_p1, SeededStream(4))
    path = tmp_path / "p.csv"
    write_pattern(pat, path)
    back = read_pattern(path, w_obs_p1)
    assert np.array_equal(back.points, pat.points)


def test_read_pattern_outside_point(tmp_path, w_obs_p1):
    path = tmp_path / "p.csv"
    path.write_text("x,y\n0.1,0.1\n0.5,0.5\n")
    with pytest.raises(InvalidArgumentError, match="outside"):
        read_pattern(path, w_obs_p1)
    assert len(read_pattern(path, w_obs_p1, clip=True)) == 1
