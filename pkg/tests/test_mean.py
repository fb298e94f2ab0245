"""Local-linear mean estimation: weight identities, the Fréchet
minimizer, agreement with a scalar regression oracle, and curve
evaluation."""

import numpy as np
import pytest

from rfda import (
    ConvergenceError,
    Euclidean,
    SingularFitError,
    SparseDataset,
    Sphere,
    Subject,
    ValidationError,
    WindowError,
)
from rfda.mean import (
    KERNELS,
    MeanCurve,
    default_grid,
    eval_mean,
    fit_mean,
    frechet_minimize,
    kernel_function,
    local_weights,
)
from rfda.simulate import simulate


def scalar_local_linear(times, values, lam, t, h):
    """Independent local-linear fit: weighted least squares on the
    design [1, T - t] solved by lstsq, returning the intercept."""
    x = (times - t) / h
    k = np.where(np.abs(x) < 1, 0.75 * (1 - x**2), 0.0)
    w = lam * k / h
    keep = w > 0
    sw = np.sqrt(w[keep])
    design = np.stack([np.ones(keep.sum()), times[keep] - t], axis=1)
    beta, *_ = np.linalg.lstsq(sw[:, None] * design, sw * values[keep], rcond=None)
    return beta[0]


def test_kernel_shapes():
    x = np.linspace(-2, 2, 4001)
    epa = KERNELS["epanechnikov"](x)
    assert epa.max() == pytest.approx(0.75)
    assert np.all(epa[np.abs(x) >= 1] == 0)
    np.testing.assert_allclose(np.trapezoid(epa, x), 1.0, atol=1e-5)
    np.testing.assert_allclose(epa, epa[::-1])
    gau = KERNELS["gauss"](x)
    assert np.all(gau[np.abs(x) >= 1] == 0)
    assert np.all(gau[np.abs(x) < 1] > 0)
    with pytest.raises(ValidationError, match="kernel"):
        kernel_function("box")


@pytest.mark.parametrize("scheme", ["obs", "subject"])
def test_weights_reproduce_constants_and_kill_slope(scheme):
    dataset, _ = simulate("sphere", n=25, m=6, seed=11, weight_scheme=scheme)
    _, times, _ = dataset.flat()
    for t in (0.0, 0.23, 0.5, 1.0):
        for h in (0.15, 0.3):
            lw = local_weights(dataset, t, h)
            comb = lw.combined
            assert abs(comb.sum() - 1.0) < 1e-12
            assert abs(np.sum(comb * (times[lw.indices] - t))) < 1e-12


def test_weight_moments_match_uniform_design_expansion():
    rng = np.random.default_rng(7)
    n, m = 4000, 5
    subs = []
    for i in range(n):
        ts = np.sort(rng.uniform(0, 1, m))
        subs.append(Subject(str(i), ts, ts[:, None] * 0.0))
    dataset = SparseDataset(Euclidean(1), subs)
    ratios = []
    for h in (0.05, 0.1, 0.2):
        lw = local_weights(dataset, 0.5, h)
        assert abs(lw.u0 - 1.0) < 0.1
        assert abs(lw.u2 / (h**2 / 5) - 1.0) < 0.15
        ratios.append(abs(lw.u1) / h**2)
    assert max(ratios) < 1.0


def test_degenerate_windows_raise():
    geom = Sphere(2)
    p = np.array([1.0, 0.0, 0.0])
    subs = [Subject("a", [0.5, 0.5], [p, p]), Subject("b", [0.5], [p])]
    dataset = SparseDataset(geom, subs)
    with pytest.raises(SingularFitError, match="degenerate"):
        local_weights(dataset, 0.5, 0.2)
    with pytest.raises(WindowError, match="window"):
        local_weights(dataset, 0.05, 0.1)
    with pytest.raises(ValidationError, match="bandwidth"):
        local_weights(dataset, 0.5, 0.0)


def test_frechet_midpoint_and_fixed_point():
    geom = Sphere(2)
    p = np.array([1.0, 0.0, 0.0])
    q = np.array([0.0, 1.0, 0.0])
    mid = frechet_minimize(geom, [p, q], [0.5, 0.5], p)
    expected = geom.exp(p, 0.5 * geom.log(p, q))
    np.testing.assert_allclose(mid, expected, atol=1e-9)
    same = frechet_minimize(geom, [q, q, q], [0.2, 0.3, 0.5], p)
    assert geom.dist(same, q) < 1e-9


def test_frechet_euclidean_weighted_average():
    rng = np.random.default_rng(0)
    geom = Euclidean(3)
    pts = rng.standard_normal((8, 3))
    w = rng.uniform(-0.3, 1.0, 8)
    assert w.sum() > 0.2
    got = frechet_minimize(geom, pts, w, pts[0])
    np.testing.assert_allclose(got, w @ pts / w.sum(), atol=1e-12)


def test_frechet_failure_reports_gradient_norm():
    geom = Euclidean(1)
    pts = np.array([[0.0], [1.0]])
    with pytest.raises(ConvergenceError, match="gradient norm"):
        frechet_minimize(geom, pts, [1.0, -0.999], np.array([0.3]))
    with pytest.raises(ValidationError, match="zero"):
        frechet_minimize(geom, pts, [0.0, 0.0], pts[0])


def test_fit_mean_constant_process():
    geom = Sphere(2)
    p = np.array([0.0, 0.6, 0.8])
    rng = np.random.default_rng(5)
    subs = [Subject(str(i), np.sort(rng.uniform(0, 1, 4)), np.tile(p, (4, 1)))
            for i in range(10)]
    dataset = SparseDataset(geom, subs)
    curve = fit_mean(dataset, 0.3, grid=np.linspace(0, 1, 11))
    assert np.max(geom.dist(curve.points, p)) < 1e-9


def test_fit_mean_matches_scalar_regression_oracle():
    rng = np.random.default_rng(21)
    geom = Euclidean(2)
    subs = []
    for i in range(40):
        ts = np.sort(rng.uniform(0, 1, 6))
        vals = np.stack([np.sin(2 * np.pi * ts), ts**2], axis=1)
        vals += 0.1 * rng.standard_normal(vals.shape)
        subs.append(Subject(str(i), ts, vals))
    dataset = SparseDataset(geom, subs)
    grid = np.linspace(0, 1, 11)
    curve = fit_mean(dataset, 0.25, grid=grid)
    subj, times, pts = dataset.flat()
    lam = dataset.mean_weights()[subj]
    for g, t in enumerate(grid):
        for c in range(2):
            want = scalar_local_linear(times, pts[:, c], lam, t, 0.25)
            assert abs(curve.points[g, c] - want) < 1e-8


def test_fit_mean_error_shrinks_when_n_doubles():
    grid = np.linspace(0, 1, 21)
    sup = {400: [], 800: []}
    for n in sup:
        for rep in range(10):
            dataset, truth = simulate("sphere", n=n, m=20, seed=100 + rep)
            curve = fit_mean(dataset, 0.1, grid=grid)
            err = dataset.geometry.dist(curve.points, truth.mean_point(grid))
            sup[n].append(float(err.max()))
    assert np.mean(sup[800]) < np.mean(sup[400])


def test_fit_mean_rotation_equivariance():
    dataset, _ = simulate("sphere", n=30, m=5, seed=2)
    rot = random_orthogonal_3()
    rotated = SparseDataset(
        dataset.geometry,
        [Subject(s.id, s.times, s.points @ rot.T) for s in dataset.subjects],
        dataset.domain,
    )
    grid = np.linspace(0, 1, 13)
    base = fit_mean(dataset, 0.25, grid=grid)
    moved = fit_mean(rotated, 0.25, grid=grid)
    np.testing.assert_allclose(moved.points, base.points @ rot.T, atol=1e-8)


def random_orthogonal_3():
    from rfda import random_orthogonal

    return random_orthogonal(np.random.default_rng(40), 3)


def test_fit_mean_weight_schemes_agree_for_equal_counts():
    raw, _ = simulate("sphere", n=12, m=6, seed=3)
    m_min = int(raw.sizes().min())
    rng = np.random.default_rng(0)
    subs = []
    for s in raw.subjects:
        keep = np.sort(rng.choice(s.size, m_min, replace=False))
        subs.append(Subject(s.id, s.times[keep], s.points[keep]))
    grid = np.linspace(0, 1, 9)
    fits = {}
    for scheme in ("obs", "subject"):
        ds = SparseDataset(raw.geometry, subs, raw.domain, scheme)
        fits[scheme] = fit_mean(ds, 0.3, grid=grid).points
    np.testing.assert_allclose(fits["obs"], fits["subject"], atol=1e-10)


def test_fit_mean_annotates_window_failures():
    geom = Euclidean(1)
    rng = np.random.default_rng(1)
    subs = [Subject(str(i), np.sort(rng.uniform(0.4, 0.6, 3)),
                    rng.standard_normal((3, 1))) for i in range(5)]
    dataset = SparseDataset(geom, subs)
    with pytest.raises(WindowError, match="grid point t="):
        fit_mean(dataset, 0.05, grid=np.linspace(0, 1, 6))


def fitted_sphere_curve():
    dataset, _ = simulate("sphere", n=40, m=6, seed=9)
    return fit_mean(dataset, 0.2, grid=np.linspace(0, 1, 11))


def test_eval_mean_exact_at_grid_points():
    curve = fitted_sphere_curve()
    for g in (0, 4, 10):
        point, frame = eval_mean(curve, curve.grid[g])
        np.testing.assert_array_equal(point, curve.points[g])
        np.testing.assert_array_equal(frame.vectors, curve.frames[g].vectors)


def test_eval_mean_midpoint_is_equidistant():
    curve = fitted_sphere_curve()
    geom = curve.geometry
    t = 0.5 * (curve.grid[3] + curve.grid[4])
    point, frame = eval_mean(curve, t)
    d_left = geom.dist(point, curve.points[3])
    d_right = geom.dist(point, curve.points[4])
    assert abs(d_left - d_right) < 1e-9
    geom.check_frame(frame)


def test_eval_mean_euclidean_linear_interpolation():
    rng = np.random.default_rng(3)
    geom = Euclidean(2)
    subs = [Subject(str(i), np.sort(rng.uniform(0, 1, 5)),
                    rng.standard_normal((5, 2))) for i in range(20)]
    curve = fit_mean(SparseDataset(geom, subs), 0.35, grid=np.linspace(0, 1, 6))
    t = 0.37
    g = 1
    alpha = (t - curve.grid[g]) / (curve.grid[g + 1] - curve.grid[g])
    want = (1 - alpha) * curve.points[g] + alpha * curve.points[g + 1]
    point, _ = eval_mean(curve, t)
    np.testing.assert_allclose(point, want, atol=1e-12)


def test_eval_mean_batched_matches_scalar():
    curve = fitted_sphere_curve()
    ts = np.array([0.0, 0.123, 0.5, 0.777, 1.0])
    pts, vecs = curve.evaluate(ts)
    for i, t in enumerate(ts):
        point, frame = eval_mean(curve, t)
        np.testing.assert_array_equal(pts[i], point)
        np.testing.assert_array_equal(vecs[i], frame.vectors)
    with pytest.raises(ValidationError, match="range"):
        eval_mean(curve, 1.2)


def test_mean_curve_json_roundtrip(tmp_path):
    curve = fitted_sphere_curve()
    path = tmp_path / "mean.json"
    curve.save(path)
    back = MeanCurve.load(path)
    assert back.geometry == curve.geometry
    assert back.bandwidth == curve.bandwidth
    np.testing.assert_array_equal(back.grid, curve.grid)
    np.testing.assert_array_equal(back.points, curve.points)
    for f1, f2 in zip(back.frames, curve.frames):
        np.testing.assert_array_equal(f1.vectors, f2.vectors)
    np.testing.assert_array_equal(back.iterations, curve.iterations)


def test_frame_field_stays_orthonormal_under_transport():
    for design in ("sphere", "spd-lc", "spd-ai"):
        dataset, _ = simulate(design, n=25, m=6, seed=13)
        curve = fit_mean(dataset, 0.25, grid=np.linspace(0, 1, 15))
        for frame in curve.frames:
            curve.geometry.check_frame(frame)


def test_fitted_points_satisfy_first_order_condition():
    for seed in range(5):
        dataset, _ = simulate(["sphere", "spd-lc", "spd-ai"][seed % 3],
                              n=20, m=5, seed=seed)
        geom = dataset.geometry
        grid = np.linspace(0.1, 0.9, 5)
        curve = fit_mean(dataset, 0.3, grid=grid)
        _, _, pts = dataset.flat()
        for g, t in enumerate(grid):
            lw = local_weights(dataset, t, 0.3)
            logs = geom.log(curve.points[g], pts[lw.indices])
            grad = np.tensordot(lw.combined, logs, axes=(0, 0))
            total = np.sum(np.abs(lw.combined))
            assert geom.norm(curve.points[g], grad) <= 1e-10 * total


def test_default_grid_spans_domain():
    grid = default_grid((0.0, 1.0))
    assert len(grid) == 51
    assert grid[0] == 0.0 and grid[-1] == 1.0
