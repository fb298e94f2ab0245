"""Simulation designs: exact reconstruction against the generator's own
factor draws, noise calibration oracles, and stream determinism."""

import numpy as np
import pytest

from rfda import ValidationError
from rfda.simulate import DESIGNS, SimTruth, design_geometry, simulate, snr_calibrate

A_SNR5 = 1.0 / np.sqrt(1500.0)  # analytic half-width at target ratio 5


@pytest.mark.parametrize("design", DESIGNS)
def test_noiseless_observations_reconstruct_factor_draws(design):
    # With zero noise, the tangent coefficients of every observation in
    # the truth's frames must equal T_ij times the subject's factors.
    ds, truth = simulate(design, n=12, m=6, seed=5, noise_halfwidth=0.0)
    geom = ds.geometry
    for i, sub in enumerate(ds.subjects):
        z = truth.factor_scores[i]
        for t, y in zip(sub.times, sub.points):
            frame = truth.mean_frame(t)
            coords = geom.coords(frame, geom.log(frame.base, y))
            if design == "sphere":
                expected = t * z
            elif design == "spd-lc":
                expected = np.array([t * z[2], t * z[0], t * z[1]])
            else:
                expected = np.array([t * z[0], t * z[1], 0.0])
            np.testing.assert_allclose(coords, expected, atol=1e-10)


@pytest.mark.parametrize("design", DESIGNS)
def test_shared_noise_shifts_all_coordinates_equally(design):
    ds, truth = simulate(design, n=8, m=5, seed=9, noise_halfwidth=0.05)
    geom = ds.geometry
    a = truth.noise_halfwidth
    for i, sub in enumerate(ds.subjects):
        z = truth.factor_scores[i]
        for t, y in zip(sub.times, sub.points):
            frame = truth.mean_frame(t)
            coords = geom.coords(frame, geom.log(frame.base, y))
            if design == "sphere":
                resid = coords - t * z
            elif design == "spd-lc":
                resid = coords - np.array([t * z[2], t * z[0], t * z[1]])
            else:
                resid = (coords - np.array([t * z[0], t * z[1], 0.0]))[:2]
            assert np.max(np.abs(resid - resid[0])) < 1e-9
            assert np.max(np.abs(resid)) <= a + 1e-12


def test_independent_noise_variant_differs_per_coordinate():
    ds, truth = simulate("sphere", n=30, m=5, seed=2, noise_halfwidth=0.05,
                         independent_noise=True)
    geom = ds.geometry
    spreads = []
    for i, sub in enumerate(ds.subjects):
        z = truth.factor_scores[i]
        for t, y in zip(sub.times, sub.points):
            frame = truth.mean_frame(t)
            resid = geom.coords(frame, geom.log(frame.base, y)) - t * z
            assert np.max(np.abs(resid)) <= truth.noise_halfwidth + 1e-12
            spreads.append(abs(resid[1] - resid[0]))
    assert np.max(spreads) > 1e-3


def test_observation_counts_and_times():
    ds, _ = simulate("sphere", n=200, m=5, seed=1)
    sizes = ds.sizes()
    assert np.min(sizes) >= 2
    assert abs(np.mean(sizes) - 7.0) < 0.5  # Poisson(5) + 2
    _, times, _ = ds.flat()
    assert np.min(times) >= 0.0 and np.max(times) <= 1.0


def test_subject_streams_do_not_depend_on_n_or_order():
    small, t_small = simulate("spd-lc", n=5, m=4, seed=123)
    large, t_large = simulate("spd-lc", n=11, m=4, seed=123)
    for i in range(5):
        np.testing.assert_array_equal(small.subjects[i].times, large.subjects[i].times)
        np.testing.assert_array_equal(small.subjects[i].points, large.subjects[i].points)
    np.testing.assert_array_equal(t_small.factor_scores, t_large.factor_scores[:5])
    again, _ = simulate("spd-lc", n=5, m=4, seed=123)
    for a, b in zip(small.subjects, again.subjects):
        np.testing.assert_array_equal(a.points, b.points)
    other, _ = simulate("spd-lc", n=5, m=4, seed=124)
    assert not np.array_equal(other.subjects[0].times, small.subjects[0].times)


def test_snr_calibration_matches_analytic_value():
    for design in DESIGNS:
        a = snr_calibrate(design, 5.0)
        assert a == pytest.approx(A_SNR5, rel=0.01)
    a5 = snr_calibrate("sphere", 5.0)
    a10 = snr_calibrate("sphere", 10.0)
    assert (a10 / a5) ** 2 == pytest.approx(0.5, rel=0.02)
    with pytest.raises(ValidationError):
        snr_calibrate("sphere", -1.0)
    with pytest.raises(ValidationError):
        snr_calibrate("torus", 5.0)


def test_default_snr_five_noise_level():
    _, truth = simulate("sphere", n=2, m=3, seed=0)
    assert truth.noise_halfwidth == pytest.approx(0.02582, abs=2e-4)


def test_spd_ai_eigenvectors_are_fixed():
    from rfda.simulate import _R_AI

    ds, _ = simulate("spd-ai", n=6, m=5, seed=3)
    for sub in ds.subjects:
        for y in sub.points:
            off = _R_AI.T @ y @ _R_AI
            assert abs(off[0, 1]) < 1e-12


def test_spd_lc_noiseless_chart_distance_bound():
    ds, truth = simulate("spd-lc", n=10, m=6, seed=7, noise_halfwidth=0.0)
    geom = ds.geometry
    bound = np.sqrt(3.0) * 0.1  # three factors, each at most 0.1 in size
    for sub in ds.subjects:
        d = geom.dist(truth.mean_point(sub.times), sub.points)
        assert np.max(d) <= bound * np.max(sub.times) + 1e-12


@pytest.mark.parametrize("design", DESIGNS)
def test_truth_frames_and_covariance(design):
    _, truth = simulate(design, n=2, m=3, seed=0, noise_halfwidth=0.0)
    geom = truth.geometry
    for t in (0.05, 0.3, 0.8, 1.0):
        frame = truth.mean_frame(t)
        geom.check_frame(frame, tol=1e-9)
        geom.check_point(truth.mean_point(t))
    c = truth.cov_matrix(0.4, 0.9)
    np.testing.assert_allclose(c, c.T)
    assert np.trace(truth.cov_matrix(0.5, 0.5)) == pytest.approx(
        (2 if design != "spd-lc" else 3) * 0.25 / 300.0
    )
    grid = np.linspace(0, 1, 7)
    cg = truth.cov_grid(grid)
    np.testing.assert_allclose(cg[2, 4], truth.cov_matrix(grid[2], grid[4]), atol=1e-15)


def test_mean_is_stationary_for_the_noiseless_law():
    # mean of logarithms at the stated mean curve vanishes within Monte
    # Carlo error, confirming the Frechet-mean property of the designs
    rng = np.random.default_rng(17)
    n = 40000
    for design in DESIGNS:
        truth = SimTruth(design, design_geometry(design), 0.0, np.inf)
        geom = truth.geometry
        t = 0.7
        frame = truth.mean_frame(t)
        z = rng.uniform(-0.1, 0.1, (n, truth.factor_dim))
        coords = np.zeros((n, geom.dim))
        if design == "sphere":
            coords[:, :2] = t * z
        elif design == "spd-lc":
            coords[:, 0] = t * z[:, 2]
            coords[:, 1] = t * z[:, 0]
            coords[:, 2] = t * z[:, 1]
        else:
            coords[:, :2] = t * z
        x = geom.exp(frame.base, geom.from_coords(frame, coords))
        logs = geom.log(frame.base, x)
        grad = np.mean(geom.coords(frame, logs), axis=0)
        se = t * 0.1 / np.sqrt(3.0 * n)
        assert np.max(np.abs(grad)) < 4.0 * se


def test_variance_of_tangent_coordinates_at_half():
    # empirical variances of the tangent coefficients at t = 0.5 match
    # t^2 / 300 within Monte Carlo precision
    rng = np.random.default_rng(29)
    n = 100000
    truth = SimTruth("sphere", design_geometry("sphere"), 0.0, np.inf)
    geom = truth.geometry
    t = 0.5
    frame = truth.mean_frame(t)
    z = rng.uniform(-0.1, 0.1, (n, 2))
    v = geom.from_coords(frame, t * z)
    x = geom.exp(frame.base, v)
    coords = geom.coords(frame, geom.log(frame.base, x))
    target = t**2 / 300.0
    sample_var = np.var(coords, axis=0)
    # variance of z^2 for uniform z gives the Monte Carlo standard error
    se = np.sqrt(np.var(coords**2, axis=0) / n)
    assert np.all(np.abs(sample_var - target) < 3.0 * se)
    cross = np.mean(coords[:, 0] * coords[:, 1])
    assert abs(cross) < 4.0 * target / np.sqrt(n) * 3.0 + 1e-6
