"""Geometry unit tests: frozen closed-form values, metric properties on
random draws, and agreement of batched operations with scalar loops."""

import numpy as np
import pytest

from rfda import (
    Euclidean,
    GuardError,
    SPDAffineInvariant,
    SPDLogCholesky,
    Sphere,
    ValidationError,
    geometry_from_descriptor,
    random_orthogonal,
    rotate_frame,
)

GEOMS = [
    Euclidean(1),
    Euclidean(3),
    Sphere(2),
    Sphere(4),
    SPDLogCholesky(2),
    SPDLogCholesky(3),
    SPDAffineInvariant(2),
    SPDAffineInvariant(3),
]

IDS = [g.descriptor() for g in GEOMS]


def bounded_tangent(geom, rng, p, n, cap=2.5):
    """Random tangents with norms kept inside the sphere's guard."""
    v = geom.random_tangent(rng, p, n=n)
    norms = np.maximum(geom.norm(p, v), 1e-12)
    scale = np.minimum(1.0, cap / norms)
    if n is None:
        return v * scale
    return v * scale.reshape((-1,) + (1,) * len(geom.ambient_shape))


# ----------------------------------------------------------------------
# frozen closed-form values
# ----------------------------------------------------------------------


def test_sphere_exp_quarter_turn():
    geom = Sphere(2)
    p = np.array([0.0, 0.0, 1.0])
    v = np.array([np.pi / 2, 0.0, 0.0])
    np.testing.assert_allclose(geom.exp(p, v), [1.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(geom.log(p, np.array([1.0, 0.0, 0.0])), v, atol=1e-12)
    assert geom.dist(p, np.array([1.0, 0.0, 0.0])) == pytest.approx(np.pi / 2, abs=1e-12)


def test_affine_invariant_inner_frozen():
    # tr(P^-1 U P^-1 V) with P = diag(4, 1) and U = V = diag(1, 0) is 1/16.
    geom = SPDAffineInvariant(2)
    p = np.diag([4.0, 1.0])
    u = np.diag([1.0, 0.0])
    assert geom.inner(p, u, u) == pytest.approx(0.0625, abs=1e-15)


def test_affine_invariant_dist_frozen():
    geom = SPDAffineInvariant(2)
    p = np.eye(2)
    q = np.e * np.eye(2)
    assert geom.dist(p, q) == pytest.approx(np.sqrt(2.0), abs=1e-12)


def test_log_cholesky_chart_frozen():
    geom = SPDLogCholesky(2)
    np.testing.assert_allclose(
        geom.chart(np.diag([4.0, 9.0])), [0.0, np.log(2.0), np.log(3.0)], atol=1e-14
    )
    l1 = np.array([[1.0, 0.0], [2.0, 3.0]])
    l2 = np.array([[2.0, 0.0], [1.0, 1.0]])
    d = geom.dist(l1 @ l1.T, l2 @ l2.T)
    expected = np.sqrt(1.0 + np.log(2.0) ** 2 + np.log(3.0) ** 2)
    assert d == pytest.approx(expected, abs=1e-12)


def test_euclidean_ops_are_linear():
    geom = Euclidean(3)
    p = np.array([1.0, 2.0, 3.0])
    q = np.array([0.0, -1.0, 5.0])
    np.testing.assert_allclose(geom.log(p, q), q - p)
    np.testing.assert_allclose(geom.exp(p, q - p), q)
    assert geom.dist(p, q) == pytest.approx(np.linalg.norm(q - p))
    assert geom.inner(p, q, q) == pytest.approx(q @ q)


# ----------------------------------------------------------------------
# metric properties on random draws
# ----------------------------------------------------------------------


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_round_trips(geom):
    rng = np.random.default_rng(11)
    n = 300
    p = geom.random_point(rng, n)
    q = geom.random_point(rng, n)
    back = geom.exp(p, geom.log(p, q))
    assert np.max(geom.dist(back, q)) < 1e-8

    v = bounded_tangent(geom, rng, geom.random_point(rng), n)
    base = geom.random_point(rng)
    w = geom.log(base, geom.exp(base, geom.project_tangent(base, v)))
    err = geom.norm(base, w - geom.project_tangent(base, v))
    assert np.max(err) < 1e-8


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_transport_isometry(geom):
    rng = np.random.default_rng(7)
    n = 300
    p = geom.random_point(rng, n)
    q = geom.random_point(rng, n)
    u = geom.project_tangent(p, geom.random_tangent(rng, geom.random_point(rng), n=n))
    v = geom.project_tangent(p, geom.random_tangent(rng, geom.random_point(rng), n=n))
    tu = geom.transport(p, q, u)
    tv = geom.transport(p, q, v)
    before = geom.inner(p, u, v)
    after = geom.inner(q, tu, tv)
    assert np.max(np.abs(after - before)) < 1e-9


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_midpoint_halves_distance(geom):
    rng = np.random.default_rng(3)
    n = 300
    p = geom.random_point(rng, n)
    q = geom.random_point(rng, n)
    mid = geom.exp(p, 0.5 * geom.log(p, q))
    err = np.abs(geom.dist(p, mid) - 0.5 * geom.dist(p, q))
    assert np.max(err) < 1e-9


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_dist_symmetry_and_triangle(geom):
    rng = np.random.default_rng(5)
    n = 200
    p = geom.random_point(rng, n)
    q = geom.random_point(rng, n)
    r = geom.random_point(rng, n)
    assert np.max(np.abs(geom.dist(p, q) - geom.dist(q, p))) < 1e-10
    slack = geom.dist(p, q) + geom.dist(q, r) - geom.dist(p, r)
    assert np.min(slack) > -1e-10


def test_log_cholesky_transport_is_path_independent():
    geom = SPDLogCholesky(3)
    rng = np.random.default_rng(19)
    for _ in range(50):
        p, q, r = (geom.random_point(rng) for _ in range(3))
        v = geom.random_tangent(rng, p)
        direct = geom.transport(p, r, v)
        via_q = geom.transport(q, r, geom.transport(p, q, v))
        assert np.max(np.abs(direct - via_q)) < 1e-10


def spherical_triangle_area(a, b, c):
    """Solid angle of the triangle (a, b, c) on the unit 2-sphere."""
    num = np.abs(a @ np.cross(b, c))
    den = 1.0 + a @ b + b @ c + c @ a
    return 2.0 * np.arctan2(num, den)


def test_sphere_holonomy_matches_triangle_area():
    # Transporting around a geodesic triangle rotates tangents by the
    # enclosed area, the Gauss-Bonnet defect on a unit sphere.
    geom = Sphere(2)
    rng = np.random.default_rng(23)
    for _ in range(50):
        center = geom.random_point(rng)
        pts = []
        for _ in range(3):
            u = geom.random_tangent(rng, center)
            u *= 0.4 * rng.uniform(0.2, 1.0) / np.linalg.norm(u)
            pts.append(geom.exp(center, u))
        a, b, c = pts
        v = geom.random_tangent(rng, a)
        v /= np.linalg.norm(v)
        moved = geom.transport(c, a, geom.transport(b, c, geom.transport(a, b, v)))
        cosang = np.clip(v @ moved, -1.0, 1.0)
        perp = np.cross(a, v)
        sinang = np.clip(perp @ moved, -1.0, 1.0)
        angle = np.abs(np.arctan2(sinang, cosang))
        area = spherical_triangle_area(a, b, c)
        assert angle == pytest.approx(area, abs=1e-6)


# ----------------------------------------------------------------------
# frames
# ----------------------------------------------------------------------


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_onb_orthonormal_and_coords_roundtrip(geom):
    rng = np.random.default_rng(31)
    for _ in range(20):
        p = geom.random_point(rng)
        frame = geom.onb(p)
        geom.check_frame(frame, tol=1e-9)
        v = geom.random_tangent(rng, p)
        x = geom.coords(frame, v)
        assert x.shape == (geom.dim,)
        np.testing.assert_allclose(geom.from_coords(frame, x), v, atol=1e-9)
        # coordinates of the frame vectors themselves are unit basis vectors
        xk = geom.coords(frame, frame.vectors)
        np.testing.assert_allclose(xk, np.eye(geom.dim), atol=1e-9)


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_batched_frame_coords_match_per_point_coords(geom):
    rng = np.random.default_rng(33)
    ps = geom.random_point(rng, 7)
    vecs = np.stack([geom.onb(p).vectors for p in ps])
    vs = np.stack([geom.random_tangent(rng, p) for p in ps])
    z = geom.frame_coords(ps, vecs, vs)
    for i, p in enumerate(ps):
        ref = geom.coords(geom.onb(p), vs[i])
        np.testing.assert_allclose(z[i], ref, atol=1e-12)
    np.testing.assert_allclose(geom.frame_expand(vecs, z), vs, atol=1e-12)


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_onb_with_reference_transports_frame(geom):
    rng = np.random.default_rng(37)
    p = geom.random_point(rng)
    q = geom.random_point(rng)
    frame_p = geom.onb(p)
    frame_q = geom.onb(q, reference=frame_p)
    np.testing.assert_allclose(frame_q.base, q)
    geom.check_frame(frame_q, tol=1e-9)
    # coordinates are preserved under simultaneous transport
    v = geom.random_tangent(rng, p)
    x = geom.coords(frame_p, v)
    y = geom.coords(frame_q, geom.transport(p, q, v))
    np.testing.assert_allclose(x, y, atol=1e-9)


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_rotate_frame_stays_orthonormal(geom):
    rng = np.random.default_rng(41)
    p = geom.random_point(rng)
    frame = geom.onb(p)
    o = random_orthogonal(rng, geom.dim)
    rotated = rotate_frame(frame, o)
    geom.check_frame(rotated, tol=1e-9)
    v = geom.random_tangent(rng, p)
    np.testing.assert_allclose(
        geom.coords(rotated, v), o @ geom.coords(frame, v), atol=1e-9
    )


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_project_tangent_is_idempotent(geom):
    rng = np.random.default_rng(43)
    p = geom.random_point(rng)
    v = rng.standard_normal(geom.ambient_shape)
    once = geom.project_tangent(p, v)
    twice = geom.project_tangent(p, once)
    np.testing.assert_allclose(once, twice, atol=1e-12)


# ----------------------------------------------------------------------
# batched operations agree with scalar loops
# ----------------------------------------------------------------------


@pytest.mark.parametrize("geom", GEOMS, ids=IDS)
def test_batched_matches_loop(geom):
    rng = np.random.default_rng(47)
    n = 16
    p = geom.random_point(rng, n)
    q = geom.random_point(rng, n)
    v = geom.project_tangent(p, geom.random_tangent(rng, geom.random_point(rng), n=n))

    batch_log = geom.log(p, q)
    batch_exp = geom.exp(p, v)
    batch_dist = geom.dist(p, q)
    batch_tr = geom.transport(p, q, v)
    batch_inner = geom.inner(p, v, v)
    for i in range(n):
        np.testing.assert_allclose(batch_log[i], geom.log(p[i], q[i]), atol=1e-12)
        np.testing.assert_allclose(batch_exp[i], geom.exp(p[i], v[i]), atol=1e-12)
        np.testing.assert_allclose(batch_dist[i], geom.dist(p[i], q[i]), atol=1e-12)
        np.testing.assert_allclose(batch_tr[i], geom.transport(p[i], q[i], v[i]), atol=1e-12)
        np.testing.assert_allclose(batch_inner[i], geom.inner(p[i], v[i], v[i]), atol=1e-12)


# ----------------------------------------------------------------------
# guards, validation, and identification
# ----------------------------------------------------------------------


def test_sphere_guards():
    geom = Sphere(2)
    p = np.array([0.0, 0.0, 1.0])
    with pytest.raises(GuardError):
        geom.exp(p, np.array([np.pi, 0.0, 0.0]))
    with pytest.raises(GuardError):
        geom.log(p, -p)
    with pytest.raises(ValidationError):
        geom.check_point(np.array([0.0, 0.0, 1.5]))


def test_spd_validation():
    for geom in (SPDLogCholesky(2), SPDAffineInvariant(2)):
        with pytest.raises(ValidationError):
            geom.check_point(np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ValidationError):
            geom.check_point(np.array([[1.0, 2.0], [2.0, 1.0]]))
        geom.check_point(np.array([[2.0, 0.4], [0.4, 1.0]]))


def test_descriptor_roundtrip():
    for geom in GEOMS:
        again = geometry_from_descriptor(geom.descriptor())
        assert again == geom
    with pytest.raises(ValidationError):
        geometry_from_descriptor("hyperbolic:2")
    with pytest.raises(ValidationError):
        geometry_from_descriptor("sphere:x")


def test_small_step_stability():
    # series branches keep tiny steps exact to machine precision
    geom = Sphere(2)
    p = np.array([1.0, 0.0, 0.0])
    v = np.array([0.0, 1e-10, -2e-10])
    q = geom.exp(p, v)
    np.testing.assert_allclose(geom.log(p, q), v, atol=1e-17)
    assert geom.dist(p, q) == pytest.approx(np.linalg.norm(v), rel=1e-6)
    np.testing.assert_allclose(geom.transport(p, q, np.array([0.0, 1.0, 0.0])),
                               [0.0, 1.0, 0.0], atol=1e-9)
