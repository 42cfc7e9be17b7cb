import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cocyclelab import conformal_geometry as cg
from cocyclelab.errors import PreconditionError

seeds = st.integers(0, 2**32 - 1)


def random_structure(rng, d=2, spread=0.5):
    S = rng.normal(size=(d, d)) * spread
    return cg.normalize(cg._eig_apply(S + S.T, np.exp))


def random_matrix(rng, d=2):
    while True:
        X = rng.normal(size=(d, d))
        if np.linalg.cond(X) < 50:
            return X


def test_normalize_examples():
    assert np.allclose(cg.normalize(np.eye(2)), np.eye(2))
    assert np.allclose(cg.normalize(np.diag([4.0, 1.0])), np.diag([2.0, 0.5]))
    assert np.allclose(cg.normalize(2 * np.eye(3)), np.eye(3))
    with pytest.raises(ValueError, match="smallest eigenvalue -1"):
        cg.normalize(np.diag([1.0, -1.0]))


def test_dist_examples():
    C = random_structure(np.random.default_rng(0))
    assert cg.dist(C, C) == pytest.approx(0.0, abs=1e-12)
    assert cg.dist(np.eye(2), np.diag([math.e ** 2, math.e ** -2])) == pytest.approx(2.0, rel=1e-14)
    assert cg.dist(np.eye(2), np.diag([4.0, 0.25])) == pytest.approx(math.log(4), rel=1e-14)


def test_norm_comparison_examples():
    res = cg.norm_comparison(np.eye(2))
    assert (res.lower, res.dist, res.upper) == (0.0, 0.0, 0.0) and res.passed
    res = cg.norm_comparison(np.diag([math.e, 1 / math.e]))
    assert res.passed and res.inverse_bound
    assert res.lower == pytest.approx(1.0) and res.dist == pytest.approx(1.0)


@given(seeds, st.integers(2, 4))
def test_norm_comparison_random(seed, d):
    res = cg.norm_comparison(random_structure(np.random.default_rng(seed), d, 1.5))
    assert res.passed and res.inverse_bound


def test_pullback_examples():
    Q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(2, 2)))
    assert np.allclose(cg.pullback(Q, np.eye(2)), np.eye(2))
    assert np.allclose(cg.pullback(np.diag([2.0, 0.5]), np.eye(2)), np.diag([4.0, 0.25]))
    C = random_structure(np.random.default_rng(2))
    assert np.allclose(cg.pullback(-3.5 * np.eye(2), C), C)
    with pytest.raises(ValueError):
        cg.pullback(np.zeros((2, 2)), C)


@given(seeds, st.integers(2, 4))
def test_pullback_isometry_and_contravariance(seed, d):
    rng = np.random.default_rng(seed)
    C1, C2 = random_structure(rng, d), random_structure(rng, d)
    X, Y = random_matrix(rng, d), random_matrix(rng, d)
    assert cg.dist(cg.pullback(X, C1), cg.pullback(X, C2)) == pytest.approx(cg.dist(C1, C2), abs=1e-9)
    assert np.allclose(cg.pullback(X @ Y, C1), cg.pullback(Y, cg.pullback(X, C1)), atol=1e-9)
    assert cg.is_structure(cg.pullback(X, C1), tol=1e-9)


@given(seeds, st.integers(2, 4))
def test_triangle_and_midpoint(seed, d):
    rng = np.random.default_rng(seed)
    A, B, C = (random_structure(rng, d) for _ in range(3))
    assert cg.dist(A, C) <= cg.dist(A, B) + cg.dist(B, C) + 1e-9
    mid = cg.geodesic(A, B, 0.5)
    assert cg.dist(A, mid) == pytest.approx(cg.dist(mid, B), abs=1e-9)
    assert cg.dist(A, mid) == pytest.approx(cg.dist(A, B) / 2, abs=1e-9)


def test_geodesic_examples():
    rng = np.random.default_rng(3)
    A, B = random_structure(rng), random_structure(rng)
    assert np.allclose(cg.geodesic(A, B, 0.0), A)
    assert np.allclose(cg.geodesic(A, B, 1.0), B)
    e = math.e
    assert np.allclose(cg.geodesic(np.eye(2), np.diag([e * e, 1 / (e * e)]), 0.5), np.diag([e, 1 / e]))


def test_exp_log_inverse():
    rng = np.random.default_rng(4)
    A, B = random_structure(rng, 3), random_structure(rng, 3)
    assert np.allclose(cg.exp_map(A, cg.log_map(A, B)), B, atol=1e-10)


def test_perturbation_examples():
    res = cg.perturbation_bound(np.eye(2), np.eye(2))
    assert res.lhs == pytest.approx(0.0, abs=1e-15) and res.rhs == 0.0 and res.passed
    A = np.eye(2) + 0.05 * np.array([[0.0, 1.0], [0.0, 0.0]])
    res = cg.perturbation_bound(np.eye(2), A)
    assert res.rhs == pytest.approx(0.3, rel=1e-12)
    assert res.lhs <= res.rhs
    with pytest.raises(PreconditionError, match="threshold"):
        cg.perturbation_bound(np.eye(2), 2 * np.eye(2))


@given(seeds, st.integers(2, 4))
def test_perturbation_random(seed, d):
    rng = np.random.default_rng(seed)
    C = random_structure(rng, d, 0.5)
    w = np.linalg.eigvalsh(C)
    E = rng.normal(size=(d, d))
    E *= rng.uniform(0, 1) / (6 * w[-1] / w[0]) / np.linalg.norm(E, 2)
    assert cg.perturbation_bound(C, np.eye(d) + E).passed


def test_circumcenter_examples():
    C = random_structure(np.random.default_rng(5))
    res = cg.circumcenter([C])
    assert np.allclose(res.center, C) and res.radius == 0.0
    e = math.e
    res = cg.circumcenter([np.eye(2), np.diag([e * e, 1 / (e * e)])])
    assert np.allclose(res.center, np.diag([e, 1 / e]), atol=1e-9)
    assert res.radius == pytest.approx(1.0, abs=1e-9)


def test_circumcenter_on_a_geodesic():
    a = 1.7
    X = np.diag([a, 1 / a])
    C = np.eye(2)
    pts = [C, cg.pullback(X, C), cg.pullback(X @ X, C)]
    res = cg.circumcenter(pts)
    # brute force along the shared geodesic
    ts = np.linspace(0, 1, 20001)
    best = min(ts, key=lambda t: max(cg.dist(cg.geodesic(pts[0], pts[2], t), p) for p in pts))
    assert np.allclose(res.center, cg.geodesic(pts[0], pts[2], best), atol=1e-4)
    assert cg.dist(res.center, pts[0]) == pytest.approx(cg.dist(res.center, pts[2]), abs=1e-8)
    # an orthogonal X fixes Id, so the orbit collapses
    Q = np.array([[0.0, -1.0], [1.0, 0.0]])
    res = cg.circumcenter([C, cg.pullback(Q, C), cg.pullback(Q @ Q, C)])
    assert np.allclose(res.center, C) and res.radius == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("d,method", [(2, "hyperbolic"), (2, "tangent"), (3, "tangent")])
def test_circumcenter_local_optimality(d, method):
    rng = np.random.default_rng(d)
    pts = [random_structure(rng, d) for _ in range(12)]
    tol = 1e-8
    res = cg.circumcenter(pts, tol=tol, method=method)
    radii = [cg.dist(res.center, p) for p in pts]
    assert max(radii) == pytest.approx(res.radius, abs=tol)
    for _ in range(200):
        for scale in (2 * tol, 1e-3):
            V = rng.normal(size=(d, d))
            V = V + V.T
            V -= np.trace(np.linalg.solve(res.center, V)) / d * res.center
            cand = cg.exp_map(res.center, V * scale / max(cg.dist(res.center, cg.exp_map(res.center, V)), 1e-300))
            assert max(cg.dist(cand, p) for p in pts) >= res.radius - tol


def test_circumcenter_methods_agree():
    rng = np.random.default_rng(9)
    pts = [random_structure(rng) for _ in range(8)]
    a = cg.circumcenter(pts, method="hyperbolic")
    b = cg.circumcenter(pts, method="tangent")
    assert cg.dist(a.center, b.center) < 1e-6
    c = cg.circumcenter(pts, method="subgradient", max_iter=20000, tol=1e-3)
    assert c.radius == pytest.approx(a.radius, abs=1e-2)


def test_karcher_mean_of_symmetric_pair():
    e = math.e
    m = cg.karcher_mean([np.diag([e, 1 / e]), np.diag([1 / e, e])])
    assert np.allclose(m, np.eye(2), atol=1e-10)


def test_upper_round_trip():
    C = random_structure(np.random.default_rng(7), 3)
    assert np.allclose(cg.from_upper(cg.to_upper(C)), C)
    assert cg.to_upper(C)[0] == 3
