import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cocyclelab import base_dynamics as bd
from cocyclelab.errors import ClosingRefused, HyperbolicityError, SizeCapError

from conftest import CAT_KAPPA, GOLDEN

rationals = st.fractions(min_value=0, max_value=1, max_denominator=97).map(lambda q: q % 1)


def test_rejects_non_hyperbolic_and_non_invertible():
    with pytest.raises(HyperbolicityError, match="modulus 1"):
        bd.ToralAutomorphism([[1, 1], [0, 1]])
    with pytest.raises(HyperbolicityError, match="det"):
        bd.ToralAutomorphism([[2, 0], [0, 1]])
    with pytest.raises(HyperbolicityError):
        bd.ToralAutomorphism([[1.5, 1], [1, 1]])


def test_cat_map_splitting(cat):
    assert cat.kappa == pytest.approx(CAT_KAPPA, abs=1e-12)
    us = cat.stable_basis[:, 0]
    expected = np.array([1.0, -GOLDEN]) / math.hypot(1.0, GOLDEN)
    assert min(np.linalg.norm(us - expected), np.linalg.norm(us + expected)) < 1e-12
    assert np.allclose(cat.matrix_f @ us, cat.lambda_stable * us, atol=1e-12)
    assert np.allclose(cat.stable_projector + cat.unstable_projector, np.eye(2), atol=1e-12)
    # orthogonal splitting for a symmetric matrix
    assert cat.anosov_constant == pytest.approx(1.0, abs=1e-9)


def test_matrix_is_read_only(cat):
    with pytest.raises(ValueError):
        cat.matrix[0, 0] = 5


def test_apply_examples(cat):
    assert bd.apply(cat, (0.0, 0.0), 5).tolist() == [0.0, 0.0]
    assert np.allclose(bd.apply(cat, (0.5, 0.5), 1), [0.5, 0.0])
    x = (0.123, 0.456)
    assert np.array_equal(bd.apply(cat, x, 0), np.array(x))
    half = (Fraction(1, 2), Fraction(1, 2))
    assert bd.apply(cat, half, 1) == (Fraction(1, 2), Fraction(0))


@given(rationals, rationals, st.integers(-12, 12), st.integers(-12, 12))
def test_apply_group_law_exact(a, b, n, m):
    f = bd.cat_map()
    x = (a, b)
    assert bd.apply(f, x, n + m) == bd.apply(f, bd.apply(f, x, n), m)


@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True), st.integers(0, 40))
def test_apply_round_trip_fixed_point(a, b, n):
    f = bd.cat_map()
    x = np.array([a, b])
    back = bd.apply(f, bd.apply(f, x, n), -n)
    assert bd.torus_dist(back, x) < 1e-15


def test_orbit_matches_apply(cat):
    x = np.array([0.3, 0.7])
    orb = bd.orbit(cat, x, 30)
    assert orb.shape == (31, 2)
    for i in (0, 7, 30):
        assert np.allclose(orb[i], bd.apply(cat, x, i), atol=0)
    back = bd.orbit(cat, x, -5)
    assert np.allclose(back[5], bd.apply(cat, x, -5), atol=0)


def test_torus_dist_examples():
    assert bd.torus_dist((0.1, 0.0), (0.9, 0.0)) == pytest.approx(0.2)
    assert bd.torus_dist((0.3, 0.4), (0.3, 0.4)) == 0.0
    assert bd.torus_dist((0.0, 0.0), (0.5, 0.5)) == pytest.approx(math.sqrt(0.5))


@given(*[st.floats(-3, 3) for _ in range(6)])
def test_torus_dist_metric(a, b, c, d, e, g):
    x, y, z = (a, b), (c, d), (e, g)
    assert bd.torus_dist(x, y) == pytest.approx(bd.torus_dist(y, x), abs=1e-12)
    assert bd.torus_dist(x, z) <= bd.torus_dist(x, y) + bd.torus_dist(y, z) + 1e-12


@pytest.mark.parametrize("n,count", [(1, 1), (2, 5), (3, 16), (4, 45), (8, 2205)])
def test_periodic_point_counts(cat, n, count):
    assert bd.count_fixed_points(cat, n) == count
    orbits = bd.periodic_points(cat, n)
    points = {p for o in orbits for p in o.orbit}
    assert len(points) == count
    for o in orbits:
        assert n % o.period == 0
        assert bd.apply(cat, o.point, o.period) == o.point


def test_fixed_point_is_origin(cat):
    (o,) = bd.periodic_points(cat, 1)
    assert o.point == (Fraction(0), Fraction(0))


def test_periodic_points_brute_force(cat):
    # every point of (1/D) Z^2 fixed by f^3 is found
    D = 4
    brute = set()
    for i in range(D * 4):
        for j in range(D * 4):
            p = (Fraction(i, 16), Fraction(j, 16))
            if bd.apply(cat, p, 3) == p:
                brute.add(p)
    found = {p for o in bd.periodic_points(cat, 3) for p in o.orbit}
    assert brute <= found


def test_periodic_points_three_torus():
    f = bd.ToralAutomorphism([[0, 0, 1], [1, 0, -1], [0, 1, 3]])
    for n in (1, 2, 3):
        pts = {p for o in bd.periodic_points(f, n) for p in o.orbit}
        assert len(pts) == bd.count_fixed_points(f, n)


def test_periodic_cap(cat):
    with pytest.raises(SizeCapError):
        bd.periodic_points(cat, 8, cap=100)


def test_closing_shadow_periodic_input(cat):
    p = (Fraction(1, 5), Fraction(2, 5))
    s = bd.closing_shadow(cat, [float(v) for v in p], 2)
    assert s.p == p
    assert s.delta < 1e-15
    assert np.max(s.deviation) < 1e-15


def test_closing_shadow_refusal(cat):
    with pytest.raises(ClosingRefused):
        bd.closing_shadow(cat, (0.3, 0.1), 8)


@given(st.integers(1, 9), st.integers(0, 10_000))
def test_closing_shadow_bound(n, seed):
    f = bd.cat_map()
    rng = np.random.default_rng(seed)
    orbits = bd.periodic_points(f, n)
    o = orbits[rng.integers(len(orbits))]
    x = np.array([float(v) for v in o.point]) + rng.normal(size=2) * 1e-3 * f.lambda_unstable ** -n
    s = bd.closing_shadow(f, x, n)
    assert bd.apply(f, s.p, n) == s.p
    assert s.c == pytest.approx(f.closing_constant)
    assert np.all(s.deviation <= s.c * s.delta + 1e-12)


def test_stable_neighbor(cat):
    x = np.zeros(2)
    assert np.array_equal(bd.stable_neighbor(cat, x, 0.0), x)
    y = bd.stable_neighbor(cat, x, 0.01)
    assert bd.torus_dist(x, y) == pytest.approx(0.01, abs=1e-15)
    v = bd.leaf_offset(cat, x, y)
    assert abs(v[1] + GOLDEN * v[0]) < 1e-14


@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True),
       st.floats(1e-6, 1e-2), st.integers(1, 25))
def test_stable_leaf_contraction(a, b, delta, n):
    f = bd.cat_map()
    x = np.array([a, b])
    v = f.stable_basis[:, 0] * delta
    ys, disp = bd.leaf_orbit(f, x, v, n, "stable")
    xs = bd.orbit(f, x, n)
    assert np.linalg.norm(disp[n]) == pytest.approx(f.lambda_stable ** n * delta, rel=1e-12)
    assert bd.torus_dist(xs[n], ys[n]) == pytest.approx(f.lambda_stable ** n * delta, rel=1e-6, abs=1e-15)


def test_unstable_neighbor_expands(cat):
    x = np.array([0.2, 0.3])
    y = bd.unstable_neighbor(cat, x, 1e-6)
    v = bd.leaf_offset(cat, x, y)
    disp = bd.propagate_displacement(cat, v, 5, "unstable")
    assert np.linalg.norm(disp[5]) == pytest.approx(cat.lambda_unstable ** 5 * 1e-6, rel=1e-9)


def test_dense_seed_covering(cat):
    x0 = bd.dense_seed(2)
    assert np.allclose(x0, [math.sqrt(2) - 1, math.sqrt(3) - 1])
    orb = bd.orbit(cat, x0, 200_000)
    assert bd.covering_radius(orb, 32) < 0.01


def test_grid_points():
    g = bd.grid_points(4)
    assert g.shape == (16, 2)
    assert g.min() == 0.0 and g.max() == 0.75
