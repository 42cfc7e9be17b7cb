"""Geometry of conformal structures: det-1 SPD matrices with the invariant metric.

The distance is ``dist(Id, C) = sqrt(d)/2 * |log eig(C)|_2`` extended by the
pull-back action ``X[C] = (det X^T X)^{-1/d} X^T C X``, which acts by
isometries.  In dimension 2 this space is the hyperbolic plane of curvature
-1; the map ``[[a, b], [b, c]] -> ((a+c)/2, (a-c)/2, b)`` onto the hyperboloid
is an isometry, which gives an exact circumcenter algorithm there.

Every function accepts a single matrix (d, d) or a batch (N, d, d).
"""

from __future__ import annotations

import math
import random
from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, PreconditionError

DEFAULT_TOL = 1e-8

__all__ = [
    "normalize",
    "is_structure",
    "dist",
    "norm_comparison",
    "pullback",
    "geodesic",
    "perturbation_bound",
    "karcher_mean",
    "circumcenter",
    "to_upper",
    "from_upper",
]


def _sym(C):
    return 0.5 * (C + np.swapaxes(C, -1, -2))


def _eig_apply(C, fn):
    """Apply a scalar function to a symmetric matrix through its eigendecomposition."""
    w, Q = np.linalg.eigh(_sym(C))
    return _sym((Q * fn(w)[..., None, :]) @ np.swapaxes(Q, -1, -2))


def is_structure(C, tol=1e-10):
    C = np.asarray(C, dtype=float)
    if np.max(np.abs(C - np.swapaxes(C, -1, -2))) > 1e-12 * max(1.0, np.max(np.abs(C))):
        return False
    w = np.linalg.eigvalsh(_sym(C))
    return bool(np.all(w > 0) and np.all(np.abs(np.prod(w, axis=-1) - 1.0) <= tol))


def normalize(G):
    """``G / det(G)^{1/d}`` for symmetric positive-definite ``G``."""
    G = _sym(np.asarray(G, dtype=float))
    w = np.linalg.eigvalsh(G)
    if np.any(w[..., 0] <= 0):
        raise ValueError(f"matrix is not positive definite: smallest eigenvalue {np.min(w[..., 0]):.6g}")
    d = G.shape[-1]
    logdet = np.sum(np.log(w), axis=-1)
    return G * np.exp(-logdet / d)[..., None, None]


def log_eigenvalues(C1, C2):
    """Log-eigenvalues of ``C1^{-1} C2``, ascending.

    Computed as ``2 log sigma(L1^{-1} L2)`` from Cholesky factors, which
    halves the conditioning compared with an eigensolve of the product.
    """
    L1 = np.linalg.cholesky(_sym(np.asarray(C1, dtype=float)))
    L2 = np.linalg.cholesky(_sym(np.asarray(C2, dtype=float)))
    s = np.linalg.svd(np.linalg.solve(L1, L2), compute_uv=False)
    return 2 * np.log(s[..., ::-1])


def dist(C1, C2):
    """Invariant distance between conformal structures."""
    L = log_eigenvalues(C1, C2)
    d = L.shape[-1]
    # remove a common scale so non-normalized inputs are measured as classes
    L = L - np.mean(L, axis=-1, keepdims=True)
    return math.sqrt(d) / 2 * np.sqrt(np.sum(L * L, axis=-1))


class NormComparison(NamedTuple):
    lower: float
    dist: float
    upper: float
    passed: bool
    inverse_bound: bool


def norm_comparison(C, tol=1e-12):
    """Sandwich ``sqrt(d/8) log(|C||C^-1|) <= dist(Id, C) <= d/2 max(log|C|, log|C^-1|)``.

    Also checks ``|C^{-1}| <= |C|^{d-1}``.
    """
    C = np.asarray(C, dtype=float)
    d = C.shape[-1]
    w = np.linalg.eigvalsh(_sym(C))
    nC, nCi = w[-1], 1.0 / w[0]
    lower = math.sqrt(d / 8) * math.log(nC * nCi)
    mid = float(dist(np.eye(d), C))
    upper = d / 2 * max(math.log(nC), math.log(nCi))
    slack = tol * max(1.0, upper)
    passed = lower <= mid + slack and mid <= upper + slack
    inverse_bound = nCi <= nC ** (d - 1) * (1 + tol)
    return NormComparison(lower, mid, upper, bool(passed), bool(inverse_bound))


def pullback(X, C):
    """``X[C] = (det X^T X)^{-1/d} X^T C X`` (broadcasts over leading axes)."""
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    d = X.shape[-1]
    sign, logdet = np.linalg.slogdet(X)
    if np.any(sign == 0) or not np.all(np.isfinite(logdet)):
        raise ValueError("pullback by a singular matrix")
    out = np.swapaxes(X, -1, -2) @ C @ X
    return _sym(out * np.exp(-2 * logdet / d)[..., None, None])


def sqrtm(C):
    return _eig_apply(C, np.sqrt)


def inv_sqrtm(C):
    return _eig_apply(C, lambda w: 1 / np.sqrt(w))


def geodesic(C1, C2, t):
    """``C1^{1/2} (C1^{-1/2} C2 C1^{-1/2})^t C1^{1/2}``, renormalized to det 1."""
    S = sqrtm(C1)
    Si = inv_sqrtm(C1)
    M = _eig_apply(Si @ C2 @ Si, lambda w: np.power(w, t))
    return normalize(S @ M @ S)


def exp_map(C, V):
    """Riemannian exponential at ``C`` of a symmetric tangent ``V`` (ambient coordinates)."""
    S = sqrtm(C)
    Si = inv_sqrtm(C)
    return normalize(S @ _eig_apply(Si @ V @ Si, np.exp) @ S)


def log_map(C, P):
    """Riemannian logarithm at ``C`` (ambient coordinates)."""
    S = sqrtm(C)
    Si = inv_sqrtm(C)
    return _sym(S @ _eig_apply(Si @ P @ Si, np.log) @ S)


class PerturbationCheck(NamedTuple):
    lhs: float
    rhs: float
    passed: bool


def perturbation_bound(C, A, slack=1e-12):
    """``dist(C, A[C]) <= 3 d |C^{-1}| |C| |A - Id|`` for ``|A - Id| <= (6 |C^{-1}||C|)^{-1}``."""
    C = np.asarray(C, dtype=float)
    A = np.asarray(A, dtype=float)
    d = C.shape[0]
    w = np.linalg.eigvalsh(_sym(C))
    k = w[-1] / w[0]
    e = float(np.linalg.norm(A - np.eye(d), 2))
    threshold = 1.0 / (6 * k)
    if e > threshold:
        raise PreconditionError(f"|A - Id| = {e:.6g} exceeds the threshold {threshold:.6g}")
    lhs = float(dist(C, pullback(A, C)))
    rhs = 3 * d * k * e
    return PerturbationCheck(lhs, rhs, bool(lhs <= rhs + slack))


def karcher_mean(points, tol=1e-12, max_iter=200):
    """Fixed-point iteration for the Riemannian center of mass."""
    P = np.asarray(points, dtype=float)
    c = P[0]
    for _ in range(max_iter):
        S = sqrtm(c)
        Si = inv_sqrtm(c)
        T = np.mean(_eig_apply(Si @ P @ Si, np.log), axis=0)
        c = normalize(S @ _eig_apply(T, np.exp) @ S)
        if np.linalg.norm(T) < tol:
            break
    return c


# ---------------------------------------------------------------------------
# minimal enclosing balls


def _welzl(points, ball_of, contains, rng, max_support):
    """Move-to-front Welzl: smallest ball containing ``points``.

    ``ball_of(R)`` returns the smallest ball with every point of ``R`` on its
    boundary (or ``None`` if it does not exist), ``contains(ball, p)`` tests
    membership.  Works in any space where enclosing balls are unique and the
    boundary-point lemma holds, which includes Euclidean and hyperbolic space.
    """
    pts = list(points)
    rng.shuffle(pts)

    def mb(n, boundary):
        ball = ball_of(boundary)
        if len(boundary) == max_support:
            return ball
        for i in range(n):
            p = pts[i]
            if ball is None or not contains(ball, p):
                ball = mb(i, boundary + [p])
                if ball is not None and i > 0:
                    pts.insert(0, pts.pop(i))
        return ball

    return mb(len(pts), [])


def _lorentz(p, q):
    return -p[0] * q[0] + p[1] * q[1] + p[2] * q[2]


def _to_hyperboloid(C):
    a, b, c = C[0][0], C[0][1], C[1][1]
    p = [(a + c) / 2, (a - c) / 2, b]
    # re-project to the sheet to absorb det != 1 rounding
    s = math.sqrt(max(-_lorentz(p, p), 1e-300))
    return (p[0] / s, p[1] / s, p[2] / s)


def _from_hyperboloid(p):
    t, x, y = p
    C = np.array([[t + x, y], [y, t - x]])
    return normalize(C)


def _timelike_unit(v):
    n2 = -_lorentz(v, v)
    if not n2 > 0 or v[0] <= 0:
        return None
    s = math.sqrt(n2)
    return (v[0] / s, v[1] / s, v[2] / s)


def _hyperbolic_ball(boundary):
    if not boundary:
        return None
    if len(boundary) == 1:
        return (boundary[0], 1.0)
    if len(boundary) == 2:
        p, q = boundary
        c = _timelike_unit((p[0] + q[0], p[1] + q[1], p[2] + q[2]))
        return (c, -_lorentz(c, p))
    # center c~ with <c~, p_i> = -1 for the three points: a plane section of the sheet
    M = np.array([[-p[0], p[1], p[2]] for p in boundary])
    try:
        v = np.linalg.solve(M, -np.ones(3))
    except np.linalg.LinAlgError:
        return None
    c = _timelike_unit(tuple(v))
    if c is None:
        return None
    return (c, -_lorentz(c, boundary[0]))


def _hyperbolic_contains(ball, p):
    c, cosh_r = ball
    return -_lorentz(c, p) <= cosh_r * (1 + 1e-12) + 1e-15


def _circumcenter_hyperbolic(points, rng):
    hp = [_to_hyperboloid(C) for C in points]
    # exact duplicates only slow Welzl down
    hp = list(dict.fromkeys(hp))
    ball = _welzl(hp, _hyperbolic_ball, _hyperbolic_contains, rng, 3)
    if ball is None or not all(_hyperbolic_contains(ball, p) for p in hp):
        raise ConvergenceError("degenerate hyperbolic enclosing ball", last=None, gap=math.inf)
    return _from_hyperboloid(ball[0])


def _euclidean_ball(boundary):
    if not boundary:
        return None
    r0 = boundary[0]
    if len(boundary) == 1:
        return (r0, 0.0)
    D = np.array([b - r0 for b in boundary[1:]])
    G = D @ D.T
    rhs = 0.5 * np.sum(D * D, axis=1)
    try:
        a = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        return None
    c = r0 + a @ D
    return (c, float(np.linalg.norm(c - r0)))


def _euclidean_contains(ball, p):
    c, r = ball
    return float(np.linalg.norm(p - c)) <= r * (1 + 1e-12) + 1e-15


def _tangent_basis(d):
    """Orthonormal basis (Frobenius) of symmetric traceless d x d matrices."""
    basis = []
    for i in range(d):
        for j in range(i + 1, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1 / math.sqrt(2)
            basis.append(E)
    for m in range(1, d):
        E = np.zeros((d, d))
        E[np.arange(m), np.arange(m)] = 1.0
        E[m, m] = -m
        basis.append(E / np.linalg.norm(E))
    return np.array(basis)


def _circumcenter_tangent(points, tol, max_iter, rng):
    """Iterated Euclidean enclosing balls in normal coordinates at the current center."""
    P = np.asarray(points, dtype=float)
    d = P.shape[-1]
    basis = _tangent_basis(d)
    scale = math.sqrt(d) / 2
    c = karcher_mean(P, tol=1e-10, max_iter=50)
    radius = float(np.max(dist(c, P)))
    for it in range(max_iter):
        S = sqrtm(c)
        Si = inv_sqrtm(c)
        L = _eig_apply(Si @ P @ Si, np.log)
        coords = scale * np.einsum("nij,bij->nb", L, basis)
        ball = _welzl(list(coords), _euclidean_ball, _euclidean_contains, rng,
                      basis.shape[0] + 1)
        step_vec = np.einsum("b,bij->ij", ball[0], basis) / scale
        t = 1.0
        while t > 1e-6:
            cand = normalize(S @ _eig_apply(t * step_vec, np.exp) @ S)
            r = float(np.max(dist(cand, P)))
            if r <= radius:
                break
            t /= 2
        moved = t * np.linalg.norm(ball[0])
        if r <= radius:
            c, radius = cand, r
        if moved < tol:
            return c, it + 1
    raise ConvergenceError("tangent-space enclosing ball iteration did not settle",
                           last=c, gap=float(moved))


def _circumcenter_subgradient(points, tol, max_iter):
    """Geodesic subgradient descent: step ``1/(k+1)`` of the way to the farthest point."""
    P = np.asarray(points, dtype=float)
    c = karcher_mean(P, tol=1e-10, max_iter=50)
    best, best_r = c, float(np.max(dist(c, P)))
    trace = []
    for k in range(max_iter):
        D = dist(c, P)
        far = int(np.argmax(D))
        c = geodesic(c, P[far], 1.0 / (k + 2))
        r = float(np.max(dist(c, P)))
        if r < best_r:
            best, best_r = c, r
        trace.append(best_r)
        if k > 50 and trace[-50] - best_r < tol * 1e-2:
            return best, k + 1
    raise ConvergenceError("subgradient circumcenter hit its iteration cap",
                           last=best, gap=trace[-50] - best_r if len(trace) >= 50 else math.inf,
                           trace=trace)


class Circumcenter(NamedTuple):
    center: np.ndarray
    radius: float
    iterations: int


def circumcenter(points, tol=DEFAULT_TOL, method="auto", max_iter=500, seed=0):
    """Center and radius of the smallest ball containing ``points``.

    Parameters
    ----------
    points : array_like, shape (m, d, d)
        Conformal structures.
    tol : float
        Target accuracy of the center in distance units.
    method : {"auto", "hyperbolic", "tangent", "subgradient"}
        ``hyperbolic`` (d = 2 only) runs Welzl's algorithm on the hyperboloid
        and is exact up to rounding; ``tangent`` iterates Euclidean enclosing
        balls in normal coordinates; ``subgradient`` is plain geodesic
        subgradient descent (slow, for cross-checks).  ``auto`` picks
        ``hyperbolic`` for d = 2 and ``tangent`` otherwise.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 2:
        P = P[None]
    if P.shape[0] == 0:
        raise ValueError("circumcenter of an empty set")
    d = P.shape[-1]
    rng = random.Random(seed)
    if P.shape[0] == 1:
        return Circumcenter(normalize(P[0]), 0.0, 0)
    if method == "auto":
        method = "hyperbolic" if d == 2 else "tangent"
    if method == "hyperbolic":
        if d != 2:
            raise ValueError("hyperbolic method needs d = 2")
        c, iters = _circumcenter_hyperbolic(P, rng), 1
    elif method == "tangent":
        c, iters = _circumcenter_tangent(P, tol, max_iter, rng)
    elif method == "subgradient":
        c, iters = _circumcenter_subgradient(P, tol, max_iter * 100)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Circumcenter(c, float(np.max(dist(c, P))), iters)


# ---------------------------------------------------------------------------
# serialization


def to_upper(C):
    """``[d, C_00, C_01, ..., C_0d, C_11, ...]`` (upper triangle, row-major)."""
    C = np.asarray(C, dtype=float)
    d = C.shape[0]
    iu = np.triu_indices(d)
    return [d] + [float(v) for v in C[iu]]


def from_upper(values):
    d = int(values[0])
    iu = np.triu_indices(d)
    C = np.zeros((d, d))
    C[iu] = values[1:]
    return _sym(C + np.triu(C, 1).T)
