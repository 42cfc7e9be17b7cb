"""Matrix cocycles over toral automorphisms.

A cocycle is a matrix-valued function ``x -> A(x)``; over a base map ``f`` it
generates ``F^n_x = A(f^{n-1} x) ... A(f x) A(x)``.  All cocycle classes share
a vectorized ``values(points)`` method returning shape (N, d, d).
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from . import base_dynamics as bd
from .errors import ConstructionError, DegenerateCocycleError, ScaledProductError
from .fields import TrigField, field_from_dict, rotation

DEGENERACY_THRESHOLD = 1e-12


def _as_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    return pts


def image_points(f, points, n=1):
    """``f^n`` applied to an (N, k) array of float points."""
    return bd.orbit(f, _as_points(points), n)[-1]


class Cocycle:
    """Base class.  Subclasses implement ``values``; ``d`` is the fiber dimension."""

    kind = "abstract"
    d = 2
    holder_beta = 1.0
    holder_const = None

    def values(self, points):
        raise NotImplementedError

    def inverse_values(self, points):
        return np.linalg.inv(self.values(points))

    def __call__(self, x):
        return evaluate(self, x)


class ConstantCocycle(Cocycle):
    kind = "constant"

    def __init__(self, matrix):
        self.matrix = np.array(matrix, dtype=float)
        self.d = self.matrix.shape[0]
        self._inverse = np.linalg.inv(self.matrix)
        self.holder_const = 0.0

    def values(self, points):
        pts = _as_points(points)
        return np.broadcast_to(self.matrix, (pts.shape[0], self.d, self.d)).copy()

    def inverse_values(self, points):
        pts = _as_points(points)
        return np.broadcast_to(self._inverse, (pts.shape[0], self.d, self.d)).copy()

    def to_dict(self):
        return {"kind": "constant", "matrix": self.matrix.tolist()}


def identity_cocycle(d=2):
    return ConstantCocycle(np.eye(d))


def derivative_cocycle(f):
    """The derivative cocycle of a linear automorphism: the constant matrix itself."""
    return ConstantCocycle(f.matrix_f)


class CoboundaryField:
    """Positive scalar field ``phi(f x) / phi(x)`` built from a positive field ``phi``."""

    def __init__(self, phi, f):
        self.phi, self.f = phi, f

    def __call__(self, points):
        pts = _as_points(points)
        return self.phi(image_points(self.f, pts)) / self.phi(pts)

    @property
    def lipschitz(self):
        return None

    def to_dict(self):
        return {"type": "coboundary", "phi": self.phi.to_dict()}


class ConformalCocycle(Cocycle):
    """``A(x) = lam(x) R(theta(x))`` in dimension 2."""

    kind = "conformal"
    d = 2

    def __init__(self, lam, theta):
        self.lam, self.theta = lam, theta

    def values(self, points):
        pts = _as_points(points)
        return self.lam(pts)[:, None, None] * rotation(self.theta(pts))

    def inverse_values(self, points):
        pts = _as_points(points)
        return rotation(-self.theta(pts)) / self.lam(pts)[:, None, None]

    def to_dict(self):
        return {"kind": "conformal", "lam": self.lam.to_dict(), "theta": self.theta.to_dict()}


class ConjugatedConformalCocycle(Cocycle):
    """``A(x) = C(f x) lam(x) R(theta(x)) C(x)^{-1}``.

    Conformal with respect to the Gram matrices ``C(x)^{-T} C(x)^{-1}``, whose
    normalized field is returned by :meth:`invariant_structure`.
    """

    kind = "conjugated_conformal"
    d = 2

    def __init__(self, C, lam, theta, f):
        self.C, self.lam, self.theta, self.f = C, lam, theta, f

    def values(self, points):
        pts = _as_points(points)
        B = self.lam(pts)[:, None, None] * rotation(self.theta(pts))
        return self.C(image_points(self.f, pts)) @ B @ np.linalg.inv(self.C(pts))

    def inverse_values(self, points):
        pts = _as_points(points)
        Binv = rotation(-self.theta(pts)) / self.lam(pts)[:, None, None]
        return self.C(pts) @ Binv @ np.linalg.inv(self.C(image_points(self.f, pts)))

    def invariant_structure(self, points):
        """Normalized ``C^{-T} C^{-1}`` at each point, shape (N, 2, 2)."""
        Ci = np.linalg.inv(self.C(_as_points(points)))
        G = np.swapaxes(Ci, -1, -2) @ Ci
        return G / np.sqrt(np.linalg.det(G))[:, None, None]

    def condition_bound(self, resolution=64):
        """Largest condition number of ``C`` over a grid (exact for polar fields)."""
        bound = getattr(self.C, "max_condition", None)
        if bound is not None:
            return bound
        s = np.linalg.svd(self.C(bd.grid_points(resolution)), compute_uv=False)
        return float(np.max(s[:, 0] / s[:, -1]))

    def to_dict(self):
        return {"kind": "conjugated_conformal", "C": self.C.to_dict(),
                "lam": self.lam.to_dict(), "theta": self.theta.to_dict()}


class GridCocycle(Cocycle):
    """Matrix values on a uniform grid, multilinearly interpolated (Lipschitz)."""

    kind = "grid"

    def __init__(self, grid_field):
        self.field = grid_field
        self.d = grid_field.value_shape[0]
        self.holder_const = grid_field.lipschitz

    def values(self, points):
        return self.field(_as_points(points))

    def to_dict(self):
        return {"kind": "grid", "resolution": self.field.n}


class ConjugatedCocycle(Cocycle):
    """``X^{-1} A(x) X`` for a constant invertible ``X``: the same cocycle in new coordinates."""

    kind = "conjugated"

    def __init__(self, inner, X):
        self.inner = inner
        self.X = np.array(X, dtype=float)
        self.Xinv = np.linalg.inv(self.X)
        self.d = inner.d

    def values(self, points):
        return self.Xinv @ self.inner.values(points) @ self.X

    def inverse_values(self, points):
        return self.Xinv @ self.inner.inverse_values(points) @ self.X


def conjugate(c, X):
    return ConjugatedCocycle(c, X)


# ---------------------------------------------------------------------------
# shear-rotation counterexample


class ShearRotationCocycle(Cocycle):
    """``A(x) = [[cos a, -sin a, eps], [sin a, cos a, 0], [0, 0, 1]]`` with ``a = alpha~(x)``.

    ``alpha~`` vanishes on a finite orbit segment ``S`` of a dense seed, so
    along ``S`` the iterates are pure shears with entry ``n eps`` and the
    distortion grows without bound, while small Lipschitz bumps keep every
    periodic return-map angle away from ``pi Z`` (making return maps
    diagonalizable with unit-modulus eigenvalues).  For ``d > 3`` the matrix
    is extended by an identity block.
    """

    kind = "shear_rotation"

    def __init__(self, f, eps, segment, bump_centers, bump_radii, bump_heights, d=3,
                 corrected=(), margin=float("nan"), max_period=0, seed=None):
        self.f = f
        self.eps = float(eps)
        self.d = d
        self.segment = np.asarray(segment, dtype=float)
        self.tree = cKDTree(self.segment, boxsize=1.0)
        self.diam = math.sqrt(f.k) / 2
        self.bump_centers = np.asarray(bump_centers, dtype=float).reshape(-1, f.k)
        self.bump_radii = np.asarray(bump_radii, dtype=float)
        self.bump_heights = np.asarray(bump_heights, dtype=float)
        self.bump_tree = cKDTree(self.bump_centers, boxsize=1.0) if len(self.bump_centers) else None
        self.corrected = list(corrected)
        self.margin = margin
        self.max_period = max_period
        self.seed = seed
        lip = self.eps / (2 * self.diam)
        if len(self.bump_heights):
            lip = max(lip, lip + float(np.max(np.abs(self.bump_heights) / self.bump_radii)))
        self.holder_const = 2 * lip

    def base_angle(self, points):
        dist, _ = self.tree.query(np.mod(_as_points(points), 1.0))
        return dist * self.eps / (2 * self.diam)

    def angle(self, points):
        """The corrected rotation angle ``alpha~(x)``."""
        pts = np.mod(_as_points(points), 1.0)
        a = self.base_angle(pts)
        if self.bump_tree is not None:
            dist, idx = self.bump_tree.query(pts)
            r = self.bump_radii[idx]
            a = a + self.bump_heights[idx] * np.clip(1.0 - dist / r, 0.0, None)
        return a

    def angle_sum(self, x, n):
        pts = bd.orbit(self.f, np.asarray(x, dtype=float), n - 1)
        return float(np.sum(self.angle(pts)))

    def values(self, points):
        a = self.angle(points)
        out = np.zeros((a.shape[0], self.d, self.d))
        out[:, :2, :2] = rotation(a)
        out[:, 0, 2] = self.eps
        for j in range(2, self.d):
            out[:, j, j] = 1.0
        return out

    def inverse_values(self, points):
        a = self.angle(points)
        out = np.zeros((a.shape[0], self.d, self.d))
        Rinv = rotation(-a)
        out[:, :2, :2] = Rinv
        out[:, :2, 2] = -self.eps * Rinv[:, :, 0]
        for j in range(2, self.d):
            out[:, j, j] = 1.0
        return out

    def to_dict(self):
        out = {"kind": "shear_rotation", "eps": self.eps, "seg_len": len(self.segment),
               "max_period": self.max_period, "d": self.d}
        if self.seed is not None:
            out["seed"] = [float(v) for v in self.seed]
        return out


def _angle_gap(s):
    """Distance from ``s`` to the nearest multiple of pi, and that multiple."""
    j = round(s / math.pi)
    return abs(s - j * math.pi), j * math.pi


def build_shear_rotation(f, eps, seg_len, max_period, seed=None, d=3):
    """Shear-rotation cocycle over ``f`` (a map of the 2-torus or higher).

    Parameters
    ----------
    f : ToralAutomorphism
    eps : float
        Shear strength and angle scale; ``0 < eps``.
    seg_len : int
        Length ``N`` of the seed orbit segment ``S`` on which the angle vanishes.
    max_period : int
        Periodic orbits of period ``<= max_period`` get angle corrections.
    seed : array_like, optional
        Start of the dense orbit; defaults to :func:`base_dynamics.dense_seed`.

    Returns
    -------
    ShearRotationCocycle
        With ``corrected`` (orbits whose angle sum was bumped) and ``margin``
        (smallest distance of a periodic angle sum to ``pi Z``).
    """
    if eps <= 0 or seg_len < 1 or max_period < 1:
        raise ValueError("need eps > 0, seg_len >= 1, max_period >= 1")
    if d < 3:
        raise ValueError("shear-rotation cocycle needs d >= 3")
    seed = bd.dense_seed(f.k) if seed is None else bd.canonical(seed)
    segment = bd.orbit(f, seed, seg_len - 1)
    tree = cKDTree(segment, boxsize=1.0)
    orbits = bd.periodic_orbits_up_to(f, max_period)
    all_points = np.concatenate([o.points() for o in orbits])
    owner = np.concatenate([[i] * o.period for i, o in enumerate(orbits)])
    seg_dist, _ = tree.query(all_points)
    if np.min(seg_dist) < 1e-12:
        bad = orbits[int(owner[int(np.argmin(seg_dist))])]
        raise ConstructionError(f"periodic orbit of period {bad.period} through {bad.point} meets the segment")
    # half-gap radius: disjoint from the segment and from every other periodic point
    ptree = cKDTree(all_points, boxsize=1.0)
    nn_dist, _ = ptree.query(all_points, k=2)
    radii = 0.5 * np.minimum(seg_dist, nn_dist[:, 1])

    proto = ShearRotationCocycle(f, eps, segment, np.empty((0, f.k)), [], [], d=d)
    centers, rad, heights, corrected = [], [], [], []
    margin = float("inf")
    start = 0
    for m, orb in enumerate(orbits, start=1):
        pts = all_points[start:start + orb.period]
        s = float(np.sum(proto.base_angle(pts)))
        gap, mult = _angle_gap(s)
        eta = eps / (16 * m * m)
        if gap < eta:
            # push away from the nearest multiple of pi by 2*eta < eps/(4 m^2)
            h = 2 * eta if s >= mult else -2 * eta
            centers.append(pts[0])
            rad.append(radii[start])
            heights.append(h)
            corrected.append({"orbit": m, "period": orb.period, "point": orb.point,
                              "angle_before": s, "bump": h})
            s += h
            gap, _ = _angle_gap(s)
        margin = min(margin, gap)
        start += orb.period
    return ShearRotationCocycle(f, eps, segment, np.array(centers).reshape(-1, f.k), rad, heights,
                                d=d, corrected=corrected, margin=margin, max_period=max_period,
                                seed=seed)


def build_conjugated_conformal(C_field, lam_field, theta_field, f, check_resolution=32):
    """``A(x) = C(f x) [lam(x) R(theta(x))] C(x)^{-1}``; refuses a singular ``C`` on a check grid."""
    grid = bd.grid_points(check_resolution, f.k)
    s = np.linalg.svd(C_field(grid), compute_uv=False)
    worst = int(np.argmin(s[:, -1] / s[:, 0]))
    if s[worst, -1] <= 1e-10 * s[worst, 0]:
        raise ConstructionError(f"C is singular near x={tuple(grid[worst])}")
    return ConjugatedConformalCocycle(C_field, lam_field, theta_field, f)


# ---------------------------------------------------------------------------
# evaluation and composition


def evaluate(c, x, threshold=DEGENERACY_THRESHOLD):
    """``A(x)`` for a single point; refuses nearly singular values."""
    A = c.values(np.asarray(x, dtype=float))[0]
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] < threshold * max(1.0, s[0]):
        raise DegenerateCocycleError(tuple(np.asarray(x, dtype=float)), float(s[-1]))
    return A


def walk(f, x, n):
    """Yield the float points ``x, f^{+-1} x, ..., f^{n} x`` for an (N, k) batch."""
    a = bd.to_fixed(x)
    rows = f.rows if n >= 0 else f.inverse_rows
    M = np.array(rows, dtype=np.int64)
    fast = np.max(np.abs(M).sum(1)) < bd._INT64_ROW_LIMIT
    yield bd.from_fixed(a)
    for _ in range(abs(n)):
        a = ((a @ M.T) & bd._MASK) if fast else bd._step_fixed(a, rows, f.k)
        yield bd.from_fixed(a)


def compose(c, f, x, n):
    """``F^n_x``; for ``n < 0`` this is ``(F^{|n|}_{f^n x})^{-1}``.

    ``x`` may be one point (k,) or a batch (N, k); the result has shape
    (d, d) or (N, d, d).  Plain products: for long products use the
    rescaled helpers in :mod:`cocyclelab.spectral`.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(-1, f.k)
    P = np.broadcast_to(np.eye(c.d), (X.shape[0], c.d, c.d)).copy()
    with np.errstate(over="ignore", invalid="ignore"):
        if n > 0:
            for pts in walk(f, X, n - 1):
                P = c.values(pts) @ P
        elif n < 0:
            for i, pts in enumerate(walk(f, X, n)):
                if i:
                    P = c.inverse_values(pts) @ P
    if not np.all(np.isfinite(P)):
        raise ScaledProductError(
            f"F^{n} overflowed; use spectral.log_distortion / spectral.lyapunov_extremes for long products"
        )
    return P[0] if single else P


def envelope_fit(logd, logn, bins=12):
    """Least-squares line through the largest ``logn`` in each ``logd`` bin.

    A Hoelder bound is a sup, and pairs displaced orthogonally to the
    gradient give spuriously small differences, so the upper envelope is the
    meaningful quantity to regress.
    """
    logd = np.asarray(logd, dtype=float)
    logn = np.asarray(logn, dtype=float)
    edges = np.linspace(logd.min(), logd.max() + 1e-12, bins + 1)
    which = np.digitize(logd, edges) - 1
    xs, ys = [], []
    for b in range(bins):
        sel = which == b
        if np.any(sel):
            j = np.argmax(logn[sel])
            xs.append(logd[sel][j])
            ys.append(logn[sel][j])
    if len(xs) < 2:
        return math.nan, math.nan
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(intercept)


class HolderFit(NamedTuple):
    beta: float
    const: float
    pairs: int


def holder_estimate(c, sample_pairs=200, rng=None, k=2, dist_range=(1e-4, 1e-1), bins=12):
    """Fit ``log(|A(x)-A(y)| + |A(x)^-1 - A(y)^-1|)`` against ``log dist(x, y)``.

    Pairs are random with log-uniform distances in ``dist_range``; the fit is
    a least-squares line through the per-bin maxima.

    Returns ``HolderFit(beta, const)`` with ``const = exp(intercept)``.  A
    cocycle whose numerator vanishes on every pair is reported as
    ``beta = inf, const = 0`` (constant).
    """
    if sample_pairs < 100:
        raise ValueError("sample_pairs must be at least 100")
    rng = np.random.default_rng(rng)
    x = rng.random((sample_pairs, k))
    direction = rng.normal(size=(sample_pairs, k))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = np.exp(rng.uniform(np.log(dist_range[0]), np.log(dist_range[1]), sample_pairs))
    y = np.mod(x + r[:, None] * direction, 1.0)
    num = np.linalg.norm(c.values(x) - c.values(y), ord=2, axis=(1, 2)) \
        + np.linalg.norm(c.inverse_values(x) - c.inverse_values(y), ord=2, axis=(1, 2))
    dist = bd.torus_dist(x, y)
    scale = np.max(np.linalg.norm(c.values(x), ord=2, axis=(1, 2)))
    keep = num > 1e-13 * scale
    if np.count_nonzero(keep) < 10:
        return HolderFit(math.inf, 0.0, int(np.count_nonzero(keep)))
    slope, intercept = envelope_fit(np.log(dist[keep]), np.log(num[keep]), bins)
    return HolderFit(float(slope), float(math.exp(intercept)), int(np.count_nonzero(keep)))


# ---------------------------------------------------------------------------
# construction from plain dicts


def cocycle_from_dict(spec, f):
    """Build a cocycle from a config mapping (see README for the keys)."""
    kind = spec.get("kind")

    def scalar(key, default=None):
        if key not in spec:
            if default is None:
                raise KeyError(key)
            return default
        val = spec[key]
        if isinstance(val, dict) and val.get("type") == "coboundary":
            return CoboundaryField(field_from_dict(val["phi"]), f)
        return field_from_dict(val)

    if kind == "constant":
        return ConstantCocycle(spec["matrix"])
    if kind == "identity":
        return identity_cocycle(spec.get("d", 2))
    if kind == "derivative":
        return derivative_cocycle(f)
    if kind == "conformal":
        return ConformalCocycle(scalar("lam", TrigField(1.0)), scalar("theta", TrigField(0.0)))
    if kind == "conjugated_conformal":
        return build_conjugated_conformal(field_from_dict(spec["C"]), scalar("lam", TrigField(1.0)),
                                          scalar("theta", TrigField(0.0)), f)
    if kind == "shear_rotation":
        return build_shear_rotation(f, spec["eps"], spec["seg_len"], spec["max_period"],
                                    seed=spec.get("seed"), d=spec.get("d", 3))
    if kind == "grid":
        from .fields import GridField
        return GridCocycle(GridField(np.asarray(spec["values"]), f.k))
    raise ValueError(f"unknown cocycle kind {kind!r}")
