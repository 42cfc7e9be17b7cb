"""Invariant conformal structures, holonomies, adapted metrics and the Livsic equation.

The recovery pipeline pulls the standard structure back along orbit segments,
``S_k(x) = {(F^n_x)^* tau0(f^n x) : |n| <= k}``, and takes the circumcenter of
each set.  Pulling back commutes with taking circumcenters, so the limit is an
invariant structure whenever the sets stay bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from . import base_dynamics as bd
from . import conformal_geometry as cg
from .cocycles import envelope_fit, image_points, walk
from .errors import (
    ConvergenceError,
    CoverageError,
    PreconditionError,
    RecoveryRefused,
)
from .fields import GridField
from .spectral import distortion_profile

DEFAULT_DEPTH = 30
DEFAULT_K_BOUND = 50.0
DEFAULT_PROBE_HORIZON = 200


def _as_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    return pts


def _tau0_values(tau0, points, d):
    """Reference structure at ``points``: identity, a constant matrix or a field."""
    n = points.shape[0]
    if tau0 is None:
        return np.broadcast_to(np.eye(d), (n, d, d)).copy()
    if callable(tau0):
        return cg.normalize(tau0(points))
    return np.broadcast_to(cg.normalize(np.asarray(tau0, dtype=float)), (n, d, d)).copy()


def _rescale(P):
    return P / np.max(np.abs(P), axis=(1, 2))[:, None, None]


# ---------------------------------------------------------------------------
# orbit structure sets and recovery


def orbit_structure_sets(c, f, points, depth, tau0=None):
    """Orbit structure sets for a batch of points, shape (N, 2*depth+1, d, d).

    Entry ``[i, depth + n]`` is ``(F^n_x)^* tau0(f^n x)`` for ``x = points[i]``.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    X = _as_points(points)
    N, d = X.shape[0], c.d
    out = np.empty((N, 2 * depth + 1, d, d))
    out[:, depth] = _tau0_values(tau0, X, d)
    P = np.broadcast_to(np.eye(d), (N, d, d)).copy()
    for n, pts in enumerate(walk(f, X, depth)):
        if n == 0:
            prev = pts
            continue
        P = _rescale(c.values(prev) @ P)
        out[:, depth + n] = cg.pullback(P, _tau0_values(tau0, pts, d))
        prev = pts
    P = np.broadcast_to(np.eye(d), (N, d, d)).copy()
    for n, pts in enumerate(walk(f, X, -depth)):
        if n == 0:
            continue
        P = _rescale(c.inverse_values(pts) @ P)
        out[:, depth - n] = cg.pullback(P, _tau0_values(tau0, pts, d))
    return out


class OrbitSet(NamedTuple):
    structures: np.ndarray
    diameter: float


def orbit_structure_set(c, f, x, depth, tau0=None):
    """Orbit structure set of one point together with its diameter."""
    S = orbit_structure_sets(c, f, x, depth, tau0)[0]
    i, j = np.triu_indices(len(S), 1)
    diam = float(np.max(cg.dist(S[i], S[j]))) if len(i) else 0.0
    return OrbitSet(S, diam)


def structures_at(c, f, points, depth, tau0=None, tol=cg.DEFAULT_TOL, method="auto"):
    """Circumcenters of orbit structure sets: the recovered structure at ``points``."""
    sets = orbit_structure_sets(c, f, points, depth, tau0)
    centers = np.empty((sets.shape[0], c.d, c.d))
    radii = np.empty(sets.shape[0])
    for i, S in enumerate(sets):
        cc = cg.circumcenter(S, tol=tol, method=method)
        centers[i] = cc.center
        radii[i] = cc.radius
    return centers, radii


@dataclass
class StructureField:
    """Structures on the uniform grid ``{i / resolution}^k``."""

    grid: np.ndarray
    values: np.ndarray
    resolution: int
    depth: int
    tol: float
    covering_radius: float

    def interpolate(self, points):
        """Multilinear interpolation of the matrix entries, renormalized to det 1."""
        k = self.grid.shape[1]
        shaped = self.values.reshape((self.resolution,) * k + self.values.shape[1:])
        return cg.normalize(GridField(shaped, k)(_as_points(points)))


@dataclass
class RecoveryReport:
    field: StructureField
    invariance_residual: float
    invariance_residual_interpolated: float
    residual_samples: int
    holder_fit: tuple
    radius_stats: dict
    center_movement: float
    radii: np.ndarray = None
    tau0: object = None
    cocycle: object = None
    base: object = None


def _probe_refusal(c, f, probes, horizon, bound):
    """Raise :class:`RecoveryRefused` at the first (smallest |n|) violation."""
    log_bound = math.log(bound)
    for sign in (1, -1):
        prof = distortion_profile(c, f, probes, sign * horizon)
        over = np.argwhere(prof > log_bound)
        if len(over):
            n, i = over[np.argmin(over[:, 0])]
            raise RecoveryRefused(probes[i], int(sign * n), float(np.exp(prof[n, i])), bound)


def field_holder_fit(grid, values, resolution, rng, pairs=4000, bins=10):
    """Hoelder fit of a structure field from grid pairs ``h <= dist <= 10 h``."""
    h = 1.0 / resolution
    N, k = grid.shape
    idx = rng.integers(0, N, pairs)
    # offsets in grid steps with length in [1, 10]
    off = rng.integers(-10, 11, size=(pairs, k))
    length = np.linalg.norm(off, axis=1)
    keep = (length >= 1) & (length <= 10)
    idx, off = idx[keep], off[keep]
    multi = np.array(np.unravel_index(idx, (resolution,) * k)).T
    other = np.ravel_multi_index(tuple(((multi + off) % resolution).T), (resolution,) * k)
    dx = bd.torus_dist(grid[idx], grid[other])
    dv = cg.dist(values[idx], values[other])
    good = dv > 1e-13
    if np.count_nonzero(good) < 10:
        return (math.inf, 0.0)
    slope, intercept = envelope_fit(np.log(dx[good]), np.log(dv[good]), bins)
    return (slope, math.exp(intercept))


def recover_invariant_structure(c, f, resolution=64, depth=DEFAULT_DEPTH, tol=cg.DEFAULT_TOL,
                                K_bound=DEFAULT_K_BOUND, probe_horizon=DEFAULT_PROBE_HORIZON,
                                residual_samples=256, tau0=None, seed=0, probe_points=None):
    """Recover an invariant conformal structure on a grid by orbit circumcenters.

    Parameters
    ----------
    c, f : cocycle and base map
    resolution : int
        Grid resolution per axis.
    depth : int
        Orbit sets use iterates ``|n| <= depth``.
    K_bound : float
        Refuse (orbit sets unbounded) if the sampled distortion exceeds this.
    probe_horizon : int
        Distortion is probed for ``|n| <= max(depth, probe_horizon)`` on the
        grid and along the dense seed orbit.
    residual_samples : int
        Grid points where the invariance residual is computed with the
        structure at ``f x`` recovered directly rather than interpolated.

    Raises
    ------
    RecoveryRefused
        With the witness ``(x, n, K)``.
    """
    rng = np.random.default_rng(seed)
    grid = bd.grid_points(resolution, f.k)
    probes = grid if probe_points is None else _as_points(probe_points)
    probes = np.vstack([bd.dense_seed(f.k)[None, :], probes])
    _probe_refusal(c, f, probes, max(depth, probe_horizon), K_bound)

    values, radii = structures_at(c, f, grid, depth, tau0, tol)
    half, _ = structures_at(c, f, grid, max(depth // 2, 1), tau0, tol)
    movement = float(np.max(cg.dist(values, half)))
    sfield = StructureField(grid, values, resolution, depth, tol,
                            bd.covering_radius(grid, resolution=2 * resolution))

    A = c.values(grid)
    fx = image_points(f, grid)
    interp = sfield.interpolate(fx)
    res_interp = float(np.max(cg.dist(values, cg.pullback(A, interp))))
    m = min(residual_samples, grid.shape[0])
    sub = np.sort(rng.choice(grid.shape[0], m, replace=False))
    direct, _ = structures_at(c, f, fx[sub], depth, tau0, tol)
    res_exact = float(np.max(cg.dist(values[sub], cg.pullback(A[sub], direct))))

    fit = field_holder_fit(grid, values, resolution, rng)
    stats = {"min": float(np.min(radii)), "mean": float(np.mean(radii)),
             "max": float(np.max(radii))}
    return RecoveryReport(sfield, res_exact, res_interp, m, fit, stats, movement, radii,
                          tau0, c, f)


# ---------------------------------------------------------------------------
# holonomies


@dataclass
class Holonomy:
    H: np.ndarray
    trace: list                  # |H_n - Id| for n = 0, 1, ...
    increments: list             # |H_{n+1} - H_n|
    steps: int
    delta: float
    offset: np.ndarray

    @property
    def distance_to_identity(self):
        return float(np.linalg.norm(self.H - np.eye(self.H.shape[0]), 2))


def holonomy_limit(c, f, x, y=None, delta=None, n_max=200, tol=1e-13, side="stable", min_steps=3):
    """Limit of ``(F^n_x)^{-1} F^n_y`` for ``y`` on the local stable leaf of ``x``.

    With ``side="unstable"`` the same limit is taken for ``F^{-1}`` along the
    unstable leaf.  Either ``y`` or ``delta`` must be given; a given ``y`` is
    projected onto the leaf through ``x``.  The leaf orbit of ``y`` is
    computed as ``f^n x + A^n (y - x)``.

    Raises
    ------
    ConvergenceError
        When increments are not below ``tol`` within ``n_max`` steps; the
        trace is attached.
    """
    x = bd.canonical(np.asarray(x, dtype=float))
    stable = side == "stable"
    if side not in ("stable", "unstable"):
        raise ValueError("side must be 'stable' or 'unstable'")
    if y is None:
        if delta is None:
            raise ValueError("give y or delta")
        y = (bd.stable_neighbor if stable else bd.unstable_neighbor)(f, x, delta)
    v = bd.leaf_offset(f, x, y)
    v = (f.stable_projector if stable else f.unstable_projector) @ v
    delta = float(np.linalg.norm(v))
    sign = 1 if stable else -1
    xs = bd.orbit(f, x, sign * (n_max + 1))
    ys = np.mod(xs + bd.propagate_displacement(f, v, sign * (n_max + 1), side), 1.0)
    d = c.d
    if stable:
        Ax, Ay = c.values(xs[:-1]), c.values(ys[:-1])
        Axi = c.inverse_values(xs[:-1])
    else:
        Ax, Ay = c.inverse_values(xs[1:]), c.inverse_values(ys[1:])
        Axi = c.values(xs[1:])
    I = np.eye(d)
    H = I.copy()
    F = I.copy()                 # rescaled F^n_x (conjugation is scale invariant)
    trace = [0.0]
    increments = []
    for n in range(n_max):
        if np.array_equal(Ax[n], Ay[n]):
            H_new = H            # identical factors: exact, no rounding
        else:
            try:
                H_new = np.linalg.solve(F, (Axi[n] @ Ay[n] @ F) @ H)
            except np.linalg.LinAlgError:
                H_new = np.full_like(H, np.nan)
            if not np.all(np.isfinite(H_new)) or np.linalg.cond(F) > 1e14:
                raise ConvergenceError(
                    f"F^{n}_x is numerically singular after {n} steps; the holonomy is not computable",
                    last=H, gap=math.inf if not increments else increments[-1], trace=trace)
        inc = float(np.linalg.norm(H_new - H, 2))
        H = H_new
        F = Ax[n] @ F
        F /= np.max(np.abs(F))
        trace.append(float(np.linalg.norm(H - I, 2)))
        increments.append(inc)
        if n + 1 >= min_steps and inc < tol:
            return Holonomy(H, trace, increments, n + 1, delta, v)
    raise ConvergenceError(f"holonomy increments still {increments[-1]:.3g} after {n_max} steps",
                           last=H, gap=increments[-1], trace=trace)


def decay_rate(increments, floor=1e-14):
    """Fitted exponential rate of holonomy increments (log-slope per step)."""
    inc = np.asarray(increments, dtype=float)
    n = np.arange(len(inc))
    keep = inc > floor
    if np.count_nonzero(keep) < 3:
        return -math.inf
    slope, _ = np.polyfit(n[keep], np.log(inc[keep]), 1)
    return float(slope)


def product_norm_bound(c, f, x, y, window, eps):
    """Ratios ``|(F^i_x)^{-1}| |F^i_y| e^{-3 i eps}`` for i = 0..window-1 along a stable pair."""
    v = f.stable_projector @ bd.leaf_offset(f, x, y)
    xs = bd.orbit(f, np.asarray(x, dtype=float), window)
    ys = np.mod(xs + bd.propagate_displacement(f, v, window, "stable"), 1.0)
    Ax, Ay = c.values(xs[:-1]), c.values(ys[:-1])
    d = c.d
    Px, Py = np.eye(d), np.eye(d)
    out = np.empty(window)
    for i in range(window):
        out[i] = (np.linalg.norm(np.linalg.inv(Px), 2) * np.linalg.norm(Py, 2)
                  * math.exp(-3 * i * eps))
        Px = Ax[i] @ Px
        Py = Ay[i] @ Py
    return out


# ---------------------------------------------------------------------------
# adapted metrics


@dataclass
class AdaptedMetrics:
    ks: np.ndarray
    grams: np.ndarray            # Gram matrix of the metric at x_k
    ratios: np.ndarray           # one-step distortion in the adapted metrics, k -> k+1
    eps: float
    truncation: int
    C_eps: float
    M_eps: float
    tail_bound: float
    doubling_gap: float
    lower_ok: bool
    upper_ok: bool
    ratio_ok: bool

    @property
    def tail_certified(self):
        return self.doubling_gap <= self.tail_bound

    @property
    def passed(self):
        return self.lower_ok and self.upper_ok and self.ratio_ok and self.tail_certified


def _is_rational(x):
    return isinstance(x, (tuple, list)) and any(isinstance(v, Fraction) for v in x)


def _adapted_grams(c, f, x, eps, M, window, u):
    """Truncated series Gram matrices at ``x_k`` for ``|k| <= window``."""
    d = c.d
    ks = np.arange(-window, window + 1)
    span = window + M
    fwd = bd.orbit(f, x, span)
    bwd = bd.orbit(f, x, -span)
    pts = np.concatenate([bwd[::-1], fwd[1:]])          # pts[j] = x_{j - span}
    A = c.values(pts)
    Ainv = c.inverse_values(pts)
    # unit vectors u_k along the orbit
    us = np.empty((len(pts), d))
    us[span] = u / np.linalg.norm(u)
    for j in range(span, len(pts) - 1):
        w = A[j] @ us[j]
        us[j + 1] = w / np.linalg.norm(w)
    for j in range(span, 0, -1):
        w = Ainv[j - 1] @ us[j]
        us[j - 1] = w / np.linalg.norm(w)
    base = ks + span
    W = len(ks)
    G = np.broadcast_to(np.eye(d), (W, d, d)).copy()
    weights = np.exp(-3 * eps * np.arange(M + 1))
    for direction in (1, -1):
        P = np.broadcast_to(np.eye(d), (W, d, d)).copy()
        p = us[base].copy()
        for m in range(1, M + 1):
            if direction == 1:
                j = base + m - 1
                P = A[j] @ P
                p = np.einsum("wij,wj->wi", A[j], p)
            else:
                j = base - m
                P = Ainv[j] @ P
                p = np.einsum("wij,wj->wi", Ainv[j], p)
            s = np.linalg.norm(p, axis=1)
            P /= s[:, None, None]
            p /= s[:, None]
            G += weights[m] * np.swapaxes(P, 1, 2) @ P
    return ks, 0.5 * (G + np.swapaxes(G, 1, 2)), A[base]


def adapted_metric(c, f, x, eps, M, window=5, C_eps=None, u=None, C_eps_cap=1e6):
    """Adapted metrics along the orbit of a non-periodic point.

    The Gram matrix at ``x_k`` is the truncated series
    ``sum_{|m| <= M} F^m^T F^m / (|F^m u_k|^2 e^{3|m| eps})`` with
    ``u_k = F^k u / |F^k u|``.  Checks ``|v| <= |v|_k <= M_eps |v|``, the
    one-step distortion bound ``e^{3 eps}`` and certifies the truncation by
    comparing with ``2 M`` terms.
    """
    if _is_rational(x):
        raise PreconditionError("adapted metrics need a non-periodic point; got exact rational coordinates")
    x = bd.canonical(np.asarray(x, dtype=float))
    d = c.d
    u = np.eye(d)[0] if u is None else np.asarray(u, dtype=float)
    # empirical C_eps over the doubled window
    probe = bd.orbit(f, x, window) if window else x[None]
    probe = np.vstack([probe, bd.orbit(f, x, -window)[1:]])
    logk = np.maximum(distortion_profile(c, f, probe, 2 * M).max(axis=1),
                      distortion_profile(c, f, probe, -2 * M).max(axis=1))
    ns = np.arange(2 * M + 1)
    empirical = float(np.exp(np.max(logk - eps * ns)))
    if C_eps is None:
        if empirical > C_eps_cap:
            n = int(np.argmax(logk - eps * ns))
            raise PreconditionError(
                f"K_F(x, {n}) = {math.exp(logk[n]):.6g} is not bounded by C e^(eps n) with C <= {C_eps_cap:g}")
        C_eps = empirical
    elif empirical > C_eps * (1 + 1e-9):
        n = int(np.argmax(logk - eps * ns))
        raise PreconditionError(
            f"K_F(x, {n}) = {math.exp(logk[n]):.6g} exceeds C_eps e^(eps n) = {C_eps * math.exp(eps * n):.6g}")
    q = math.exp(-eps)
    M_eps = C_eps * math.sqrt((1 + q) / (1 - q))
    tail = 2 * C_eps ** 2 * math.exp(-(M + 1) * eps) / (1 - q)

    ks, G, A = _adapted_grams(c, f, x, eps, M, window, u)
    _, G2, _ = _adapted_grams(c, f, x, eps, 2 * M, window, u)
    gap = float(np.max(np.linalg.eigvalsh(G2 - G)))

    # one-step ratio: sqrt(max/min generalized eigenvalue of A^T G_{k+1} A vs G_k)
    ratios = np.empty(len(ks) - 1)
    for i in range(len(ks) - 1):
        L = np.linalg.cholesky(G[i])
        Li = np.linalg.inv(L)
        T = Li @ A[i].T @ G[i + 1] @ A[i] @ Li.T
        w = np.linalg.eigvalsh(0.5 * (T + T.T))
        ratios[i] = math.sqrt(w[-1] / w[0])
    lam = np.linalg.eigvalsh(G)
    lower_ok = bool(np.all(lam[:, 0] >= 1 - 1e-12))
    upper_ok = bool(np.all(lam[:, -1] <= M_eps ** 2 * (1 + 1e-12)))
    ratio_ok = bool(np.all(ratios <= math.exp(3 * eps) * (1 + tail + 1e-12)))
    return AdaptedMetrics(ks, G, ratios, eps, M, C_eps, M_eps, tail, gap, lower_ok, upper_ok, ratio_ok)


# ---------------------------------------------------------------------------
# Livsic equation


@dataclass
class Obstruction:
    """A periodic orbit whose product of ``a`` is not 1."""

    orbit: bd.PeriodicOrbit
    product: float

    @property
    def log_product(self):
        return math.log(self.product)


@dataclass
class LivsicSolution:
    grid: np.ndarray
    phi: np.ndarray              # phi on the grid
    residual: float              # sup |log a(x) - log phi(fx) + log phi(x)| on the grid
    orbit_length: int
    coverage: float              # largest distance from a grid point to the seed orbit
    obstruction: Obstruction = None
    extension: object = None     # callable giving phi at arbitrary points

    @property
    def solved(self):
        return self.obstruction is None


def periodic_obstruction(a, f, max_period, tol=1e-9):
    """First periodic orbit with ``|log prod a| > tol``, or ``None``."""
    for orb in bd.periodic_orbits_up_to(f, max_period):
        s = float(np.sum(np.log(a(orb.points()))))
        if abs(s) > tol:
            return Obstruction(orb, math.exp(s))
    return None


class _OrbitExtension:
    """Values known along an orbit, extended to the torus by local linear fits."""

    def __init__(self, points, values, neighbors, radius, method):
        self.points = points
        self.values = values
        self.tree = cKDTree(points, boxsize=1.0)
        self.neighbors = neighbors
        self.radius = radius
        self.method = method

    def __call__(self, query, check=True):
        query = np.mod(_as_points(query), 1.0)
        if self.method == "nearest":
            dist, idx = self.tree.query(query)
            dist = dist[:, None]
            out = self.values[idx]
        else:
            dist, idx = self.tree.query(query, k=self.neighbors)
            disp = np.mod(self.points[idx] - query[:, None, :] + 0.5, 1.0) - 0.5
            k = query.shape[1]
            design = np.concatenate([np.ones(idx.shape + (1,)), disp], axis=2)
            lhs = np.swapaxes(design, 1, 2) @ design + 1e-14 * np.eye(k + 1)
            rhs = np.einsum("nji,nj->ni", design, self.values[idx])
            out = np.linalg.solve(lhs, rhs[..., None])[:, 0, 0]
        if check:
            worst = int(np.argmax(dist[:, 0]))
            if dist[worst, 0] > self.radius:
                raise CoverageError(query[worst], float(dist[worst, 0]), self.radius)
        return out


def livsic_solve(a, f, T=10**6, resolution=128, max_period=8, obstruction_tol=1e-9,
                 seed=None, extension="local_linear", neighbors=10, coverage_radius=None):
    """Solve ``a(x) = phi(f x) / phi(x)`` on a grid, or return an obstruction.

    Periodic orbits up to ``max_period`` are checked first.  Otherwise
    ``log phi`` is the Birkhoff sum of ``log a`` along ``T`` iterates of the
    dense seed, extended to the grid by a local linear fit over the nearest
    orbit points (``extension="nearest"`` assigns the nearest orbit value).
    The grid residual certifies the candidate.

    Parameters
    ----------
    a : callable or ndarray
        Positive field on points (N, k), or values on the grid.
    """
    if not callable(a):
        a = GridField(np.asarray(a, dtype=float), f.k)
    grid = bd.grid_points(resolution, f.k)
    obstruction = periodic_obstruction(a, f, max_period, obstruction_tol)
    if obstruction is not None:
        return LivsicSolution(grid, None, math.nan, T, math.nan, obstruction)
    z0 = bd.dense_seed(f.k) if seed is None else bd.canonical(seed)
    pts = bd.orbit(f, z0, T)
    loga = np.empty(T)
    chunk = 200_000
    for s in range(0, T, chunk):
        loga[s:s + chunk] = np.log(a(pts[s:min(s + chunk, T)]))
    logphi = np.concatenate([[0.0], np.cumsum(loga)])
    if coverage_radius is None:
        coverage_radius = 10.0 / math.sqrt(T)
    ext = _OrbitExtension(pts, logphi, neighbors, coverage_radius, extension)
    lg = ext(grid)
    lfg = ext(image_points(f, grid))
    residual = float(np.max(np.abs(np.log(a(grid)) - lfg + lg)))
    coverage = float(np.max(ext.tree.query(grid)[0]))

    def phi_at(points):
        return np.exp(ext(points, check=False))

    return LivsicSolution(grid, np.exp(lg), residual, T, coverage, None, phi_at)


# ---------------------------------------------------------------------------
# renormalization


def operator_norm(A, G1, G2):
    """Norm of ``A`` from ``(R^d, G1)`` to ``(R^d, G2)`` (batched)."""
    L = np.linalg.cholesky(G1)
    Li = np.linalg.inv(L)
    T = Li @ np.swapaxes(A, -1, -2) @ G2 @ A @ np.swapaxes(Li, -1, -2)
    w = np.linalg.eigvalsh(0.5 * (T + np.swapaxes(T, -1, -2)))
    return np.sqrt(w[..., -1])


def conformal_stretch(c):
    """``a(x) = |det A(x)|^{1/d}``, the stretch of a cocycle that is conformal for det-1 structures."""

    def a(points):
        return np.abs(np.linalg.det(c.values(_as_points(points)))) ** (1.0 / c.d)

    return a


@dataclass
class Renormalization:
    metric: np.ndarray           # Gram matrices tau(x) / phi(x)^2 on the grid
    phi: np.ndarray
    isometry_residual: float
    conformality_defect: float   # sup |log(|F_x|_tau / a(x))| on the grid
    livsic: LivsicSolution
    obstruction: Obstruction = None

    @property
    def isometric(self):
        return self.obstruction is None


def renormalize_to_isometry(report, T=10**6, max_period=8, obstruction_tol=1e-9, seed=None,
                            extension="local_linear"):
    """Rescale a recovered conformal structure into a metric preserved by the cocycle.

    Solves ``phi(f x) = a(x) phi(x)`` for the stretch ``a(x) = |det A(x)|^{1/d}``
    and returns ``g~ = tau / phi^2`` with the grid residual
    ``sup |(|F_x|_{g~(x) -> g~(f x)}) - 1|``.  The structure at ``f x`` is
    recovered directly at every grid point.  A periodic obstruction is a valid
    outcome: the cocycle is conformal but not isometric.
    """
    c, f = report.cocycle, report.base
    sfield = report.field
    grid = sfield.grid
    a = conformal_stretch(c)
    sol = livsic_solve(a, f, T=T, resolution=sfield.resolution, max_period=max_period,
                       obstruction_tol=obstruction_tol, seed=seed, extension=extension)
    A = c.values(grid)
    fx = image_points(f, grid)
    tau_fx, _ = structures_at(c, f, fx, sfield.depth, report.tau0, sfield.tol)
    norm_tau = operator_norm(A, sfield.values, tau_fx)
    defect = float(np.max(np.abs(np.log(norm_tau / a(grid)))))
    if not sol.solved:
        return Renormalization(None, None, math.nan, defect, sol, sol.obstruction)
    phi = sol.phi
    phi_fx = sol.extension(fx)
    metric = sfield.values / (phi ** 2)[:, None, None]
    residual = float(np.max(np.abs(norm_tau * phi / phi_fx - 1.0)))
    return Renormalization(metric, phi, residual, defect, sol)
