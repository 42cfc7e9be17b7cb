"""Distortion, Lyapunov exponents and periodic data of cocycles.

Long products are never formed naively: forward products and inverse products
are renormalized every ``stride`` steps with their log-scales accumulated, and
Lyapunov exponents come from QR re-orthogonalization.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import base_dynamics as bd
from .cocycles import compose, walk
from .errors import PreconditionError

DEFAULT_STRIDE = 10
GRASSMANN_CONSTANT = math.pi / 2


def _factor_pairs(c, f, X, n):
    """Yield ``(M_i, M_i^{-1})`` batches whose ordered product is ``F^n``."""
    if n > 0:
        for pts in walk(f, X, n - 1):
            yield c.values(pts), c.inverse_values(pts)
    elif n < 0:
        for i, pts in enumerate(walk(f, X, n)):
            if i:
                yield c.inverse_values(pts), c.values(pts)


def _log_norm2(P):
    return np.log(np.linalg.norm(P, ord=2, axis=(-2, -1)))


def log_distortion(c, f, x, n, stride=DEFAULT_STRIDE):
    """``log K_F(x, n) = log |F^n_x| + log |(F^n_x)^{-1}|`` computed stably.

    ``x`` may be a single point (k,) or a batch (N, k).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(-1, f.k)
    N, d = X.shape[0], c.d
    P = np.broadcast_to(np.eye(d), (N, d, d)).copy()
    Q = P.copy()
    sP = np.zeros(N)
    sQ = np.zeros(N)
    for i, (M, Minv) in enumerate(_factor_pairs(c, f, X, n), start=1):
        P = M @ P
        Q = Q @ Minv
        if i % stride == 0:
            a = np.max(np.abs(P), axis=(1, 2))
            b = np.max(np.abs(Q), axis=(1, 2))
            P /= a[:, None, None]
            Q /= b[:, None, None]
            sP += np.log(a)
            sQ += np.log(b)
    out = _log_norm2(P) + sP + _log_norm2(Q) + sQ
    out = np.maximum(out, 0.0)
    return float(out[0]) if single else out


def distortion_profile(c, f, X, n, stride=DEFAULT_STRIDE):
    """``log K_F(x, i)`` for i = 0..n (or 0..-n), shape (|n|+1, N)."""
    X = np.asarray(X, dtype=float).reshape(-1, f.k)
    N, d = X.shape[0], c.d
    P = np.broadcast_to(np.eye(d), (N, d, d)).copy()
    Q = P.copy()
    sP = np.zeros(N)
    sQ = np.zeros(N)
    out = np.zeros((abs(n) + 1, N))
    for i, (M, Minv) in enumerate(_factor_pairs(c, f, X, n), start=1):
        P = M @ P
        Q = Q @ Minv
        out[i] = _log_norm2(P) + sP + _log_norm2(Q) + sQ
        if i % stride == 0:
            a = np.max(np.abs(P), axis=(1, 2))
            b = np.max(np.abs(Q), axis=(1, 2))
            P /= a[:, None, None]
            Q /= b[:, None, None]
            sP += np.log(a)
            sQ += np.log(b)
    return np.maximum(out, 0.0)


def qc_distortion(c, f, x, n, stride=DEFAULT_STRIDE):
    """Quasiconformal distortion ``K_F(x, n) = |F^n_x| |(F^n_x)^{-1}|`` (>= 1)."""
    return np.exp(log_distortion(c, f, x, n, stride))


def matrix_distortion(A):
    """``sigma_max / sigma_min`` of a matrix (or a batch)."""
    s = np.linalg.svd(A, compute_uv=False)
    return s[..., 0] / s[..., -1]


# ---------------------------------------------------------------------------
# Lyapunov exponents


@dataclass
class LyapunovExtremes:
    lambda_plus: float
    lambda_minus: float
    orbit_length: int
    convergence_trace: list = field(default_factory=list)
    spectrum: np.ndarray = None


def lyapunov_extremes(c, f, x, T, stride=DEFAULT_STRIDE, chunk=20_000, trace_points=100):
    """Extreme Lyapunov exponents along the orbit of ``x`` of length ``T``.

    Uses QR re-orthogonalization every ``stride`` steps; the trace records
    ``(n, lambda_plus, lambda_minus)`` at roughly ``trace_points`` checkpoints.
    """
    if T < 100:
        raise ValueError("T must be at least 100")
    d = c.d
    Qm = np.eye(d)
    logs = np.zeros(d)
    trace = []
    every = max(stride, (T // trace_points) // stride * stride)
    start = bd.to_fixed(np.asarray(x, dtype=float))
    done = 0
    Y = Qm
    while done < T:
        m = min(chunk, T - done)
        pts = bd.from_fixed(bd.orbit_fixed(f, start, m))
        start = bd.to_fixed(pts[-1])
        mats = c.values(pts[:-1])
        for j in range(m):
            Y = mats[j] @ Y
            step = done + j + 1
            if step % stride == 0 or step == T:
                Qm, R = np.linalg.qr(Y)
                logs += np.log(np.abs(np.diag(R)))
                Y = Qm
                if step % every == 0 or step == T:
                    spec = logs / step
                    trace.append((step, float(spec.max()), float(spec.min())))
        done += m
    spectrum = np.sort(logs / T)[::-1]
    return LyapunovExtremes(float(spectrum[0]), float(spectrum[-1]), T, trace, spectrum)


# ---------------------------------------------------------------------------
# periodic data


@dataclass
class PeriodicDatum:
    orbit: bd.PeriodicOrbit
    return_map: np.ndarray
    eigenvalues: np.ndarray
    diagonalizable: str          # "yes", "no" or "indeterminate"
    eigvec_condition: float
    separation: float            # smallest gap between distinct eigenvalues
    K_p: float
    norm_max: float
    equal_moduli: bool
    unit_moduli: bool

    @property
    def exponents(self):
        """Lyapunov exponents at the periodic point, ``log|eig| / period``."""
        return np.sort(np.log(np.abs(self.eigenvalues)))[::-1] / self.orbit.period

    @property
    def checklist_pass(self):
        return self.diagonalizable == "yes" and self.equal_moduli


def diagonalizability(M, sep_tol=1e-6, cond_yes=1e6, cond_no=1e10):
    """Three-valued diagonalizability certificate.

    ``yes``: eigenvalues separated by ``sep_tol`` (relative) or eigenvector
    matrix condition ``<= cond_yes``.  ``no``: eigenvector condition
    ``>= cond_no`` and some eigenvalue cluster has geometric multiplicity
    below its size.  Otherwise ``indeterminate``.
    """
    w, V = np.linalg.eig(M)
    scale = max(1.0, float(np.max(np.abs(w))))
    d = len(w)
    gaps = [abs(w[i] - w[j]) for i in range(d) for j in range(i + 1, d)]
    sep = min(gaps) / scale if gaps else math.inf
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(V))
    if not np.isfinite(cond):
        cond = math.inf
    if sep >= sep_tol or cond <= cond_yes:
        return "yes", cond, sep, w
    if cond >= cond_no:
        for i in range(d):
            cluster = np.abs(w - w[i]) <= sep_tol * scale
            size = int(np.count_nonzero(cluster))
            mu = np.mean(w[cluster])
            s = np.linalg.svd(M - mu * np.eye(d), compute_uv=False)
            nullity = int(np.count_nonzero(s <= math.sqrt(sep_tol) * scale))
            if nullity < size:
                return "no", cond, sep, w
    return "indeterminate", cond, sep, w


def return_map(c, orb):
    """``F^n_p`` along the exact orbit points of a periodic orbit."""
    pts = orb.points()
    mats = c.values(pts)
    P = np.eye(c.d)
    for M in mats:
        P = M @ P
    return P


def periodic_datum(c, orb, moduli_tol=1e-8):
    P = return_map(c, orb)
    verdict, cond, sep, w = diagonalizability(P)
    s = np.linalg.svd(P, compute_uv=False)
    mod = np.abs(w)
    return PeriodicDatum(
        orbit=orb,
        return_map=P,
        eigenvalues=w,
        diagonalizable=verdict,
        eigvec_condition=cond,
        separation=sep,
        K_p=float(s[0] / s[-1]),
        norm_max=float(max(s[0], 1.0 / s[-1])),
        equal_moduli=bool(np.max(mod) - np.min(mod) <= moduli_tol * max(1.0, np.max(mod))),
        unit_moduli=bool(np.max(np.abs(mod - 1.0)) <= moduli_tol),
    )


class PeriodicScan(NamedTuple):
    data: list
    sup_K: float
    sup_norm: float
    checklist_pass: bool


def periodic_scan(c, f, max_period, workers=1, cap=bd.DEFAULT_PERIODIC_CAP, moduli_tol=1e-8):
    """Return-map data for every periodic orbit of period ``<= max_period``.

    ``sup_K`` is the empirical bound on periodic distortion and ``sup_norm``
    the largest ``max(|F^n_p|, |(F^n_p)^{-1}|)``.  ``checklist_pass`` is true
    when every return map is certified diagonalizable with equal-modulus
    eigenvalues.
    """
    orbits = bd.periodic_orbits_up_to(f, max_period, cap=cap)

    def work(orb):
        return periodic_datum(c, orb, moduli_tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            data = list(pool.map(work, orbits))
    else:
        data = [work(o) for o in orbits]
    return PeriodicScan(
        data=data,
        sup_K=max(d.K_p for d in data),
        sup_norm=max(d.norm_max for d in data),
        checklist_pass=all(d.checklist_pass for d in data),
    )


# ---------------------------------------------------------------------------
# growth rate and distortion comparison


class PinchingFit(NamedTuple):
    gamma: float
    intercept: float
    table: np.ndarray            # rows (n, sup_x log K(x, n))
    c_eps: dict                  # eps -> C_eps with K <= C_eps e^{(gamma+eps) n}


def pinching_rate(c, f, samples, n_max, eps_values=(0.01, 0.05, 0.1), stride=DEFAULT_STRIDE):
    """Fit ``sup_x log K_F(x, +-n)`` against ``n`` for ``n = 0..n_max``."""
    if n_max < 20:
        raise ValueError("n_max must be at least 20")
    samples = np.asarray(samples, dtype=float).reshape(-1, f.k)
    sup = np.zeros(n_max + 1)
    for sign in (1, -1):
        profile = distortion_profile(c, f, samples, sign * n_max, stride)
        sup = np.maximum(sup, np.max(profile, axis=1))
    sup = np.maximum(sup, 0.0)
    ns = np.arange(n_max + 1)
    if np.all(sup <= 1e-12):
        gamma, intercept = 0.0, 0.0
    else:
        gamma, intercept = np.polyfit(ns, sup, 1)
        gamma = max(float(gamma), 0.0)
    c_eps = {e: float(np.exp(np.max(sup - (gamma + e) * ns))) for e in eps_values}
    return PinchingFit(float(gamma), float(intercept), np.column_stack([ns, sup]), c_eps)


class DistortionComparison(NamedTuple):
    r: float
    K_A: float
    K_B: float
    lower: float
    upper: float
    passed: bool


def distortion_comparison(A, B, slack=1e-12):
    """Check ``(1-r)/(1+r) <= K(A)/K(B) <= (1+r)/(1-r)`` for ``r`` the smaller
    of ``|A^{-1}B - Id|`` and ``|AB^{-1} - Id|``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    I = np.eye(A.shape[0])
    r = min(np.linalg.norm(np.linalg.solve(A, B) - I, 2),
            np.linalg.norm(A @ np.linalg.inv(B) - I, 2))
    if r >= 1:
        raise PreconditionError(f"r = {r:.6g} must be below 1")
    KA = float(matrix_distortion(A))
    KB = float(matrix_distortion(B))
    lower = (1 - r) / (1 + r)
    upper = (1 + r) / (1 - r)
    ratio = KA / KB
    passed = lower * (1 - slack) <= ratio <= upper * (1 + slack)
    return DistortionComparison(float(r), KA, KB, lower, upper, bool(passed))


def subspace_distance(U, V):
    """Largest principal angle between the column spans of ``U`` and ``V``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if U.shape[0] == 1:
        U = U.T
    if V.shape[0] == 1:
        V = V.T
    return float(np.max(scipy.linalg.subspace_angles(U, V)))


class GrassmannCheck(NamedTuple):
    ratio: float                 # nan when the input subspaces coincide
    K: float
    bound: float
    passed: bool


def grassmann_distortion(c, f, x, n, xi, eta, constant=GRASSMANN_CONSTANT):
    """Ratio ``dist(F xi, F eta) / dist(xi, eta)`` against ``constant * K_F(x, n)``."""
    xi = np.asarray(xi, dtype=float).reshape(c.d, -1)
    eta = np.asarray(eta, dtype=float).reshape(c.d, -1)
    if xi.shape != eta.shape:
        raise ValueError("subspaces must have the same dimension")
    for basis in (xi, eta):
        s = np.linalg.svd(basis, compute_uv=False)
        if s[-1] <= 1e-12 * max(s[0], 1e-300):
            raise ValueError("degenerate subspace basis")
    F = compose(c, f, x, n)
    K = float(matrix_distortion(F))
    before = subspace_distance(xi, eta)
    bound = constant * K
    if before == 0.0:
        return GrassmannCheck(math.nan, K, bound, True)
    after = subspace_distance(F @ xi, F @ eta)
    ratio = after / before
    return GrassmannCheck(ratio, K, bound, bool(ratio <= bound * (1 + 1e-12)))

