"""Hyperbolic toral automorphisms: exact iteration, periodic points, leaves, closing.

Floating-point torus points are handled in 52-bit fixed point: a coordinate
``x`` in [0, 1) is stored as the integer ``round(x * 2**52)`` and iterated with
integer arithmetic modulo ``2**52``.  Because the matrix is integral, this is
the exact orbit of the dyadic point, so forward and backward orbits agree
bit-for-bit and ``apply(x, n + m) == apply(apply(x, n), m)`` holds exactly.
Rational points given as :class:`fractions.Fraction` tuples are iterated in
exact rational arithmetic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .errors import ClosingRefused, HyperbolicityError, SizeCapError

FIXED_BITS = 52
_MOD = 1 << FIXED_BITS
_MASK = _MOD - 1
# int64 matmul stays exact while (row abs-sum) * 2**52 < 2**63
_INT64_ROW_LIMIT = 1 << (63 - FIXED_BITS)

DEFAULT_PERIODIC_CAP = 2_000_000
DEFAULT_DELTA0 = 0.1


# ---------------------------------------------------------------------------
# small exact integer linear algebra


def _int_matmul(A, B):
    return [[sum(a * b for a, b in zip(row, col)) for col in zip(*B)] for row in A]


def _int_matpow(M, n):
    k = len(M)
    result = [[int(i == j) for j in range(k)] for i in range(k)]
    base = [row[:] for row in M]
    while n:
        if n & 1:
            result = _int_matmul(result, base)
        base = _int_matmul(base, base)
        n >>= 1
    return result


def _int_matpow_mod(M, n, mod):
    k = len(M)
    result = [[int(i == j) for j in range(k)] for i in range(k)]
    base = [[v % mod for v in row] for row in M]
    while n:
        if n & 1:
            result = [[v % mod for v in row] for row in _int_matmul(result, base)]
        base = [[v % mod for v in row] for row in _int_matmul(base, base)]
        n >>= 1
    return result


def _frac_inverse(M):
    """Exact inverse of a square rational matrix by Gauss-Jordan."""
    k = len(M)
    aug = [[Fraction(v) for v in row] + [Fraction(int(i == j)) for j in range(k)]
           for i, row in enumerate(M)]
    for col in range(k):
        pivot = next(r for r in range(col, k) if aug[r][col] != 0)
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(k):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [a - factor * b for a, b in zip(aug[r], aug[col])]
    return [row[k:] for row in aug]


def _int_det(M):
    """Exact determinant (Bareiss fraction-free elimination)."""
    A = [list(map(int, row)) for row in M]
    k = len(A)
    sign, prev = 1, 1
    for i in range(k - 1):
        if A[i][i] == 0:
            swap = next((r for r in range(i + 1, k) if A[r][i] != 0), None)
            if swap is None:
                return 0
            A[i], A[swap] = A[swap], A[i]
            sign = -sign
        for r in range(i + 1, k):
            for c in range(i + 1, k):
                A[r][c] = (A[r][c] * A[i][i] - A[r][i] * A[i][c]) // prev
        prev = A[i][i]
    return sign * A[-1][-1]


def _lower_triangular_basis(B):
    """Column operations turning a nonsingular integer matrix into lower-triangular form.

    The columns of the result generate the same lattice as the columns of ``B``,
    with positive diagonal, so ``{m : 0 <= m_i < H_ii}`` is a complete set of
    coset representatives of ``Z^k / B Z^k``.
    """
    H = [list(map(int, row)) for row in B]
    k = len(H)
    for i in range(k):
        for j in range(i + 1, k):
            while H[i][j] != 0:
                q = H[i][i] // H[i][j]
                for r in range(k):
                    H[r][i] -= q * H[r][j]
                for r in range(k):
                    H[r][i], H[r][j] = H[r][j], H[r][i]
        if H[i][i] < 0:
            for r in range(k):
                H[r][i] = -H[r][i]
    return H


# ---------------------------------------------------------------------------
# the automorphism


class ToralAutomorphism:
    """A hyperbolic integer matrix acting on the k-torus.

    Parameters
    ----------
    matrix : array_like of int, shape (k, k)
        Must have ``|det| = 1`` and no eigenvalue of modulus one.

    Attributes
    ----------
    stable_basis, unstable_basis : ndarray
        Orthonormal bases (columns) of the contracting and expanding subspaces.
    kappa : float
        Hyperbolicity exponent; ``min |log|eigenvalue||``.
    anosov_constant : float
        ``C`` with ``|A^n v| <= C e^{-kappa n} |v|`` on the stable subspace
        (and the analogue for ``A^{-n}`` on the unstable one).
    """

    def __init__(self, matrix):
        arr = np.asarray(matrix)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
            raise HyperbolicityError(f"expected a square k x k matrix with k >= 2, got shape {arr.shape}")
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise HyperbolicityError("matrix entries must be integers")
        rows = [[int(v) for v in row] for row in arr.tolist()]
        det = _int_det(rows)
        if abs(det) != 1:
            raise HyperbolicityError(f"|det| = {abs(det)}; the map is not invertible on the torus")
        self.rows = tuple(tuple(r) for r in rows)
        self.k = len(rows)
        self.det = det
        self.inverse_rows = tuple(tuple(int(v) for v in r) for r in _frac_inverse(rows))
        self.matrix = np.array(rows, dtype=np.int64)
        self.inverse = np.array(self.inverse_rows, dtype=np.int64)
        self.matrix.setflags(write=False)
        self.inverse.setflags(write=False)
        self.matrix_f = self.matrix.astype(float)
        self.inverse_f = self.inverse.astype(float)

        eig = np.linalg.eigvals(self.matrix_f)
        moduli = np.abs(eig)
        if np.any(np.abs(moduli - 1.0) < 1e-9):
            raise HyperbolicityError(f"eigenvalue of modulus 1: {eig}")
        self.eigenvalues = eig
        self._setup_splitting()

    def _setup_splitting(self):
        A = self.matrix_f
        T, Z, n_s = scipy.linalg.schur(A, output="real", sort="iuc")
        Us = Z[:, :n_s]
        T2, Z2, n_u = scipy.linalg.schur(A, output="real", sort="ouc")
        Uu = Z2[:, :n_u]
        if n_s == 0 or n_u == 0:
            raise HyperbolicityError("no stable or no unstable directions")
        Us = _sign_normalize(Us)
        Uu = _sign_normalize(Uu)
        self.stable_basis = Us
        self.unstable_basis = Uu
        V = np.hstack([Us, Uu])
        Vinv = np.linalg.inv(V)
        self.stable_projector = Us @ Vinv[:n_s]
        self.unstable_projector = Uu @ Vinv[n_s:]
        moduli = np.abs(self.eigenvalues)
        self.kappa = float(np.min(np.abs(np.log(moduli))))
        self.lambda_stable = float(np.max(moduli[moduli < 1]))
        self.lambda_unstable = float(np.min(moduli[moduli > 1]))

        As = Us.T @ A @ Us
        Au_inv = Uu.T @ self.inverse_f @ Uu
        C = 1.0
        kappa = self.kappa
        for restricted in (As, Au_inv):
            w, vecs = np.linalg.eig(restricted)
            cond = np.linalg.cond(vecs)
            if np.isfinite(cond) and cond < 1e8:
                C = max(C, float(cond))
            else:
                # defective block: polynomial factor, so give up a sliver of kappa
                kappa = min(kappa, 0.99 * self.kappa)
                P = np.eye(restricted.shape[0])
                for n in range(1, 400):
                    P = restricted @ P
                    C = max(C, float(np.linalg.norm(P, 2) * math.exp(kappa * n)))
        self.kappa = kappa
        self.anosov_constant = C

    def __repr__(self):
        return f"ToralAutomorphism({[list(r) for r in self.rows]})"

    def __eq__(self, other):
        return isinstance(other, ToralAutomorphism) and self.rows == other.rows

    def __hash__(self):
        return hash(self.rows)

    @property
    def closing_constant(self):
        """Constant ``c`` of :func:`closing_shadow`, uniform in the period."""
        q = math.exp(-self.kappa)
        proj = np.linalg.norm(self.stable_projector, 2) + np.linalg.norm(self.unstable_projector, 2)
        return float(self.anosov_constant * proj / (1.0 - q))

    def power(self, n):
        """Exact integer matrix ``M^n`` (n may be negative)."""
        base = self.rows if n >= 0 else self.inverse_rows
        return _int_matpow([list(r) for r in base], abs(n))


def _sign_normalize(U):
    U = U.copy()
    for j in range(U.shape[1]):
        col = U[:, j]
        idx = int(np.argmax(np.abs(col) > 1e-12))
        if col[idx] < 0:
            U[:, j] = -col
    return U


def cat_map():
    """Arnold's cat map ``[[2, 1], [1, 1]]``."""
    return ToralAutomorphism([[2, 1], [1, 1]])


# ---------------------------------------------------------------------------
# points and iteration


def to_fixed(x):
    """Float coordinates -> 52-bit fixed-point integers (rounded, reduced mod 1)."""
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    a = np.rint(x * _MOD).astype(np.int64)
    return a & _MASK


def from_fixed(a):
    return np.asarray(a, dtype=np.int64).astype(float) / _MOD


def canonical(x):
    """Canonical representative in [0, 1)^k (float points snap to the fixed-point grid)."""
    if _is_exact(x):
        return tuple(Fraction(c) % 1 for c in x)
    return from_fixed(to_fixed(x))


def _is_exact(x):
    return isinstance(x, (tuple, list)) and len(x) > 0 and all(isinstance(c, (Fraction, int)) for c in x) \
        and any(isinstance(c, Fraction) for c in x)


def apply(f: ToralAutomorphism, x, n: int = 1):
    """Return ``f^n(x)`` on the torus; ``n`` may be negative.

    Exact for rational points (tuples of ``Fraction``) and exact on the
    fixed-point grid for float points, so iterates compose without drift.
    """
    if _is_exact(x):
        P = f.power(n)
        xs = [Fraction(c) for c in x]
        return tuple(sum(p * c for p, c in zip(row, xs)) % 1 for row in P)
    if n == 0:
        return np.mod(np.asarray(x, dtype=float), 1.0)
    a = to_fixed(x)
    base = f.rows if n >= 0 else f.inverse_rows
    P = _int_matpow_mod([list(r) for r in base], abs(n), _MOD)
    flat = a.reshape(-1, f.k)
    out = np.empty_like(flat)
    for i, pt in enumerate(flat.tolist()):
        out[i] = [sum(p * c for p, c in zip(row, pt)) & _MASK for row in P]
    return from_fixed(out.reshape(a.shape))


def _step_fixed(a, rows, k):
    """One step of integer iteration on an (N, k) int64 array."""
    M = np.array(rows, dtype=np.int64)
    if np.max(np.sum(np.abs(M), axis=1)) < _INT64_ROW_LIMIT:
        return (a @ M.T) & _MASK
    obj = a.astype(object)
    res = obj.dot(np.array(rows, dtype=object).T)
    return np.array([[v & _MASK for v in r] for r in res], dtype=np.int64)


def orbit_fixed(f: ToralAutomorphism, a, n: int):
    """Fixed-point orbit: array of shape (|n|+1, *a.shape) with entry i = f^{±i}(a)."""
    a = np.asarray(a, dtype=np.int64)
    rows = f.rows if n >= 0 else f.inverse_rows
    steps = abs(n)
    flat = a.reshape(-1, f.k)
    out = np.empty((steps + 1,) + flat.shape, dtype=np.int64)
    out[0] = flat
    if flat.shape[0] == 1 and steps > 64:
        out[:, 0, :] = _orbit_scalar(tuple(int(v) for v in flat[0]), rows, steps)
    else:
        M = np.array(rows, dtype=np.int64)
        fast = np.max(np.sum(np.abs(M), axis=1)) < _INT64_ROW_LIMIT
        cur = flat
        for i in range(1, steps + 1):
            cur = ((cur @ M.T) & _MASK) if fast else _step_fixed(cur, rows, f.k)
            out[i] = cur
    return out.reshape((steps + 1,) + a.shape)


def _orbit_scalar(start, rows, steps):
    out = np.empty((steps + 1, len(start)), dtype=np.int64)
    cur = start
    out[0] = cur
    if len(start) == 2:
        (m00, m01), (m10, m11) = rows
        a0, a1 = cur
        buf0 = [0] * (steps + 1)
        buf1 = [0] * (steps + 1)
        buf0[0], buf1[0] = a0, a1
        for i in range(1, steps + 1):
            a0, a1 = (m00 * a0 + m01 * a1) & _MASK, (m10 * a0 + m11 * a1) & _MASK
            buf0[i] = a0
            buf1[i] = a1
        out[:, 0] = buf0
        out[:, 1] = buf1
        return out
    for i in range(1, steps + 1):
        cur = tuple(sum(m * c for m, c in zip(row, cur)) & _MASK for row in rows)
        out[i] = cur
    return out


def orbit(f: ToralAutomorphism, x, n: int):
    """Orbit segment ``[x, f^{±1}x, ..., f^{n}x]`` as floats.

    ``x`` has shape (k,) or (N, k); the result has shape (|n|+1, k) or
    (|n|+1, N, k).  Negative ``n`` walks backwards.
    """
    return from_fixed(orbit_fixed(f, to_fixed(x), n))


def torus_dist(x, y):
    """Euclidean distance between closest lifts (broadcasts over leading axes)."""
    d = np.mod(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), 1.0)
    d = np.minimum(d, 1.0 - d)
    return np.sqrt(np.sum(d * d, axis=-1))


def grid_points(resolution: int, k: int = 2):
    """Uniform grid ``{i / resolution}^k`` as an array of shape (resolution**k, k)."""
    axes = [np.arange(resolution) / resolution] * k
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def dense_seed(k: int = 2):
    """Default seed with (numerically) dense orbit: fractional parts of sqrt(primes)."""
    primes = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29]
    return canonical(np.array([math.sqrt(p) % 1.0 for p in primes[:k]]))


def covering_radius(points, resolution: int = 64):
    """Largest distance from a probe grid point to the nearest of ``points``."""
    points = np.mod(np.asarray(points, dtype=float), 1.0)
    tree = cKDTree(points, boxsize=1.0)
    probe = grid_points(resolution, points.shape[-1])
    dist, _ = tree.query(probe)
    return float(np.max(dist))


# ---------------------------------------------------------------------------
# periodic points


@dataclass(frozen=True)
class PeriodicOrbit:
    """A periodic orbit with exact rational coordinates.

    ``point`` is the lexicographically smallest orbit point and ``orbit`` lists
    the orbit starting from it in dynamical order.
    """

    point: tuple
    period: int
    orbit: tuple

    def points(self):
        """Orbit points as a float array of shape (period, k)."""
        return np.array([[float(c) for c in p] for p in self.orbit])


def count_fixed_points(f: ToralAutomorphism, n: int) -> int:
    """``|det(M^n - I)|``, the number of points fixed by ``f^n``."""
    P = f.power(n)
    B = [[P[i][j] - int(i == j) for j in range(f.k)] for i in range(f.k)]
    return abs(_int_det(B))


def periodic_points(f: ToralAutomorphism, n: int, cap: int = DEFAULT_PERIODIC_CAP):
    """All points with ``f^n p = p``, grouped into orbits with minimal periods.

    Uses a triangular basis of the lattice ``(M^n - I) Z^k`` to enumerate the
    cosets of ``Z^k / (M^n - I) Z^k`` in exact integer arithmetic.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    P = f.power(n)
    k = f.k
    B = [[P[i][j] - int(i == j) for j in range(k)] for i in range(k)]
    det = _int_det(B)
    D = abs(det)
    if D > cap:
        raise SizeCapError(D, cap)
    H = _lower_triangular_basis(B)
    # adjugate: B^{-1} = adj / det, so x = adj m / det
    Binv = _frac_inverse(B)
    adj = [[int(v * det) for v in row] for row in Binv]
    sign = 1 if det > 0 else -1
    numerators = set()
    for m in itertools.product(*(range(H[i][i]) for i in range(k))):
        num = tuple((sign * sum(a * c for a, c in zip(row, m))) % D for row in adj)
        numerators.add(num)
    assert len(numerators) == D
    rows = f.rows
    seen = set()
    orbits = []
    for start in sorted(numerators):
        if start in seen:
            continue
        orb = [start]
        seen.add(start)
        cur = start
        while True:
            cur = tuple(sum(a * c for a, c in zip(row, cur)) % D for row in rows)
            if cur == start:
                break
            orb.append(cur)
            seen.add(cur)
        frac_orb = tuple(tuple(Fraction(c, D) for c in p) for p in orb)
        orbits.append(PeriodicOrbit(point=frac_orb[0], period=len(orb), orbit=frac_orb))
    orbits.sort(key=lambda o: (o.period, o.point))
    return orbits


def periodic_orbits_up_to(f: ToralAutomorphism, max_period: int, cap: int = DEFAULT_PERIODIC_CAP):
    """Every periodic orbit with minimal period at most ``max_period``."""
    out = []
    for n in range(1, max_period + 1):
        out.extend(o for o in periodic_points(f, n, cap=cap) if o.period == n)
    return out


# ---------------------------------------------------------------------------
# closing and local leaves


class Shadow(NamedTuple):
    """Result of :func:`closing_shadow`."""

    p: tuple           # exact periodic point, f^n p = p
    c: float           # uniform closing constant of f
    delta: float       # return defect dist(x, f^n x)
    deviation: np.ndarray  # dist(f^i x, f^i p) for i = 0..n


def _exact_point(x):
    a = to_fixed(x)
    return [Fraction(int(v), _MOD) for v in a]


def closing_shadow(f: ToralAutomorphism, x, n: int, delta0: float = DEFAULT_DELTA0) -> Shadow:
    """Close an almost-periodic orbit segment by a genuine periodic orbit.

    The lift ``x~`` satisfies ``A^n x~ = x~ + d + m`` with integer ``m`` and a
    small defect ``d``.  The periodic point is ``p~ = (A^n - I)^{-1} m``, i.e.
    ``x~`` corrected by ``-(A^n - I)^{-1} d``: along the unstable subspace this
    is a correction at time 0, along the stable subspace a correction at time
    ``n``.  Both are bounded by ``c |d|`` uniformly in ``n``.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    xs = _exact_point(x)
    P = f.power(n)
    image = [sum(p * c for p, c in zip(row, xs)) for row in P]
    m = [round(a - b) for a, b in zip(image, xs)]
    defect = [a - b - mm for a, b, mm in zip(image, xs, m)]
    delta = math.sqrt(sum(float(d) ** 2 for d in defect))
    if delta >= delta0:
        raise ClosingRefused(delta, delta0)
    B = [[P[i][j] - int(i == j) for j in range(f.k)] for i in range(f.k)]
    Binv = _frac_inverse(B)
    p_lift = [sum(b * mm for b, mm in zip(row, m)) for row in Binv]
    e = [a - b for a, b in zip(p_lift, xs)]
    deviation = np.empty(n + 1)
    for i in range(n + 1):
        Ai = f.power(i)
        ei = [sum(a * c for a, c in zip(row, e)) for row in Ai]
        wrapped = [min(v % 1, 1 - v % 1) for v in ei]
        deviation[i] = math.sqrt(sum(float(w) ** 2 for w in wrapped))
    p = tuple(c % 1 for c in p_lift)
    return Shadow(p=p, c=f.closing_constant, delta=delta, deviation=deviation)


def _leaf_direction(basis, direction):
    if direction is None:
        return basis[:, 0]
    v = basis @ (basis.T @ np.asarray(direction, dtype=float))
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("direction has no component in the requested subspace")
    return v / nrm


def stable_neighbor(f: ToralAutomorphism, x, delta: float, direction=None):
    """Point ``x + delta * u_s`` on the local stable leaf, ``u_s`` a unit stable vector."""
    u = _leaf_direction(f.stable_basis, direction)
    return canonical(np.asarray(x, dtype=float) + delta * u)


def unstable_neighbor(f: ToralAutomorphism, x, delta: float, direction=None):
    """Point ``x + delta * u_u`` on the local unstable leaf."""
    u = _leaf_direction(f.unstable_basis, direction)
    return canonical(np.asarray(x, dtype=float) + delta * u)


def propagate_displacement(f: ToralAutomorphism, v, n: int, subspace=None):
    """Displacements ``A^i v`` for i = 0..|n| (``A^{-i}`` if n < 0).

    Stable and unstable components are propagated separately and re-projected
    onto their subspaces at every step, so a vector on a leaf stays on it.
    ``subspace="stable"`` (or ``"unstable"``) drops the other component
    entirely; otherwise its rounding-level residue would grow exponentially.
    """
    v = np.asarray(v, dtype=float)
    A = f.matrix_f if n >= 0 else f.inverse_f
    Ps, Pu = f.stable_projector, f.unstable_projector
    vs, vu = Ps @ v, Pu @ v
    if subspace == "stable":
        vu = np.zeros_like(v)
    elif subspace == "unstable":
        vs = np.zeros_like(v)
    elif subspace is not None:
        raise ValueError("subspace must be 'stable', 'unstable' or None")
    out = np.empty((abs(n) + 1,) + v.shape)
    out[0] = vs + vu
    for i in range(1, abs(n) + 1):
        vs = Ps @ (A @ vs)
        vu = Pu @ (A @ vu)
        out[i] = vs + vu
    return out


def leaf_offset(f: ToralAutomorphism, x, y):
    """Closest-lift displacement ``y - x`` (a vector in R^k)."""
    d = np.mod(np.asarray(y, dtype=float) - np.asarray(x, dtype=float) + 0.5, 1.0) - 0.5
    return d


def leaf_orbit(f: ToralAutomorphism, x, v, n: int, subspace=None):
    """Orbit of ``x + v`` computed as ``f^i x + A^i v`` (exact linear structure).

    Avoids the exponential amplification of rounding that iterating the point
    ``x + v`` itself would suffer along the unstable direction.
    """
    base = orbit(f, x, n)
    disp = propagate_displacement(f, v, n, subspace)
    return np.mod(base + disp, 1.0), disp
