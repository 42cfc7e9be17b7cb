"""Smooth and gridded fields on the torus, used as building blocks for cocycles.

Every field is vectorized: ``field(points)`` takes an array of shape (N, k) and
returns shape (N,) for scalar fields or (N, d, d) for matrix fields.  Fields
serialize to plain dicts so experiment configs can describe them.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

__all__ = [
    "TrigField",
    "MatrixTrigField",
    "PolarField",
    "GridField",
    "rotation",
    "field_from_dict",
]


def rotation(theta):
    """Rotation matrices R(theta), shape (..., 2, 2)."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def _as_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    return pts


class TrigField:
    """Scalar field ``c0 + sum_j amp_j cos(2 pi <k_j, x> + phase_j)``."""

    def __init__(self, c0=0.0, terms=()):
        self.c0 = float(c0)
        self.terms = [
            (tuple(int(v) for v in t["k"]), float(t["amp"]), float(t.get("phase", 0.0)))
            for t in terms
        ]

    def __call__(self, points):
        pts = _as_points(points)
        out = np.full(pts.shape[0], self.c0)
        for kvec, amp, phase in self.terms:
            out += amp * np.cos(2 * np.pi * (pts @ np.array(kvec, dtype=float)) + phase)
        return out

    @property
    def lipschitz(self):
        """Lipschitz constant with respect to the torus distance."""
        return sum(abs(a) * 2 * np.pi * np.linalg.norm(k) for k, a, _ in self.terms)

    @property
    def sup(self):
        return abs(self.c0) + sum(abs(a) for _, a, _ in self.terms)

    def to_dict(self):
        return {
            "type": "trig",
            "c0": self.c0,
            "terms": [{"k": list(k), "amp": a, "phase": p} for k, a, p in self.terms],
        }


class MatrixTrigField:
    """Matrix field ``C0 + sum_j B_j cos(2 pi <k_j, x> + phase_j)``."""

    def __init__(self, c0, terms=()):
        self.c0 = np.array(c0, dtype=float)
        self.d = self.c0.shape[0]
        self.terms = [
            (tuple(int(v) for v in t["k"]), np.array(t["B"], dtype=float), float(t.get("phase", 0.0)))
            for t in terms
        ]

    def __call__(self, points):
        pts = _as_points(points)
        out = np.broadcast_to(self.c0, (pts.shape[0], self.d, self.d)).copy()
        for kvec, B, phase in self.terms:
            w = np.cos(2 * np.pi * (pts @ np.array(kvec, dtype=float)) + phase)
            out += w[:, None, None] * B
        return out

    def to_dict(self):
        return {
            "type": "matrix_trig",
            "c0": self.c0.tolist(),
            "terms": [{"k": list(k), "B": B.tolist(), "phase": p} for k, B, p in self.terms],
        }


class PolarField:
    """2x2 matrix field ``R(psi1(x)) diag(e^{h(x)}, e^{-h(x)}) R(psi2(x))``.

    Its condition number is exactly ``exp(2 |h(x)|)``, so a constant ``h``
    gives a field of constant, prescribed condition number.
    """

    d = 2

    def __init__(self, h, psi1, psi2):
        self.h, self.psi1, self.psi2 = h, psi1, psi2

    def __call__(self, points):
        pts = _as_points(points)
        h = self.h(pts)
        D = np.zeros((pts.shape[0], 2, 2))
        D[:, 0, 0] = np.exp(h)
        D[:, 1, 1] = np.exp(-h)
        return rotation(self.psi1(pts)) @ D @ rotation(self.psi2(pts))

    @property
    def max_condition(self):
        return math.exp(2 * self.h.sup)

    def to_dict(self):
        return {"type": "polar", "h": self.h.to_dict(), "psi1": self.psi1.to_dict(),
                "psi2": self.psi2.to_dict()}


class GridField:
    """Values on the uniform grid ``{i / n}^k`` with periodic multilinear interpolation.

    ``values`` has shape ``(n,)*k + value_shape``.  The interpolant is
    Lipschitz with constant at most ``n * sqrt(k) * max |neighbor difference|``.
    """

    def __init__(self, values, k=2):
        self.values = np.asarray(values, dtype=float)
        self.k = k
        self.n = self.values.shape[0]
        if self.values.shape[:k] != (self.n,) * k:
            raise ValueError(f"grid values must have shape (n,)*{k} + value_shape, got {self.values.shape}")
        self.value_shape = self.values.shape[k:]

    def __call__(self, points):
        pts = np.mod(_as_points(points), 1.0) * self.n
        base = np.floor(pts).astype(np.int64)
        frac = pts - base
        out = np.zeros((pts.shape[0],) + self.value_shape)
        for corner in itertools.product((0, 1), repeat=self.k):
            idx = tuple((base[:, j] + corner[j]) % self.n for j in range(self.k))
            w = np.ones(pts.shape[0])
            for j, cj in enumerate(corner):
                w *= frac[:, j] if cj else 1.0 - frac[:, j]
            out += w.reshape((-1,) + (1,) * len(self.value_shape)) * self.values[idx]
        return out

    @property
    def lipschitz(self):
        worst = 0.0
        for axis in range(self.k):
            diff = np.roll(self.values, -1, axis=axis) - self.values
            flat = diff.reshape(diff.shape[: self.k] + (-1,))
            worst = max(worst, float(np.max(np.linalg.norm(flat, axis=-1))))
        return worst * self.n * math.sqrt(self.k)

    def to_dict(self):
        return {"type": "grid", "k": self.k, "values": self.values.tolist()}


def field_from_dict(spec):
    """Rebuild a field from its ``to_dict`` form (numbers are promoted to constant fields)."""
    if isinstance(spec, (int, float)):
        return TrigField(float(spec))
    kind = spec.get("type", "trig")
    if kind == "trig":
        return TrigField(spec.get("c0", 0.0), spec.get("terms", ()))
    if kind == "matrix_trig":
        return MatrixTrigField(spec["c0"], spec.get("terms", ()))
    if kind == "polar":
        return PolarField(field_from_dict(spec["h"]), field_from_dict(spec["psi1"]),
                          field_from_dict(spec["psi2"]))
    if kind == "grid":
        return GridField(np.array(spec["values"]), spec.get("k", 2))
    raise ValueError(f"unknown field type {kind!r}")
