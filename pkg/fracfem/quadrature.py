"""Reference-element quadrature rules shared by data pairing and error norms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from .mesh import Mesh


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference simplex.

    ``barycentric`` has shape (n_points, dim + 1); ``weights`` sum to 1 and
    are scaled by the cell measure at use.
    """

    degree: int
    barycentric: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return int(self.weights.shape[0])


def _symmetric_orbits(*orbits: Tuple[float, float]) -> QuadratureRule:
    pts = []
    wts = []
    for weight, a in orbits:
        if a == 1.0 / 3.0:
            pts.append((a, a, a))
            wts.append(weight)
            continue
        b = 1.0 - 2.0 * a
        for p in ((a, a, b), (a, b, a), (b, a, a)):
            pts.append(p)
            wts.append(weight)
    return QuadratureRule(0, np.array(pts), np.array(wts))


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Symmetric triangle rules: 6 points (degree 4) or 7 points (degree 5)."""

    if degree <= 4:
        rule = _symmetric_orbits(
            (0.223381589678011, 0.445948490915965),
            (0.109951743655322, 0.091576213509771),
        )
        return QuadratureRule(4, rule.barycentric, rule.weights / rule.weights.sum())
    if degree == 5:
        s15 = math.sqrt(15.0)
        rule = _symmetric_orbits(
            (9.0 / 40.0, 1.0 / 3.0),
            ((155.0 - s15) / 1200.0, (6.0 - s15) / 21.0),
            ((155.0 + s15) / 1200.0, (6.0 + s15) / 21.0),
        )
        return QuadratureRule(5, rule.barycentric, rule.weights)
    raise ValueError(f"No triangle rule of degree {degree}; use 4 or 5")


@lru_cache(maxsize=None)
def interval_rule(n_points: int) -> QuadratureRule:
    """Gauss-Legendre on [0, 1], exact to degree 2n - 1."""

    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points!r}")
    x, w = np.polynomial.legendre.leggauss(n_points)
    s = 0.5 * (x + 1.0)
    return QuadratureRule(2 * n_points - 1, np.stack([1.0 - s, s], axis=1), 0.5 * w)


def rule_for(mesh: Mesh, degree: int) -> QuadratureRule:
    if mesh.dim == 1:
        return interval_rule(max(1, math.ceil((degree + 1) / 2)))
    return triangle_rule(degree)


def cell_points(mesh: Mesh, rule: QuadratureRule) -> np.ndarray:
    """Physical quadrature points, shape (n_cells, n_points, dim)."""

    corners = mesh.vertices[mesh.cells]  # (n_cells, dim + 1, dim)
    return np.einsum("qk,ckd->cqd", rule.barycentric, corners)


@lru_cache(maxsize=None)
def _subdivided(degree_or_points: int, dim: int, s: int) -> QuadratureRule:
    base = interval_rule(degree_or_points) if dim == 1 else triangle_rule(degree_or_points)
    if dim == 1:
        pieces = [np.array([[1.0 - a / s, a / s], [1.0 - (a + 1) / s, (a + 1) / s]]) for a in range(s)]
    else:
        def vertex(i: int, j: int) -> np.ndarray:
            return np.array([1.0 - (i + j) / s, i / s, j / s])

        pieces = []
        for i in range(s):
            for j in range(s - i):
                pieces.append(np.stack([vertex(i, j), vertex(i + 1, j), vertex(i, j + 1)]))
                if i + j <= s - 2:
                    pieces.append(np.stack([vertex(i + 1, j), vertex(i + 1, j + 1), vertex(i, j + 1)]))
    bary = np.concatenate([base.barycentric @ piece for piece in pieces], axis=0)
    weights = np.concatenate([base.weights / len(pieces) for _ in pieces])
    return QuadratureRule(base.degree, bary, weights)


def subdivided_rule(mesh: Mesh, degree: int, s: int) -> QuadratureRule:
    """Composite rule on the uniform s-fold subdivision of the reference cell."""

    if s < 1:
        raise ValueError(f"subdivision factor must be >= 1, got {s!r}")
    if mesh.dim == 1:
        return _subdivided(max(1, math.ceil((degree + 1) / 2)), 1, s)
    return _subdivided(degree, 2, s)
