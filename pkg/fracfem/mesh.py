"""Uniform meshes of the unit interval and the unit square.

Vertex numbering is lexicographic, ``j * (N + 1) + i`` for the vertex at
``(i h, j h)``. Every square of the 2D mesh is split by its
bottom-left to top-right diagonal, which keeps the triangulation symmetric
at each interior vertex. Boundary vertices carry no degree of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np


class UnsupportedMeshError(ValueError):
    """The requested operation needs a mesh family this one does not belong to."""


SPACING_RULES = ("standard", "offset")


@dataclass(frozen=True)
class Mesh:
    dim: int
    n_cells_per_axis: int
    h: float
    vertices: np.ndarray  # (n_vertices, dim)
    cells: np.ndarray  # (n_cells, dim + 1) vertex indices, counter-clockwise in 2D
    interior_dof_map: np.ndarray  # vertex index -> equation index, -1 on the boundary
    spacing_rule: str = "standard"
    interior_vertices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for arr in (self.vertices, self.cells, self.interior_dof_map):
            arr.setflags(write=False)
        interior = np.flatnonzero(self.interior_dof_map >= 0)
        interior.setflags(write=False)
        object.__setattr__(self, "interior_vertices", interior)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_cells(self) -> int:
        return int(self.cells.shape[0])

    @property
    def n_dofs(self) -> int:
        return int(self.interior_vertices.shape[0])

    @property
    def cell_measure(self) -> float:
        return self.h if self.dim == 1 else 0.5 * self.h * self.h

    @property
    def uniform(self) -> bool:
        """True when the vertices form the tensor lattice with spacing h = 1/N."""

        n = self.n_cells_per_axis
        axis = np.arange(n + 1) / n
        if self.dim == 1:
            lattice = axis[:, None]
        else:
            xx, yy = np.meshgrid(axis, axis, indexing="xy")
            lattice = np.stack([xx.ravel(), yy.ravel()], axis=1)
        return lattice.shape == self.vertices.shape and bool(np.allclose(lattice, self.vertices, rtol=0.0, atol=1e-14))

    def interior_coordinates(self) -> np.ndarray:
        return self.vertices[self.interior_vertices]

    def grid_index(self) -> Tuple[np.ndarray, ...]:
        """Integer axis indices (i[, j]) of the interior DOFs, each in 1..N-1."""

        n1 = self.n_cells_per_axis + 1
        v = self.interior_vertices
        if self.dim == 1:
            return (v,)
        return (v % n1, v // n1)

    def expand(self, dof_values: np.ndarray) -> np.ndarray:
        """Interior DOF vector -> full vertex vector with zero boundary values."""

        full = np.zeros(self.n_vertices, dtype=np.result_type(dof_values, float))
        full[self.interior_vertices] = dof_values
        return full

    def locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Cell index and barycentric coordinates of each point.

        Points on shared edges are assigned deterministically to the cell
        with the smaller axis indices (the upper end of an axis is clamped).
        """

        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"points must have {self.dim} coordinates, got shape {pts.shape}")
        if np.any(pts < -1e-14) or np.any(pts > 1.0 + 1e-14):
            raise ValueError("points must lie in the closed unit domain")

        n = self.n_cells_per_axis
        scaled = np.clip(pts, 0.0, 1.0) / self.h
        idx = np.minimum(np.floor(scaled).astype(np.int64), n - 1)
        local = scaled - idx

        if self.dim == 1:
            xi = local[:, 0]
            bary = np.stack([1.0 - xi, xi], axis=1)
            return idx[:, 0], bary

        i, j = idx[:, 0], idx[:, 1]
        xi, eta = local[:, 0], local[:, 1]
        lower = xi >= eta
        square = j * n + i
        cell = 2 * square + np.where(lower, 0, 1)
        bary = np.where(
            lower[:, None],
            np.stack([1.0 - xi, xi - eta, eta], axis=1),
            np.stack([1.0 - eta, xi, eta - xi], axis=1),
        )
        return cell, bary


def build_mesh(dim: int, n: int, spacing_rule: str = "standard") -> Mesh:
    """Uniform mesh with ``n`` cells per axis.

    ``offset`` is a 1D-only family for the off-grid Dirac study and requires
    ``n = 2**k + 1`` so that 1/2 is never a vertex.
    """

    rule = (spacing_rule or "standard").strip().lower()
    if rule not in SPACING_RULES:
        raise ValueError(f"Unknown spacing rule {spacing_rule!r}. Allowed: {list(SPACING_RULES)}")
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim!r}")
    if int(n) != n or n < 2:
        raise ValueError(f"Need at least 2 cells per axis, got N={n!r}")
    n = int(n)
    if rule == "offset":
        if dim != 1:
            raise UnsupportedMeshError("offset spacing is only defined for 1D meshes")
        if n < 3 or ((n - 1) & (n - 2)) != 0:
            raise ValueError(f"offset spacing needs N = 2**k + 1 with k >= 1, got N={n}")

    h = 1.0 / n
    axis = np.arange(n + 1) / n

    if dim == 1:
        vertices = axis[:, None].copy()
        cells = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
        dof_map = np.full(n + 1, -1, dtype=np.int64)
        dof_map[1:n] = np.arange(n - 1)
        return Mesh(1, n, h, vertices, cells, dof_map, rule)

    xx, yy = np.meshgrid(axis, axis, indexing="xy")
    vertices = np.stack([xx.ravel(), yy.ravel()], axis=1)

    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (jj * (n + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    vi = np.arange((n + 1) ** 2)
    i_idx, j_idx = vi % (n + 1), vi // (n + 1)
    interior = (i_idx > 0) & (i_idx < n) & (j_idx > 0) & (j_idx < n)
    dof_map = np.full(vi.shape, -1, dtype=np.int64)
    dof_map[interior] = (j_idx[interior] - 1) * (n - 1) + (i_idx[interior] - 1)
    return Mesh(2, n, h, vertices, cells, dof_map, rule)


def mesh_for_level(dim: int, level: int, mesh_rule: str = "standard") -> Mesh:
    """Level k mesh: h = 1/2**k, or h = 1/(2**k + 1) for the offset rule."""

    if level < 1:
        raise ValueError(f"mesh level must be >= 1, got {level!r}")
    n = 2**level + (1 if mesh_rule == "offset" else 0)
    return build_mesh(dim, n, mesh_rule)
