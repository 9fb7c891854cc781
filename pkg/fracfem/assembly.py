"""P1 operators for -Laplace with homogeneous Dirichlet conditions.

Element matrices use exact simplex formulas:

- stiffness: |T| G G^T with G the barycentric gradients
- consistent mass: |T| / ((d + 1)(d + 2)) * (1 + delta_ab)
- lumped mass: |T| / (d + 1) on the diagonal (vertex quadrature)

Global matrices are restricted to interior DOFs, stored as CSR with sorted
indices and mirrored from the upper triangle so A == A.T bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from .mesh import Mesh

logger = logging.getLogger(__name__)

# (corners (c, d+1, d), barycentric gradients (c, d+1, d), measures (c,)) -> (c, d+1, d+1)
LocalMatrix = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OperatorPair:
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    lumped: bool

    @property
    def n_dofs(self) -> int:
        return int(self.stiffness.shape[0])

    def mass_diagonal(self) -> np.ndarray:
        if not self.lumped:
            raise ValueError("mass_diagonal() is only defined for the lumped pair")
        return self.mass.diagonal()


def element_geometry(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corner coordinates, barycentric gradients and measures of every cell."""

    corners = mesh.vertices[mesh.cells]
    edges = corners[:, 1:, :] - corners[:, :1, :]  # (c, d, d), rows are edge vectors
    inv = np.linalg.inv(edges)  # columns of inv are gradients of lambda_1..lambda_d
    grads_tail = np.transpose(inv, (0, 2, 1))
    grads = np.concatenate([-grads_tail.sum(axis=1, keepdims=True), grads_tail], axis=1)
    det = np.linalg.det(edges)
    factorial = 1.0 if mesh.dim == 1 else 2.0
    measures = np.abs(det) / factorial
    return corners, grads, measures


def laplace_local(corners: np.ndarray, grads: np.ndarray, measures: np.ndarray) -> np.ndarray:
    return measures[:, None, None] * np.einsum("cad,cbd->cab", grads, grads)


def consistent_mass_local(corners: np.ndarray, grads: np.ndarray, measures: np.ndarray) -> np.ndarray:
    k = corners.shape[1]  # d + 1
    ref = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return measures[:, None, None] * ref[None, :, :]


def _assemble(mesh: Mesh, local: LocalMatrix) -> sp.csr_matrix:
    corners, grads, measures = element_geometry(mesh)
    blocks = local(corners, grads, measures)
    k = mesh.dim + 1
    if blocks.shape != (mesh.n_cells, k, k):
        raise ValueError(f"local matrix callback returned shape {blocks.shape}, expected {(mesh.n_cells, k, k)}")

    dofs = mesh.interior_dof_map[mesh.cells]  # (c, k)
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    vals = blocks.reshape(-1)
    keep = (rows >= 0) & (cols >= 0)
    n = mesh.n_dofs
    full = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    full.sum_duplicates()
    upper = sp.triu(full, format="csr")
    out = (upper + sp.triu(full, k=1, format="csr").T).tocsr()
    out.sort_indices()
    return out


def assemble_stiffness(mesh: Mesh, local: Optional[LocalMatrix] = None) -> sp.csr_matrix:
    """Stiffness matrix A_ij = (grad phi_j, grad phi_i) on interior DOFs.

    ``local`` replaces the element kernel (e.g. variable coefficients); it
    defaults to the exact P1 Laplacian.
    """

    return _assemble(mesh, local or laplace_local)


def lumped_mass_diagonal(mesh: Mesh) -> np.ndarray:
    measures = element_geometry(mesh)[2]
    share = np.repeat(measures / (mesh.dim + 1), mesh.dim + 1)
    per_vertex = np.bincount(mesh.cells.ravel(), weights=share, minlength=mesh.n_vertices)
    return per_vertex[mesh.interior_vertices]


def assemble_mass(mesh: Mesh, lumped: bool = False) -> sp.csr_matrix:
    """Consistent mass matrix, or its vertex-quadrature (lumped) diagonal."""

    if lumped:
        d = sp.diags(lumped_mass_diagonal(mesh), format="csr")
        d.sort_indices()
        return d
    return _assemble(mesh, consistent_mass_local)


def operator_pair(mesh: Mesh, scheme: str) -> OperatorPair:
    lumped = scheme == "lumped"
    if scheme not in ("standard", "lumped"):
        raise ValueError(f"Unknown scheme {scheme!r}")
    return OperatorPair(assemble_stiffness(mesh), assemble_mass(mesh, lumped=lumped), lumped)


def export_matrix_market(matrix: Union[sp.spmatrix, np.ndarray], path: Union[str, Path], comment: str = "") -> Path:
    """Write a matrix in MatrixMarket coordinate format with 17 significant digits."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    coo = sp.coo_matrix(matrix)
    scipy.io.mmwrite(str(target), coo, comment=comment, field="real", precision=17)
    logger.info("wrote matrix market file %s (shape=%s, nnz=%d)", target, coo.shape, coo.nnz)
    return target
