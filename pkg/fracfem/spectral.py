"""Reference solutions from eigen-expansions.

- ``exact_solution``: u(t) = sum (v, phi_nm) E_{a,1}(-lambda_nm t^a) phi_nm with
  lambda_nm = (n^2 + m^2) pi^2, truncated adaptively.
- ``semidiscrete_lumped``: the lumped-mass semidiscrete solution through the
  discrete sine basis (DST-I), exact up to Mittag-Leffler accuracy.
- ``semidiscrete_galerkin_1d``: consistent-mass semidiscrete solution in 1D
  through a dense generalized eigendecomposition.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.fft
import scipy.linalg

from .assembly import assemble_mass, assemble_stiffness
from .config import settings
from .initial_data import (
    CUSTOM,
    CUSTOM_MAX_MODES,
    InitialDatum,
    l2_project,
    sine_coefficient_grid,
    sine_coefficient_rows,
)
from .mesh import Mesh, UnsupportedMeshError, build_mesh
from .mittag_leffler import ml_array

logger = logging.getLogger(__name__)

_MIN_MODES = 32
# Extended band used to estimate the energy beyond the truncation.
_TAIL_FACTOR = 4
# Cap on entries evaluated per chunk (values, not bytes).
_CHUNK = 1 << 22


@dataclass(frozen=True)
class SpectralSolution:
    mode_coefficients: np.ndarray  # (K,) in 1D, (K, K) in 2D
    lambdas: np.ndarray
    n_modes: int
    t: float
    alpha: float
    dim: int
    tail_l2: float = 0.0  # estimated ||u - u_K||
    tail_h1: float = 0.0  # estimated |u - u_K|_1
    converged: bool = True

    def dotted_norm(self, s: int) -> float:
        """|u_K|_s = (sum lambda^s c^2)^(1/2) for s in {0, 1, 2}."""

        if s not in (0, 1, 2):
            raise ValueError(f"dotted norms are provided for s in {{0, 1, 2}}, got {s!r}")
        return float(math.sqrt(np.sum(self.lambdas**s * self.mode_coefficients**2)))

    @property
    def l2_norm(self) -> float:
        """||u(t)||: the truncated series plus the estimated tail."""

        return math.sqrt(self.dotted_norm(0) ** 2 + self.tail_l2**2)

    @property
    def h1_seminorm(self) -> float:
        """|u(t)|_1: the truncated series plus the estimated tail."""

        return math.sqrt(self.dotted_norm(1) ** 2 + self.tail_h1**2)

    def caputo_derivative_norm(self) -> float:
        """||d^a_t u(t)|| = ||Laplace u(t)|| by the eigen-identity of E_{a,1}."""

        return self.dotted_norm(2)


def continuous_eigenvalues(n_modes: int, dim: int) -> np.ndarray:
    l2 = (np.arange(1, n_modes + 1, dtype=float) * np.pi) ** 2
    return l2 if dim == 1 else l2[:, None] + l2[None, :]


def _band_mask(n_modes: int, dim: int, lo: int) -> np.ndarray:
    """Modes with lo < max(n, m) <= n_modes."""

    idx = np.arange(1, n_modes + 1)
    if dim == 1:
        return idx > lo
    return np.maximum(idx[:, None], idx[None, :]) > lo


def _modes(v: InitialDatum, alpha: float, t: float, k: int) -> Tuple[np.ndarray, np.ndarray]:
    lam = continuous_eigenvalues(k, v.dim)
    coef = sine_coefficient_grid(v, k) * ml_array(alpha, 1.0, -lam * t**alpha)
    return coef, lam


def exact_solution(
    v: InitialDatum,
    alpha: float,
    t: float,
    tol: float = 1e-8,
    h1_tol: Optional[float] = None,
    max_modes: Optional[int] = None,
) -> SpectralSolution:
    """Truncated series for u(t) = E(t) v.

    The truncation doubles from 32 modes per axis until the change in the
    series (the energy of the last band) is below ``tol`` in L2 and, when
    given, below ``h1_tol`` in the H1 seminorm. If the budget runs out the
    solution is returned with ``converged=False``.
    """

    if not (t > 0.0):
        raise ValueError(f"t must be positive, got {t!r}")
    budget = max_modes or (settings.max_modes_1d if v.dim == 1 else settings.max_modes_2d)
    if v.kind == CUSTOM:
        budget = min(budget, CUSTOM_MAX_MODES[v.dim] // _TAIL_FACTOR)
    k = min(_MIN_MODES, budget)
    coef, lam = _modes(v, alpha, t, k)
    while True:
        band = _band_mask(k, v.dim, k // 2)
        band_l2 = float(math.sqrt(np.sum(coef[band] ** 2)))
        band_h1 = float(math.sqrt(np.sum(lam[band] * coef[band] ** 2)))
        ok = band_l2 < tol and (h1_tol is None or band_h1 < h1_tol)
        if ok or 2 * k > budget:
            break
        k *= 2
        coef, lam = _modes(v, alpha, t, k)

    tail_l2, tail_h1 = _tail_energy(v, alpha, t, k, coef, lam)
    converged = bool(ok)
    if not converged:
        logger.warning(
            "spectral truncation did not meet tolerance: band L2 %.3e (tol %.3e), band H1 %.3e",
            band_l2,
            tol,
            band_h1,
            extra={"example": v.token, "alpha": alpha, "t": t, "n_modes": k},
        )
    else:
        logger.debug("spectral reference ready", extra={"example": v.token, "alpha": alpha, "t": t, "n_modes": k})
    return SpectralSolution(coef, lam, k, float(t), float(alpha), v.dim, tail_l2, tail_h1, converged)


def _tail_energy(
    v: InitialDatum, alpha: float, t: float, k: int, coef: np.ndarray, lam: np.ndarray
) -> Tuple[float, float]:
    """(||u - u_K||, |u - u_K|_1) from band sums up to 4K plus a geometric extrapolation."""

    bands_l2: List[float] = []
    bands_h1: List[float] = []
    last = _band_mask(k, v.dim, k // 2)
    bands_l2.append(float(np.sum(coef[last] ** 2)))
    bands_h1.append(float(np.sum(lam[last] * coef[last] ** 2)))
    lo = k
    while lo < _TAIL_FACTOR * k:
        hi = 2 * lo
        e0, e1 = _band_sums(v, alpha, t, lo, hi)
        bands_l2.append(e0)
        bands_h1.append(e1)
        lo = hi
    return _extrapolated(bands_l2), _extrapolated(bands_h1)


def _extrapolated(bands: List[float]) -> float:
    beyond = sum(bands[1:])
    prev, last = bands[-2], bands[-1]
    if prev > 0.0 and 0.0 <= last < prev:
        r = last / prev
        beyond += last * r / (1.0 - r)
    elif last > 0.0:
        # No decay across doublings; the estimate is a lower bound.
        beyond += last
    return float(math.sqrt(beyond))


def _band_sums(v: InitialDatum, alpha: float, t: float, lo: int, hi: int) -> Tuple[float, float]:
    """Sums of c^2 and lambda c^2 over modes with lo < max(n, m) <= hi, chunked by rows."""

    ta = t**alpha
    if v.dim == 1:
        c = sine_coefficient_grid(v, hi)[lo:]
        lam = (np.arange(lo + 1, hi + 1, dtype=float) * np.pi) ** 2
        c = c * ml_array(alpha, 1.0, -lam * ta)
        return float(np.sum(c**2)), float(np.sum(lam * c**2))

    l2 = (np.arange(1, hi + 1, dtype=float) * np.pi) ** 2
    m_idx = np.arange(1, hi + 1)[None, :]
    s0 = s1 = 0.0
    rows = max(1, _CHUNK // hi)
    for start in range(0, hi, rows):
        n_idx = np.arange(start + 1, min(hi, start + rows) + 1)
        mask = np.maximum(n_idx[:, None], m_idx) > lo
        lam = l2[n_idx - 1, None] + l2[None, :]
        c = sine_coefficient_rows(v, n_idx, hi) * ml_array(alpha, 1.0, -lam * ta)
        s0 += float(np.sum(np.where(mask, c**2, 0.0)))
        s1 += float(np.sum(np.where(mask, lam * c**2, 0.0)))
    return s0, s1


# ----------------------------
# Point evaluation
# ----------------------------


def _axis_tables(coords: np.ndarray, k: int, with_derivative: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    freq = np.arange(1, k + 1, dtype=float) * np.pi
    arg = np.outer(freq, coords)
    s = np.sqrt(2.0) * np.sin(arg)
    d = np.sqrt(2.0) * freq[:, None] * np.cos(arg) if with_derivative else None
    return s, d


def evaluate_on_points(
    s: SpectralSolution, points: np.ndarray, with_gradient: bool = False
) -> Union[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """Values (and gradients) of the truncated series at arbitrary points.

    Sine/cosine tables are built once per distinct axis coordinate and then
    contracted, so the cost is O(K^2 P_distinct + K P).
    """

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != s.dim:
        raise ValueError(f"points must have {s.dim} coordinates, got shape {pts.shape}")
    k = s.n_modes
    n_pts = pts.shape[0]
    values = np.empty(n_pts)
    grads = np.empty((n_pts, s.dim)) if with_gradient else None

    if s.dim == 1:
        xs, ix = np.unique(pts[:, 0], return_inverse=True)
        chunk = max(1, _CHUNK // k)
        vals_u = np.empty(xs.shape[0])
        ders_u = np.empty(xs.shape[0])
        for start in range(0, xs.shape[0], chunk):
            sl = slice(start, start + chunk)
            tab, dtab = _axis_tables(xs[sl], k, with_gradient)
            vals_u[sl] = s.mode_coefficients @ tab
            if dtab is not None:
                ders_u[sl] = s.mode_coefficients @ dtab
        values[:] = vals_u[ix]
        if grads is not None:
            grads[:, 0] = ders_u[ix]
            return values, grads
        return values

    xs, ix = np.unique(pts[:, 0], return_inverse=True)
    ys, iy = np.unique(pts[:, 1], return_inverse=True)
    sx, dx = _axis_tables(xs, k, with_gradient)
    sy, dy = _axis_tables(ys, k, with_gradient)
    g = s.mode_coefficients @ sy  # (K, Py): sum over m
    gy = s.mode_coefficients @ dy if dy is not None else None

    chunk = max(1, _CHUNK // k)
    for start in range(0, n_pts, chunk):
        sl = slice(start, start + chunk)
        cx = sx[:, ix[sl]]
        values[sl] = np.einsum("kp,kp->p", cx, g[:, iy[sl]])
        if grads is not None and dx is not None and gy is not None:
            grads[sl, 0] = np.einsum("kp,kp->p", dx[:, ix[sl]], g[:, iy[sl]])
            grads[sl, 1] = np.einsum("kp,kp->p", cx, gy[:, iy[sl]])
    if grads is not None:
        return values, grads
    return values


# ----------------------------
# Discrete eigen-expansions
# ----------------------------


@dataclass(frozen=True)
class DiscreteEigenBasis:
    """Lumped-orthonormal discrete sine basis of a uniform mesh.

    phi^h_nm = 2 sin(n pi x) sin(m pi y) at grid points (1D: sqrt(2) sin(n pi x)),
    which satisfies (phi^h, phi^h)_h = 1.
    """

    mesh: Mesh
    eigenvalues: np.ndarray  # (N-1,) or (N-1, N-1), indexed by mode - 1

    def vector(self, n: int, m: Optional[int] = None) -> np.ndarray:
        coords = self.mesh.interior_coordinates()
        vec = np.sqrt(2.0) * np.sin(n * np.pi * coords[:, 0])
        if self.mesh.dim == 2:
            if m is None:
                raise ValueError("2D basis vectors need both n and m")
            vec = vec * np.sqrt(2.0) * np.sin(m * np.pi * coords[:, 1])
        return vec

    def eigenvalue(self, n: int, m: Optional[int] = None) -> float:
        if self.mesh.dim == 1:
            return float(self.eigenvalues[n - 1])
        return float(self.eigenvalues[n - 1, (m or 1) - 1])


def discrete_eigen_basis(mesh: Mesh) -> DiscreteEigenBasis:
    if not mesh.uniform:
        raise UnsupportedMeshError("the discrete sine basis needs a uniform lattice mesh")
    n = mesh.n_cells_per_axis
    h = mesh.h
    s = np.sin(np.arange(1, n) * np.pi * h / 2.0) ** 2
    lam = (4.0 / h**2) * s
    if mesh.dim == 2:
        lam = lam[:, None] + lam[None, :]
    return DiscreteEigenBasis(mesh, lam)


def _to_grid(mesh: Mesh, vec: np.ndarray) -> np.ndarray:
    if mesh.dim == 1:
        return vec
    m = mesh.n_cells_per_axis - 1
    return vec.reshape(m, m)  # rows follow y, columns follow x


def lumped_analysis(mesh: Mesh, dofs: np.ndarray) -> np.ndarray:
    """Coefficients (c, phi^h)_h in the discrete sine basis."""

    h = mesh.h
    g = _to_grid(mesh, dofs)
    if mesh.dim == 1:
        return h * np.sqrt(2.0) * scipy.fft.dst(g, type=1) / 2.0
    # dstn is symmetric in the two axes; transpose so index [n-1, m-1] follows (x, y).
    return (h * h / 2.0) * scipy.fft.dstn(g, type=1).T


def lumped_synthesis(mesh: Mesh, coefficients: np.ndarray) -> np.ndarray:
    if mesh.dim == 1:
        return np.sqrt(2.0) * scipy.fft.dst(coefficients, type=1) / 2.0
    return (scipy.fft.dstn(coefficients.T, type=1) / 2.0).ravel()


def lumped_propagate(mesh: Mesh, v_h: np.ndarray, alpha: float, t: float) -> np.ndarray:
    """Exact solution at time t of M_L d^a u + A u = 0, u(0) = v_h."""

    basis = discrete_eigen_basis(mesh)
    a = lumped_analysis(mesh, v_h)
    decay = ml_array(alpha, 1.0, -basis.eigenvalues * t**alpha)
    return lumped_synthesis(mesh, decay * a)


def semidiscrete_lumped(v: InitialDatum, mesh: Mesh, alpha: float, t: float) -> np.ndarray:
    """Lumped-mass semidiscrete solution with v_h = P_h v."""

    if not mesh.uniform:
        raise UnsupportedMeshError("semidiscrete_lumped needs a uniform lattice mesh")
    v_h = l2_project(v, mesh).coefficients
    return lumped_propagate(mesh, v_h, alpha, t)


@lru_cache(maxsize=8)
def _galerkin_eigs_1d(n_cells: int, spacing_rule: str) -> Tuple[np.ndarray, np.ndarray]:
    mesh = build_mesh(1, n_cells, spacing_rule)
    a = assemble_stiffness(mesh).toarray()
    m = assemble_mass(mesh, lumped=False).toarray()
    w, vecs = scipy.linalg.eigh(a, m)
    return w, vecs


def galerkin_propagate_1d(mesh: Mesh, v_h: np.ndarray, alpha: float, t: float) -> np.ndarray:
    """Exact solution at time t of M d^a u + A u = 0 on a 1D mesh (dense eigensolve)."""

    if mesh.dim != 1:
        raise UnsupportedMeshError("the dense Galerkin eigen path is 1D only")
    if mesh.n_dofs > settings.dense_eig_max:
        raise ValueError(f"{mesh.n_dofs} DOFs exceed the dense eigensolve cap ({settings.dense_eig_max})")
    try:
        w, vecs = _galerkin_eigs_1d(mesh.n_cells_per_axis, mesh.spacing_rule)
    except scipy.linalg.LinAlgError as e:
        raise RuntimeError(f"generalized eigensolve failed for N={mesh.n_cells_per_axis}: {e}") from e
    m = assemble_mass(mesh, lumped=False)
    coeff = vecs.T @ (m @ v_h)  # M-orthonormal eigenvectors
    return vecs @ (ml_array(alpha, 1.0, -w * t**alpha) * coeff)


def semidiscrete_galerkin_1d(v: InitialDatum, mesh: Mesh, alpha: float, t: float) -> np.ndarray:
    v_h = l2_project(v, mesh).coefficients
    return galerkin_propagate_1d(mesh, v_h, alpha, t)
