"""Initial data: the four 2D examples, Dirac data and custom expressions.

Sine coefficients are stated against the L2-orthonormal basis
phi_nm = 2 sin(n pi x) sin(m pi y) (1D: sqrt(2) sin(n pi x)).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from .assembly import assemble_mass
from .config import settings
from .expressions import CompiledExpression, compile_expression
from .mesh import Mesh
from .naming import CUSTOM_PREFIX, normalize_example_token
from .quadrature import QuadratureRule, rule_for, subdivided_rule

logger = logging.getLogger(__name__)

SMOOTH_A = "smooth_a"
INTERMEDIATE_B = "intermediate_b"
NONSMOOTH_C = "nonsmooth_c"
DELTA_POINT = "delta_point"
DELTA_CURVE = "delta_curve"
CUSTOM = "custom"

KINDS = (SMOOTH_A, INTERMEDIATE_B, NONSMOOTH_C, DELTA_POINT, DELTA_CURVE, CUSTOM)
_MEASURES = (DELTA_POINT, DELTA_CURVE)

# Gamma = boundary of [1/4, 3/4]^2, counter-clockwise.
_CURVE_SEGMENTS: Tuple[Tuple[Tuple[float, float], Tuple[float, float]], ...] = (
    ((0.25, 0.25), (0.75, 0.25)),
    ((0.75, 0.25), (0.75, 0.75)),
    ((0.75, 0.75), (0.25, 0.75)),
    ((0.25, 0.75), (0.25, 0.25)),
)

# Sub-cells per axis for indicator supports that cut through cells.
_SPLIT_FACTOR = 16


class ProjectionError(RuntimeError):
    def __init__(self, message: str, *, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class InitialDatum:
    kind: str
    dim: int
    point: Optional[Tuple[float, ...]] = None
    expression: Optional[CompiledExpression] = None
    token: str = ""
    breaklines: Tuple[Tuple[int, float], ...] = field(default=())  # (axis, coordinate) of kinks/jumps

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"Unknown datum kind {self.kind!r}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim!r}")
        if self.kind in (SMOOTH_A, INTERMEDIATE_B, NONSMOOTH_C, DELTA_CURVE) and self.dim != 2:
            raise ValueError(f"{self.kind} is a 2D datum")
        if self.kind == DELTA_POINT:
            if self.point is None or len(self.point) != self.dim:
                raise ValueError("delta_point needs a point with one coordinate per dimension")
            if any(not (0.0 < c < 1.0) for c in self.point):
                raise ValueError(f"delta_point location {self.point!r} must lie inside the domain")
        if self.kind == CUSTOM and self.expression is None:
            raise ValueError("custom datum needs an expression")

    @property
    def is_measure(self) -> bool:
        return self.kind in _MEASURES

    @property
    def smoothness(self) -> str:
        if self.is_measure:
            return "measure"
        if self.kind == SMOOTH_A:
            return "smooth"
        if self.kind == CUSTOM and self.expression is not None:
            return self.expression.smoothness
        return "nonsmooth"

    @property
    def l2_norm(self) -> Optional[float]:
        """||v||, or None when v is not in L2."""

        if self.kind == SMOOTH_A:
            return 1.0 / 30.0
        if self.kind == INTERMEDIATE_B:
            return 1.0 / 960.0
        if self.kind == NONSMOOTH_C:
            return 0.5
        if self.kind == CUSTOM:
            return _custom_l2_norm(self)
        return None

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        if self.is_measure:
            raise ValueError(f"{self.kind} has no pointwise values")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == CUSTOM:
            assert self.expression is not None
            return self.expression(pts)
        x, y = pts[:, 0], pts[:, 1]
        if self.kind == SMOOTH_A:
            return x * (1.0 - x) * y * (1.0 - y)
        if self.kind == INTERMEDIATE_B:
            inside = (x >= 0.5) & (y >= 0.5)
            return np.where(inside, (x - 0.5) * (x - 1.0) * (y - 0.5) * (y - 1.0), 0.0)
        inside = (x >= 0.25) & (x <= 0.75) & (y >= 0.25) & (y <= 0.75)
        return inside.astype(float)


def smooth_a() -> InitialDatum:
    return InitialDatum(SMOOTH_A, 2, token="a")


def intermediate_b() -> InitialDatum:
    return InitialDatum(INTERMEDIATE_B, 2, token="b", breaklines=((0, 0.5), (1, 0.5)))


def nonsmooth_c() -> InitialDatum:
    return InitialDatum(NONSMOOTH_C, 2, token="c", breaklines=((0, 0.25), (0, 0.75), (1, 0.25), (1, 0.75)))


def delta_curve() -> InitialDatum:
    return InitialDatum(DELTA_CURVE, 2, token="d")


def delta_point(point: Tuple[float, ...] = (0.5,)) -> InitialDatum:
    return InitialDatum(DELTA_POINT, len(point), point=tuple(float(c) for c in point), token="delta")


def custom(expression: str, dim: int) -> InitialDatum:
    compiled = compile_expression(expression, dim)
    return InitialDatum(CUSTOM, dim, expression=compiled, token=CUSTOM_PREFIX + compiled.source)


def datum_from_token(token: str, dim: int) -> InitialDatum:
    """a|b|c|d (2D), delta (point Dirac at the center) or custom:<expr>."""

    t = normalize_example_token(token)
    if t.startswith(CUSTOM_PREFIX):
        return custom(t[len(CUSTOM_PREFIX) :], dim)
    if t == "delta":
        return delta_point((0.5,) * dim)
    if dim != 2:
        raise ValueError(f"example {t!r} is defined on the unit square only (dim=2)")
    return {"a": smooth_a, "b": intermediate_b, "c": nonsmooth_c, "d": delta_curve}[t]()


# ----------------------------
# Pairing with the nodal basis
# ----------------------------


def pair_with_basis(v: InitialDatum, mesh: Mesh) -> np.ndarray:
    """Vector of <v, phi_i> over the interior DOFs."""

    if v.dim != mesh.dim:
        raise ValueError(f"datum is {v.dim}D but the mesh is {mesh.dim}D")
    if v.kind == DELTA_POINT:
        assert v.point is not None
        return _pair_points(mesh, np.array([v.point]), np.array([1.0]))
    if v.kind == DELTA_CURVE:
        return _pair_curve(mesh, _CURVE_SEGMENTS)
    return _pair_function(v, mesh)


def _scatter(mesh: Mesh, cells: np.ndarray, bary: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Sum weights * lambda_a into vertex slots, then restrict to interior DOFs."""

    vertex_ids = mesh.cells[cells]  # (p, d + 1)
    contrib = bary * weights[:, None]
    full = np.bincount(vertex_ids.ravel(), weights=contrib.ravel(), minlength=mesh.n_vertices)
    return full[mesh.interior_vertices]


def _pair_points(mesh: Mesh, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    cells, bary = mesh.locate(points)
    return _scatter(mesh, cells, bary, weights)


def _segment_breaks(mesh: Mesh, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Parameters in [0, 1] where the segment crosses grid lines or cell diagonals."""

    d = p1 - p0
    n = mesh.n_cells_per_axis
    params: List[np.ndarray] = [np.array([0.0, 1.0])]
    levels = np.arange(-n, n + 1) * mesh.h
    for axis in range(2):
        if d[axis] != 0.0:
            params.append((levels - p0[axis]) / d[axis])
    slope = d[1] - d[0]
    if slope != 0.0:
        params.append((levels - (p0[1] - p0[0])) / slope)
    s = np.concatenate(params)
    s = s[(s >= 0.0) & (s <= 1.0)]
    return np.unique(np.round(s, 15))


def _pair_curve(mesh: Mesh, segments: Sequence[Tuple[Tuple[float, float], Tuple[float, float]]]) -> np.ndarray:
    gx = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    pts: List[np.ndarray] = []
    wts: List[np.ndarray] = []
    for a, b in segments:
        p0, p1 = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        length = float(np.hypot(*(p1 - p0)))
        s = _segment_breaks(mesh, p0, p1)
        s0, s1 = s[:-1], s[1:]
        keep = s1 - s0 > 1e-14
        s0, s1 = s0[keep], s1[keep]
        for g in gx:
            t = s0 + g * (s1 - s0)
            pts.append(p0[None, :] + t[:, None] * (p1 - p0)[None, :])
            wts.append(0.5 * (s1 - s0) * length)
    return _pair_points(mesh, np.concatenate(pts), np.concatenate(wts))


def _cut_cells(v: InitialDatum, mesh: Mesh) -> np.ndarray:
    cut = np.zeros(mesh.n_cells, dtype=bool)
    if not v.breaklines:
        return cut
    corners = mesh.vertices[mesh.cells]
    tol = 1e-12
    for axis, c in v.breaklines:
        lo = corners[:, :, axis].min(axis=1)
        hi = corners[:, :, axis].max(axis=1)
        cut |= (lo < c - tol) & (hi > c + tol)
    return cut


def singular_cells(v: InitialDatum, mesh: Mesh) -> np.ndarray:
    """Cells where v, and so the solution, is not smooth.

    The cell(s) holding a Dirac point, cells touching a segment of Gamma and
    cells cut by or bordering a breakline. Error quadrature splits these.
    """

    corners = mesh.vertices[mesh.cells]
    lo = corners.min(axis=1)  # (c, d)
    hi = corners.max(axis=1)
    tol = 1e-12
    mask = np.zeros(mesh.n_cells, dtype=bool)
    if v.kind == DELTA_POINT:
        assert v.point is not None
        p = np.asarray(v.point, dtype=float)
        mask |= np.all((lo <= p + tol) & (hi >= p - tol), axis=1)
    elif v.kind == DELTA_CURVE:
        for a, b in _CURVE_SEGMENTS:
            seg_lo = np.minimum(a, b)
            seg_hi = np.maximum(a, b)
            mask |= np.all((lo <= seg_hi + tol) & (hi >= seg_lo - tol), axis=1)
    for axis, c in v.breaklines:
        mask |= (lo[:, axis] <= c + tol) & (hi[:, axis] >= c - tol)
    return mask


def _integrate_cells(
    mesh: Mesh, cells: np.ndarray, rule: QuadratureRule, func: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    if cells.size == 0:
        return np.zeros(mesh.n_dofs)
    corners = mesh.vertices[mesh.cells[cells]]
    pts = np.einsum("qk,ckd->cqd", rule.barycentric, corners)
    measures = np.full(cells.shape[0], mesh.cell_measure)
    values = func(pts.reshape(-1, mesh.dim)).reshape(cells.shape[0], rule.n_points)
    weights = values * rule.weights[None, :] * measures[:, None]
    q_cells = np.repeat(cells, rule.n_points)
    q_bary = np.tile(rule.barycentric, (cells.shape[0], 1))
    return _scatter(mesh, q_cells, q_bary, weights.ravel())


def _pair_function(v: InitialDatum, mesh: Mesh) -> np.ndarray:
    degree = 5
    cut = _cut_cells(v, mesh)
    rule = rule_for(mesh, degree)
    all_cells = np.arange(mesh.n_cells)
    if not cut.any():
        return _integrate_cells(mesh, all_cells, rule, v.evaluate)

    if settings.split_indicator_quadrature:
        logger.info(
            "data support is not aligned with mesh lines; refining quadrature on %d cut cells",
            int(cut.sum()),
            extra={"example": v.token, "h": mesh.h},
        )
        fine = subdivided_rule(mesh, degree, _SPLIT_FACTOR)
        return _integrate_cells(mesh, all_cells[~cut], rule, v.evaluate) + _integrate_cells(
            mesh, all_cells[cut], fine, v.evaluate
        )

    logger.warning(
        "data support is not aligned with mesh lines; pairing carries an O(h) consistency error",
        extra={"example": v.token, "h": mesh.h},
    )
    return _integrate_cells(mesh, all_cells, rule, v.evaluate)


# ----------------------------
# Projection and interpolation
# ----------------------------


@dataclass(frozen=True)
class ProjectedData:
    coefficients: np.ndarray
    l2_norm_of_v: Optional[float]
    residual: float = 0.0

    @property
    def in_l2(self) -> bool:
        return self.l2_norm_of_v is not None


def l2_project(v: InitialDatum, mesh: Mesh, mass: Optional[sp.csr_matrix] = None) -> ProjectedData:
    """v_h = P_h v: solve M c = <v, phi_i> with the consistent mass matrix."""

    rhs = pair_with_basis(v, mesh)
    m = mass if mass is not None else assemble_mass(mesh, lumped=False)
    coefficients = spla.splu(m.tocsc()).solve(rhs)
    scale = max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(m @ coefficients - rhs)) / scale
    if residual > 1e-12:
        raise ProjectionError("L2 projection did not reach the residual target", residual=residual)
    return ProjectedData(coefficients=coefficients, l2_norm_of_v=v.l2_norm, residual=residual)


def interpolate(v: InitialDatum, mesh: Mesh) -> np.ndarray:
    """Nodal interpolant I_h v on interior vertices (function data only)."""

    return v.evaluate(mesh.interior_coordinates())


# ----------------------------
# Sine coefficients
# ----------------------------


def _axis_c(l: np.ndarray) -> np.ndarray:
    """sqrt(2) * integral_{1/4}^{3/4} sin(l pi s) ds."""

    k = l * np.pi
    return np.sqrt(2.0) * (np.cos(k / 4.0) - np.cos(3.0 * k / 4.0)) / k


def _axis_factors(v: InitialDatum, l: np.ndarray) -> np.ndarray:
    k = l * np.pi
    if v.kind == SMOOTH_A:
        c = 4.0 * np.sin(k / 2.0) ** 2 - k * np.sin(k)
        return np.sqrt(2.0) * c / k**3
    if v.kind == INTERMEDIATE_B:
        s = (np.sin(k) + np.sin(k / 2.0)) / (2.0 * k**2)
        return np.sqrt(2.0) * (s + 2.0 * (np.cos(k) - np.cos(k / 2.0)) / k**3)
    if v.kind == NONSMOOTH_C:
        return _axis_c(l)
    raise ValueError(f"{v.kind} has no separable sine coefficients")


def sine_coefficient_grid(v: InitialDatum, n_modes: int) -> np.ndarray:
    """(v, phi_n) for n = 1..n_modes (1D) or (v, phi_nm) as an (n, m) array (2D)."""

    l = np.arange(1, n_modes + 1, dtype=float)
    if v.dim == 2:
        return sine_coefficient_rows(v, l, n_modes)
    if v.kind == DELTA_POINT:
        assert v.point is not None
        return np.sqrt(2.0) * np.sin(l * np.pi * v.point[0])
    if v.kind == CUSTOM:
        return _custom_coefficients(v, n_modes)
    return _axis_factors(v, l)


def sine_coefficient_rows(v: InitialDatum, rows: np.ndarray, n_modes: int) -> np.ndarray:
    """Rows n in ``rows`` (1-based) of the 2D coefficient grid, for m = 1..n_modes."""

    if v.dim != 2:
        raise ValueError("sine_coefficient_rows is only defined for 2D data")
    n = np.asarray(rows, dtype=float)
    l = np.arange(1, n_modes + 1, dtype=float)
    if v.kind == DELTA_POINT:
        assert v.point is not None
        fx = np.sqrt(2.0) * np.sin(n * np.pi * v.point[0])
        fy = np.sqrt(2.0) * np.sin(l * np.pi * v.point[1])
        return np.outer(fx, fy)
    if v.kind == DELTA_CURVE:

        def q(k: np.ndarray) -> np.ndarray:
            return np.sin(k * np.pi / 4.0) + np.sin(3.0 * k * np.pi / 4.0)

        s_n, s_l = _axis_c(n) / np.sqrt(2.0), _axis_c(l) / np.sqrt(2.0)
        return 2.0 * (np.outer(s_n, q(l)) + np.outer(q(n), s_l))
    if v.kind == CUSTOM:
        full = _custom_coefficients(v, max(n_modes, int(n.max())))
        return full[n.astype(np.int64) - 1, :n_modes]
    return np.outer(_axis_factors(v, n), _axis_factors(v, l))


def sine_coefficients(v: InitialDatum, n: int, m: Optional[int] = None) -> float:
    """(v, phi_nm) for a single mode (1D: m is ignored)."""

    if n < 1 or (v.dim == 2 and (m is None or m < 1)):
        raise ValueError(f"modes are 1-based, got n={n!r}, m={m!r}")
    if v.dim == 1:
        return float(sine_coefficient_grid(v, n)[n - 1])
    mm = int(m or 1)
    return float(sine_coefficient_rows(v, np.array([n]), mm)[0, mm - 1])


# Custom data: composite Gauss-Legendre in each axis.


@lru_cache(maxsize=8)
def _axis_nodes(n_panels: int, per_panel: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(per_panel)
    left = np.arange(n_panels) / n_panels
    nodes = (left[:, None] + 0.5 * (x[None, :] + 1.0) / n_panels).ravel()
    weights = np.tile(0.5 * w / n_panels, n_panels)
    return nodes, weights


def _custom_samples(v: InitialDatum, n_panels: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    nodes, weights = _axis_nodes(n_panels)
    if v.dim == 1:
        return nodes, weights, v.evaluate(nodes[:, None])
    xx, yy = np.meshgrid(nodes, nodes, indexing="ij")
    values = v.evaluate(np.stack([xx.ravel(), yy.ravel()], axis=1)).reshape(xx.shape)
    return nodes, weights, values


# Sample counts grow with the mode count (and with its square in 2D).
CUSTOM_MAX_MODES = {1: 16384, 2: 256}
_SAMPLE_BLOCK = 1 << 22


def _custom_coefficients(v: InitialDatum, n_modes: int) -> np.ndarray:
    cap = CUSTOM_MAX_MODES[v.dim]
    if n_modes > cap:
        raise ValueError(f"custom {v.dim}D data resolves at most {cap} modes per axis, got {n_modes}")
    n_panels = max(32, n_modes)
    nodes, weights, values = _custom_samples(v, n_panels)
    l = np.arange(1, n_modes + 1, dtype=float)
    if v.dim == 2:
        basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(nodes, l)) * weights[:, None]  # (P, K)
        return basis.T @ values @ basis
    out = np.empty(n_modes)
    step = max(1, _SAMPLE_BLOCK // nodes.shape[0])
    wv = weights * values
    for start in range(0, n_modes, step):
        block = np.sqrt(2.0) * np.sin(np.pi * np.outer(l[start : start + step], nodes))
        out[start : start + step] = block @ wv
    return out


def _custom_l2_norm(v: InitialDatum) -> float:
    _, weights, values = _custom_samples(v, 128)
    if v.dim == 1:
        return float(np.sqrt(np.sum(weights * values**2)))
    return float(np.sqrt(weights @ (values**2) @ weights))
