"""Error norms against spectral references and convergence tables.

On uniform meshes the errors are computed in the sine basis: the moments
(u_h, phi_k) of a P1 function have a closed form, so Parseval gives
||u_K - u_h|| without sampling the (kinked, possibly Gibbs-oscillating)
truncated reference. Other meshes fall back to element quadrature, split
on the cells flagged as singular.

Tables are pandas frames with one row per mesh level; ratios compare each
level with the next coarser one in the same (scheme, example, alpha, t)
series. CSV and markdown are written from the same frame.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .assembly import assemble_mass, assemble_stiffness, element_geometry
from .mesh import Mesh, UnsupportedMeshError
from .quadrature import QuadratureRule, rule_for, subdivided_rule
from .spectral import SpectralSolution, evaluate_on_points

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["scheme", "example", "alpha", "t", "h", "l2", "h1", "ratio_l2", "ratio_h1", "rate_l2", "rate_h1"]
SERIES_KEYS = ["scheme", "example", "alpha", "t"]

ERROR_METHODS = ("auto", "spectral", "quadrature")

# Degree of the element rule used for error integrals.
ERROR_RULE_DEGREE = 4
# Sub-cells per axis on refined cells. Even, so cell midpoints are sub-cell vertices.
REFINE_FACTOR = 16
# Cap on entries per chunk of the sine moment sums.
_CHUNK = 1 << 20


@dataclass(frozen=True)
class ErrorNorms:
    l2: float
    h1: float
    reference_converged: bool = True
    reference_tail_l2: float = 0.0
    reference_tail_h1: float = 0.0

    @property
    def annotation(self) -> str:
        """Empty when the reference met its tolerance, else a short uncertainty note."""

        if self.reference_converged:
            return ""
        return f"reference tail ~{self.reference_tail_l2:.1e} (L2), ~{self.reference_tail_h1:.1e} (H1)"


def _phases(n_modes: int, n: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """k pi x_i for modes start+1..stop and nodes x_i = i/n, i = 1..n-1, reduced mod 2 pi exactly."""

    k = np.arange(start + 1, (n_modes if stop is None else stop) + 1, dtype=np.int64)
    return (np.outer(k, np.arange(1, n, dtype=np.int64)) % (2 * n)) * (np.pi / n)


def p1_sine_coefficients(u_h: np.ndarray, mesh: Mesh, n_modes: int) -> np.ndarray:
    """Moments (u_h, phi_k) for modes up to ``n_modes`` per axis, in closed form.

    The 1D hat has Fourier transform h sinc^2; the 2D hat on this
    triangulation is the box spline with directions e1, e2 and e1 + e2, whose
    transform is h^2 sinc(a h/2) sinc(b h/2) sinc((a + b) h/2). Splitting
    2 sin(ax) sin(by) into cosines leaves discrete sine and cosine sums of the
    nodal values.
    """

    if not mesh.uniform:
        raise UnsupportedMeshError("closed-form sine moments need the uniform lattice")
    if u_h.shape != (mesh.n_dofs,):
        raise ValueError(f"u_h must have shape ({mesh.n_dofs},), got {u_h.shape}")
    n = mesh.n_cells_per_axis
    h = mesh.h
    k = np.arange(1, n_modes + 1, dtype=float)
    sn = np.sinc(k * h / 2.0)  # np.sinc(x) = sin(pi x) / (pi x)

    if mesh.dim == 1:
        values = np.empty(n_modes)
        rows = max(1, _CHUNK // max(1, n - 1))
        for start in range(0, n_modes, rows):
            stop = min(n_modes, start + rows)
            values[start:stop] = np.sin(_phases(n_modes, n, start, stop)) @ u_h
        return math.sqrt(2.0) * h * sn**2 * values

    i, j = mesh.grid_index()
    grid = np.zeros((n - 1, n - 1))
    grid[i - 1, j - 1] = u_h
    phase = _phases(n_modes, n)
    sx, cx = np.sin(phase), np.cos(phase)
    out = np.empty((n_modes, n_modes))
    rows = max(1, _CHUNK // n_modes)
    for start in range(0, n_modes, rows):
        stop = min(n_modes, start + rows)
        s = sx[start:stop] @ grid @ sx.T
        c = cx[start:stop] @ grid @ cx.T
        kn = k[start:stop, None]
        base = h * h * sn[start:stop, None] * sn[None, :]
        p = base * np.sinc((kn + k[None, :]) * h / 2.0)
        q = base * np.sinc((kn - k[None, :]) * h / 2.0)
        out[start:stop] = (q + p) * s + (q - p) * c
    return out


def _modal_error_squares(u_h: np.ndarray, ref: SpectralSolution, mesh: Mesh) -> Tuple[float, float]:
    d = p1_sine_coefficients(u_h, mesh, ref.n_modes)
    diff = ref.mode_coefficients - d
    # Energy of u_h beyond the truncation, from the exact P1 norms.
    beyond_l2 = float(u_h @ (assemble_mass(mesh) @ u_h)) - float(np.sum(d**2))
    beyond_h1 = float(u_h @ (assemble_stiffness(mesh) @ u_h)) - float(np.sum(ref.lambdas * d**2))
    l2_sq = float(np.sum(diff**2)) + max(beyond_l2, 0.0)
    h1_sq = float(np.sum(ref.lambdas * diff**2)) + max(beyond_h1, 0.0)
    return l2_sq, h1_sq


def _quadrature_error_squares(
    u_h: np.ndarray, ref: SpectralSolution, mesh: Mesh, refine: Optional[np.ndarray]
) -> Tuple[float, float]:
    mask = np.zeros(mesh.n_cells, dtype=bool) if refine is None else np.asarray(refine, dtype=bool)
    if mask.shape != (mesh.n_cells,):
        raise ValueError(f"refine must be a mask over the {mesh.n_cells} cells, got shape {mask.shape}")
    nodal = mesh.expand(u_h)[mesh.cells]  # (c, d + 1)
    _, grads, measures = element_geometry(mesh)
    uh_grads = np.einsum("ck,ckd->cd", nodal, grads)  # constant per cell

    cells = np.arange(mesh.n_cells)
    parts: List[Tuple[QuadratureRule, np.ndarray]] = [(rule_for(mesh, ERROR_RULE_DEGREE), cells[~mask])]
    if mask.any():
        parts.append((subdivided_rule(mesh, ERROR_RULE_DEGREE, REFINE_FACTOR), cells[mask]))

    l2_sq = h1_sq = 0.0
    for rule, sel in parts:
        if sel.size == 0:
            continue
        pts = np.einsum("qk,ckd->cqd", rule.barycentric, mesh.vertices[mesh.cells[sel]])
        ref_vals, ref_grads = evaluate_on_points(ref, pts.reshape(-1, mesh.dim), with_gradient=True)
        diff = ref_vals.reshape(sel.size, rule.n_points) - nodal[sel] @ rule.barycentric.T
        gdiff = ref_grads.reshape(sel.size, rule.n_points, mesh.dim) - uh_grads[sel, None, :]
        l2_sq += float(measures[sel] @ ((diff**2) @ rule.weights))
        h1_sq += float(measures[sel] @ (np.sum(gdiff**2, axis=2) @ rule.weights))
    return l2_sq, h1_sq


def fe_error_norms(
    u_h: np.ndarray,
    ref: SpectralSolution,
    mesh: Mesh,
    *,
    method: str = "auto",
    refine: Optional[np.ndarray] = None,
) -> ErrorNorms:
    """L2 and H1-seminorm errors of a P1 solution against a spectral reference.

    ``auto`` uses the sine-basis (Parseval) route on the uniform lattice and
    element quadrature otherwise. Quadrature uses the degree-4 rule, split
    REFINE_FACTOR times per axis on the cells in ``refine``. The estimated
    series tail is added in quadrature either way.
    """

    if ref.dim != mesh.dim:
        raise ValueError(f"reference is {ref.dim}D but the mesh is {mesh.dim}D")
    if u_h.shape != (mesh.n_dofs,):
        raise ValueError(f"u_h must have shape ({mesh.n_dofs},), got {u_h.shape}")
    m = (method or "auto").strip().lower()
    if m not in ERROR_METHODS:
        raise ValueError(f"Unknown error norm method {method!r}. Allowed: {list(ERROR_METHODS)}")

    if m == "spectral" or (m == "auto" and mesh.uniform):
        l2_sq, h1_sq = _modal_error_squares(u_h, ref, mesh)
    else:
        l2_sq, h1_sq = _quadrature_error_squares(u_h, ref, mesh, refine)

    return ErrorNorms(
        l2=math.sqrt(l2_sq + ref.tail_l2**2),
        h1=math.sqrt(h1_sq + ref.tail_h1**2),
        reference_converged=ref.converged,
        reference_tail_l2=ref.tail_l2,
        reference_tail_h1=ref.tail_h1,
    )


@dataclass(frozen=True)
class ConvergenceRecord:
    scheme: str
    example: str
    alpha: float
    t: float
    h: float
    n_cells: int
    l2_error: float
    h1_error: float
    normalized: bool
    reference_converged: bool = True
    reference_tail_l2: float = 0.0
    reference_tail_h1: float = 0.0

    def __post_init__(self) -> None:
        if self.l2_error < 0.0 or self.h1_error < 0.0:
            raise ValueError(f"errors must be nonnegative, got l2={self.l2_error!r}, h1={self.h1_error!r}")

    @property
    def ell_h(self) -> float:
        return abs(math.log(self.h))

    @classmethod
    def from_norms(
        cls,
        norms: ErrorNorms,
        *,
        scheme: str,
        example: str,
        alpha: float,
        t: float,
        mesh: Mesh,
        scale: Optional[float] = None,
    ) -> "ConvergenceRecord":
        """Record for one solve; ``scale`` divides both errors (||v|| for normalized runs)."""

        s = 1.0 if scale is None else float(scale)
        if not (s > 0.0):
            raise ValueError(f"normalization scale must be positive, got {scale!r}")
        return cls(
            scheme=scheme,
            example=example,
            alpha=float(alpha),
            t=float(t),
            h=mesh.h,
            n_cells=mesh.n_cells_per_axis,
            l2_error=norms.l2 / s,
            h1_error=norms.h1 / s,
            normalized=scale is not None,
            reference_converged=norms.reference_converged,
            reference_tail_l2=norms.reference_tail_l2 / s,
            reference_tail_h1=norms.reference_tail_h1 / s,
        )


def _refines(coarse_n: int, fine_n: int) -> bool:
    """Fine level halves h: N -> 2N, or 2^k + 1 -> 2^(k+1) + 1 for offset meshes."""

    return fine_n == 2 * coarse_n or fine_n == 2 * coarse_n - 1


def _ratio(coarse: float, fine: float) -> float:
    if fine > 0.0:
        return coarse / fine
    return math.inf if coarse > 0.0 else math.nan


def build_convergence_table(records: Iterable[ConvergenceRecord]) -> pd.DataFrame:
    """One row per record with ratios/rates against the next coarser level.

    Ratio columns are NaN on the coarsest level of a series and where the
    level chain is broken; such rows carry ``gap=True``.
    """

    rows = [asdict(r) | {"ell_h": r.ell_h} for r in records]
    if not rows:
        return pd.DataFrame(columns=CSV_COLUMNS + ["normalized", "ell_h", "gap", "reference_converged"])
    df = pd.DataFrame(rows).rename(columns={"l2_error": "l2", "h1_error": "h1"})
    df = df.sort_values(SERIES_KEYS + ["n_cells"], kind="stable").reset_index(drop=True)

    for col in ("ratio_l2", "ratio_h1", "rate_l2", "rate_h1"):
        df[col] = np.nan
    df["gap"] = False

    for _, idx in df.groupby(SERIES_KEYS, sort=False).groups.items():
        positions = list(idx)
        for prev, cur in zip(positions, positions[1:]):
            if not _refines(int(df.at[prev, "n_cells"]), int(df.at[cur, "n_cells"])):
                df.at[cur, "gap"] = True
                logger.warning(
                    "broken level chain: N=%d follows N=%d",
                    int(df.at[cur, "n_cells"]),
                    int(df.at[prev, "n_cells"]),
                    extra={"scheme": df.at[cur, "scheme"], "example": df.at[cur, "example"]},
                )
                continue
            for norm in ("l2", "h1"):
                r = _ratio(float(df.at[prev, norm]), float(df.at[cur, norm]))
                df.at[cur, f"ratio_{norm}"] = r
                df.at[cur, f"rate_{norm}"] = math.log2(r) if 0.0 < r < math.inf else np.nan

    extras = [c for c in df.columns if c not in CSV_COLUMNS]
    return df[CSV_COLUMNS + extras]


def summarize_rates(table: pd.DataFrame) -> pd.DataFrame:
    """Per-series mean ratio and rate, excluding the coarsest pair (pre-asymptotic)."""

    out: List[Dict[str, object]] = []
    for key, grp in table.groupby(SERIES_KEYS, sort=False):
        row: Dict[str, object] = dict(zip(SERIES_KEYS, key))
        for norm in ("l2", "h1"):
            ratios = grp[f"ratio_{norm}"].dropna()
            if len(ratios) > 1:
                ratios = ratios.iloc[1:]
            mean = float(ratios.mean()) if len(ratios) else math.nan
            row[f"ratio_{norm}"] = mean
            row[f"rate_{norm}"] = math.log2(mean) if mean > 0.0 else math.nan
        out.append(row)
    return pd.DataFrame(out)


def rate_envelope_violations(
    table: pd.DataFrame, l2_band: Tuple[float, float], h1_band: Tuple[float, float]
) -> List[str]:
    """Series whose summary rates fall outside the given bands."""

    problems: List[str] = []
    for _, row in summarize_rates(table).iterrows():
        for norm, (lo, hi) in (("l2", l2_band), ("h1", h1_band)):
            rate = float(row[f"rate_{norm}"])
            if not (lo <= rate <= hi):
                problems.append(
                    f"{row['scheme']}/{row['example']} alpha={row['alpha']} t={row['t']}: "
                    f"{norm} rate {rate:.3f} outside [{lo}, {hi}]"
                )
    return problems


# ----------------------------
# Output
# ----------------------------


def _h_label(n: int) -> str:
    return f"1/{n}"


def _varying(table: pd.DataFrame) -> List[str]:
    cols = [c for c in SERIES_KEYS if table[c].nunique() > 1]
    return cols or ["alpha"]


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.2e}"


def to_markdown(table: pd.DataFrame, title: str = "") -> str:
    """Rows per series and norm, columns per mesh size, then ratio and rate."""

    if table.empty:
        return f"### {title}\n\n(no rows)\n" if title else "(no rows)\n"
    levels = sorted(table["n_cells"].unique())
    label_cols = _varying(table)
    summary = summarize_rates(table)
    header = label_cols + ["norm"] + [_h_label(int(n)) for n in levels] + ["ratio", "rate"]
    lines = []
    if title:
        lines += [f"### {title}", ""]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join(["---"] * len(header)) + "|")
    for (key, grp), (_, srow) in zip(table.groupby(SERIES_KEYS, sort=False), summary.iterrows()):
        by_n = {int(r.n_cells): r for r in grp.itertuples()}
        labels = [str(dict(zip(SERIES_KEYS, key))[c]) for c in label_cols]
        for norm, name in (("l2", "L2"), ("h1", "H1")):
            cells = []
            for n in levels:
                rec = by_n.get(int(n))
                mark = "*" if rec is not None and not rec.reference_converged else ""
                cells.append(_fmt(getattr(rec, norm)) + mark if rec is not None else "-")
            ratio = float(srow[f"ratio_{norm}"])
            rate = float(srow[f"rate_{norm}"])
            lines.append(
                "| "
                + " | ".join(
                    labels
                    + [name]
                    + cells
                    + ["-" if math.isnan(ratio) else f"≈{ratio:.2f}", "-" if math.isnan(rate) else f"{rate:.2f}"]
                )
                + " |"
            )
    if (~table["reference_converged"].astype(bool)).any():
        lines += ["", "`*` reference series did not reach its tolerance; value carries the tail estimate."]
    return "\n".join(lines) + "\n"


def write_table(table: pd.DataFrame, out_dir: Union[str, Path], stem: str, title: str = "") -> List[Path]:
    """``<stem>.csv`` and ``<stem>.md`` under out_dir."""

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    csv_path = root / f"{stem}.csv"
    md_path = root / f"{stem}.md"
    table[CSV_COLUMNS].to_csv(csv_path, index=False, float_format="%.6e")
    md_path.write_text(to_markdown(table, title), encoding="utf-8")
    logger.info("wrote convergence table %s", csv_path)
    return [csv_path, md_path]


def _series_slug(key: Sequence[object]) -> str:
    scheme, example, alpha, t = key
    return f"{scheme}_{example}_a{alpha:g}_t{t:g}".replace(".", "p").replace("-", "m")


def write_plot_data(table: pd.DataFrame, out_dir: Union[str, Path], stem: str) -> List[Path]:
    """Two-column ``log10 h  log10 error`` files per series and norm, plus a gnuplot script."""

    root = Path(out_dir) / f"{stem}_plot"
    root.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    plots: Dict[str, List[str]] = {"l2": [], "h1": []}
    for key, grp in table.groupby(SERIES_KEYS, sort=False):
        slug = _series_slug(key)
        for norm in ("l2", "h1"):
            path = root / f"{slug}_{norm}.dat"
            vals = grp[["h", norm]].to_numpy(dtype=float)
            vals = vals[vals[:, 1] > 0.0]
            np.savetxt(path, np.log10(vals), fmt="%.8f", header=f"log10(h) log10({norm} error)")
            written.append(path)
            plots[norm].append(f"'{path.name}' using 1:2 with linespoints title '{slug}'")

    script = root / "plot.gp"
    lines = ["set terminal pngcairo size 900,600", "set grid", "set xlabel 'log10 h'"]
    for norm in ("l2", "h1"):
        if not plots[norm]:
            continue
        lines += [
            f"set output '{stem}_{norm}.png'",
            f"set ylabel 'log10 {norm.upper()} error'",
            "plot " + ", \\\n     ".join(plots[norm]),
        ]
    script.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(script)
    return written
