from __future__ import annotations

import logging
import math

import numpy as np
import pandas as pd
import pytest

from fracfem.assembly import assemble_mass
from fracfem.error_analysis import (
    CSV_COLUMNS,
    ConvergenceRecord,
    ErrorNorms,
    build_convergence_table,
    fe_error_norms,
    p1_sine_coefficients,
    rate_envelope_violations,
    summarize_rates,
    to_markdown,
    write_plot_data,
    write_table,
)
from fracfem.initial_data import delta_curve, delta_point, nonsmooth_c, singular_cells, smooth_a
from fracfem.jobs import solve_semidiscrete
from fracfem.mesh import build_mesh, mesh_for_level
from fracfem.quadrature import cell_points, subdivided_rule
from fracfem.spectral import evaluate_on_points, exact_solution


def _record(n: int, l2: float, h1: float, **kw) -> ConvergenceRecord:
    base = dict(scheme="lumped", example="c", alpha=0.5, t=0.1, normalized=True)
    base.update(kw)
    return ConvergenceRecord(h=1.0 / n, n_cells=n, l2_error=l2, h1_error=h1, **base)


def test_ratios_against_next_coarser_level():
    records = [_record(n, 4e-2 / (n / 8) ** 2, 0.3 / (n / 8)) for n in (8, 16, 32)]
    table = build_convergence_table(reversed(records))
    assert table["n_cells"].tolist() == [8, 16, 32]
    assert math.isnan(table.loc[0, "ratio_l2"])
    assert table.loc[1:, "ratio_l2"].tolist() == pytest.approx([4.0, 4.0])
    assert table.loc[1:, "ratio_h1"].tolist() == pytest.approx([2.0, 2.0])
    assert table.loc[2, "rate_l2"] == pytest.approx(2.0)
    assert not table["gap"].any()
    assert list(table.columns[: len(CSV_COLUMNS)]) == CSV_COLUMNS


def test_series_are_kept_apart():
    records = [_record(n, 1.0 / n**2, 1.0 / n, alpha=a) for a in (0.3, 0.7) for n in (8, 16)]
    table = build_convergence_table(records)
    assert len(table) == 4
    assert table["ratio_l2"].notna().sum() == 2


def test_broken_chain_is_flagged(caplog):
    records = [_record(8, 1e-2, 0.1), _record(32, 1e-3, 3e-2)]
    with caplog.at_level(logging.WARNING, logger="fracfem.error_analysis"):
        table = build_convergence_table(records)
    assert bool(table.loc[1, "gap"])
    assert math.isnan(table.loc[1, "ratio_l2"])
    assert any("broken level chain" in r.getMessage() for r in caplog.records)


def test_offset_meshes_chain():
    records = [_record(9, 3.04e-3, 8.91e-2), _record(17, 1.17e-3, 6.49e-2), _record(33, 4.34e-4, 4.66e-2)]
    table = build_convergence_table(records)
    assert not table["gap"].any()
    assert table.loc[1, "ratio_l2"] == pytest.approx(3.04e-3 / 1.17e-3)


def test_zero_error_ratio():
    table = build_convergence_table([_record(8, 1e-3, 1e-2), _record(16, 0.0, 0.0)])
    assert math.isinf(table.loc[1, "ratio_l2"])
    assert math.isnan(table.loc[1, "rate_l2"])


def test_empty_table_has_columns():
    table = build_convergence_table([])
    assert table.empty
    assert set(CSV_COLUMNS) <= set(table.columns)


def test_negative_errors_rejected():
    with pytest.raises(ValueError):
        _record(8, -1.0, 0.0)


def test_from_norms_scales_errors():
    mesh = build_mesh(2, 8)
    norms = ErrorNorms(l2=2e-3, h1=4e-2, reference_converged=False, reference_tail_l2=1e-6, reference_tail_h1=2e-4)
    rec = ConvergenceRecord.from_norms(norms, scheme="lumped", example="c", alpha=0.5, t=0.1, mesh=mesh, scale=0.5)
    assert rec.l2_error == pytest.approx(4e-3)
    assert rec.h1_error == pytest.approx(8e-2)
    assert rec.normalized
    assert rec.reference_tail_h1 == pytest.approx(4e-4)
    assert rec.ell_h == pytest.approx(math.log(8))
    raw = ConvergenceRecord.from_norms(norms, scheme="lumped", example="c", alpha=0.5, t=0.1, mesh=mesh)
    assert not raw.normalized and raw.l2_error == 2e-3
    with pytest.raises(ValueError):
        ConvergenceRecord.from_norms(norms, scheme="lumped", example="c", alpha=0.5, t=0.1, mesh=mesh, scale=0.0)
    assert "reference tail" in norms.annotation
    assert ErrorNorms(l2=1.0, h1=1.0).annotation == ""


def test_summary_skips_coarsest_pair():
    l2 = [1e-1, 1e-2, 2.5e-3, 6.25e-4]
    table = build_convergence_table([_record(n, e, e) for n, e in zip((8, 16, 32, 64), l2)])
    summary = summarize_rates(table)
    assert len(summary) == 1
    assert summary.loc[0, "ratio_l2"] == pytest.approx(4.0)
    assert summary.loc[0, "rate_l2"] == pytest.approx(2.0)


def test_rate_envelope():
    table = build_convergence_table([_record(n, 1.0 / n**2, 1.0 / n) for n in (8, 16, 32)])
    assert rate_envelope_violations(table, (1.9, 2.1), (0.9, 1.1)) == []
    problems = rate_envelope_violations(table, (2.5, 3.0), (0.9, 1.1))
    assert len(problems) == 1 and "l2 rate" in problems[0]


def test_markdown_layout():
    records = [_record(n, 1.0 / n**2, 1.0 / n) for n in (8, 16)]
    records.append(_record(32, 1.0 / 32**2, 1.0 / 32, reference_converged=False))
    md = to_markdown(build_convergence_table(records), title="demo")
    lines = md.splitlines()
    assert lines[0] == "### demo"
    assert lines[2].startswith("| alpha | norm | 1/8 | 1/16 | 1/32 | ratio | rate |")
    assert "≈4.00" in md
    assert "*" in lines[4]
    assert "did not reach its tolerance" in md
    assert to_markdown(pd.DataFrame()) == "(no rows)\n"


def test_write_table_and_plot_data(tmp_path):
    table = build_convergence_table([_record(n, 1.0 / n**2, 1.0 / n) for n in (8, 16, 32)])
    paths = write_table(table, tmp_path, "demo", title="demo")
    assert [p.name for p in paths] == ["demo.csv", "demo.md"]
    back = pd.read_csv(paths[0])
    assert list(back.columns) == CSV_COLUMNS
    assert len(back) == 3

    plot_paths = write_plot_data(table, tmp_path, "demo")
    names = sorted(p.name for p in plot_paths)
    assert names == ["lumped_c_a0p5_t0p1_h1.dat", "lumped_c_a0p5_t0p1_l2.dat", "plot.gp"]
    data = np.loadtxt(tmp_path / "demo_plot" / "lumped_c_a0p5_t0p1_l2.dat")
    assert data.shape == (3, 2)
    assert np.allclose(np.diff(data[:, 1]) / np.diff(data[:, 0]), 2.0)
    assert "pngcairo" in (tmp_path / "demo_plot" / "plot.gp").read_text()


def test_zero_solution_error_is_reference_norm():
    ref = exact_solution(smooth_a(), 0.5, 0.1)
    mesh = build_mesh(2, 16)
    norms = fe_error_norms(np.zeros(mesh.n_dofs), ref, mesh)
    assert norms.l2 == pytest.approx(ref.l2_norm, rel=1e-4)
    assert norms.h1 == pytest.approx(ref.h1_seminorm, rel=1e-3)
    assert norms.reference_converged


def test_error_norms_check_shapes():
    ref = exact_solution(smooth_a(), 0.5, 0.1)
    with pytest.raises(ValueError):
        fe_error_norms(np.zeros(3), ref, build_mesh(2, 4))
    with pytest.raises(ValueError):
        fe_error_norms(np.zeros(3), ref, build_mesh(1, 4))


def test_dirac_standard_fem_cell():
    # h = 1/9, alpha = 0.5, t = 1: the coarsest cell of the offset-mesh Dirac table.
    v = delta_point((0.5,))
    mesh = mesh_for_level(1, 3, "offset")
    assert mesh.n_cells_per_axis == 9
    u_h = solve_semidiscrete(v, mesh, "standard", 0.5, [1.0])[1.0]
    ref = exact_solution(v, 0.5, 1.0, tol=1e-9)
    norms = fe_error_norms(u_h, ref, mesh)
    assert norms.l2 == pytest.approx(3.04e-3, rel=0.10)
    assert norms.h1 == pytest.approx(8.91e-2, rel=0.10)
    assert norms.l2 == pytest.approx(3.0098e-3, rel=0.02)
    assert norms.h1 == pytest.approx(9.39e-2, rel=0.02)


def _offset_dirac_case():
    v = delta_point((0.5,))
    mesh = mesh_for_level(1, 3, "offset")
    u_h = solve_semidiscrete(v, mesh, "standard", 0.5, [1.0])[1.0]
    ref = exact_solution(v, 0.5, 1.0, tol=1e-9, max_modes=2048)
    return v, mesh, u_h, ref


def _fine_grid_errors(u_h, ref, mesh, pieces: int = 800):
    # Composite 5-point Gauss between mesh nodes and 1/2, each span cut into `pieces` parts.
    breaks = np.union1d(mesh.vertices[:, 0], [0.5])
    edges = np.concatenate([np.linspace(a, b, pieces + 1)[:-1] for a, b in zip(breaks, breaks[1:])] + [[1.0]])
    g, w = np.polynomial.legendre.leggauss(5)
    lo, width = edges[:-1], np.diff(edges)
    x = (lo[:, None] + 0.5 * (g[None, :] + 1.0) * width[:, None]).ravel()
    wx = (0.5 * w[None, :] * width[:, None]).ravel()

    nodal = mesh.expand(u_h)
    slopes = np.diff(nodal) / mesh.h
    cell = np.minimum((x / mesh.h).astype(int), mesh.n_cells_per_axis - 1)
    vals, grads = evaluate_on_points(ref, x[:, None], with_gradient=True)
    l2_sq = float(wx @ (vals - np.interp(x, mesh.vertices[:, 0], nodal)) ** 2)
    h1_sq = float(wx @ (grads[:, 0] - slopes[cell]) ** 2)
    return math.sqrt(l2_sq + ref.tail_l2**2), math.sqrt(h1_sq + ref.tail_h1**2)


def test_offset_dirac_norms_match_fine_grid_integral():
    _, mesh, u_h, ref = _offset_dirac_case()
    l2, h1 = _fine_grid_errors(u_h, ref, mesh)
    norms = fe_error_norms(u_h, ref, mesh)
    assert norms.l2 == pytest.approx(l2, rel=1e-4)
    assert norms.h1 == pytest.approx(h1, rel=1e-4)
    assert norms.l2 == pytest.approx(3.0098e-3, rel=0.02)


def test_split_quadrature_agrees_on_offset_dirac():
    v, mesh, u_h, ref = _offset_dirac_case()
    refine = singular_cells(v, mesh)
    assert refine.sum() == 1
    modal = fe_error_norms(u_h, ref, mesh, method="spectral")
    split = fe_error_norms(u_h, ref, mesh, method="quadrature", refine=refine)
    assert split.l2 == pytest.approx(modal.l2, rel=0.05)
    assert split.h1 == pytest.approx(modal.h1, rel=0.05)
    with pytest.raises(ValueError):
        fe_error_norms(u_h, ref, mesh, method="quadrature", refine=np.ones(3, dtype=bool))
    with pytest.raises(ValueError):
        fe_error_norms(u_h, ref, mesh, method="simpson")


@pytest.mark.parametrize("dim,n", [(1, 5), (2, 4)])
def test_p1_sine_coefficients_match_quadrature(dim: int, n: int):
    mesh = build_mesh(dim, n)
    u_h = np.random.default_rng(3).standard_normal(mesh.n_dofs)
    k = 4
    rule = subdivided_rule(mesh, 5, 16)
    pts = cell_points(mesh, rule).reshape(-1, dim)
    u_pts = (mesh.expand(u_h)[mesh.cells] @ rule.barycentric.T).ravel()
    weights = np.tile(rule.weights, mesh.n_cells) * mesh.cell_measure
    modes = np.arange(1, k + 1) * np.pi
    sx = np.sqrt(2.0) * np.sin(np.outer(modes, pts[:, 0]))
    if dim == 1:
        expected = sx @ (weights * u_pts)
    else:
        sy = np.sqrt(2.0) * np.sin(np.outer(modes, pts[:, 1]))
        expected = (sx * (weights * u_pts)) @ sy.T
    assert np.allclose(p1_sine_coefficients(u_h, mesh, k), expected, rtol=0.0, atol=1e-8)


def test_p1_sine_coefficients_capture_the_mass_norm():
    # Parseval: sum of squared moments tends to u^T M u as the mode count grows.
    mesh = build_mesh(2, 8)
    u_h = np.random.default_rng(5).standard_normal(mesh.n_dofs)
    d = p1_sine_coefficients(u_h, mesh, 256)
    mass_norm_sq = float(u_h @ (assemble_mass(mesh) @ u_h))
    assert float(np.sum(d**2)) == pytest.approx(mass_norm_sq, rel=1e-3)
    assert float(np.sum(d**2)) <= mass_norm_sq * (1.0 + 1e-12)


def test_singular_cells():
    mesh = build_mesh(2, 8)
    assert not singular_cells(smooth_a(), mesh).any()
    c_cells = singular_cells(nonsmooth_c(), mesh)
    assert c_cells.any() and not c_cells.all()
    assert singular_cells(delta_curve(), mesh).sum() > 0
    offset = mesh_for_level(1, 4, "offset")
    cells = np.flatnonzero(singular_cells(delta_point((0.5,)), offset))
    assert cells.tolist() == [8]
