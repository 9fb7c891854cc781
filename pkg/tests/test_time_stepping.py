from __future__ import annotations

import dataclasses
import math

import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fracfem import time_stepping
from fracfem.assembly import OperatorPair, operator_pair
from fracfem.checks import l1_norm_excess
from fracfem.initial_data import nonsmooth_c
from fracfem.mesh import build_mesh
from fracfem.mittag_leffler import mittag_leffler
from fracfem.time_stepping import (
    HistoryBudgetError,
    TimeGrid,
    l1_kappa,
    l1_solve,
    l1_step_matrix,
    l1_weights,
    scalar_l1,
    temporal_refinement_study,
)


def _diagonal_pair(lams, masses=None) -> OperatorPair:
    lams = np.asarray(lams, dtype=float)
    d = np.ones_like(lams) if masses is None else np.asarray(masses, dtype=float)
    return OperatorPair(stiffness=sp.diags(lams * d, format="csr"), mass=sp.diags(d, format="csr"), lumped=True)


def test_time_grid_basics():
    grid = TimeGrid(tau=0.1, n_steps=10)
    assert grid.t_final == pytest.approx(1.0)
    assert grid.times().shape == (11,)
    assert grid.step_of(0.3) == 3
    assert grid.step_of(1.0) == 10
    with pytest.raises(ValueError):
        grid.step_of(0.15)
    with pytest.raises(ValueError):
        grid.step_of(1.1)


@pytest.mark.parametrize("tau,n_steps", [(0.0, 5), (-0.1, 5), (float("inf"), 5), (0.1, 0)])
def test_time_grid_rejects_bad_values(tau, n_steps):
    with pytest.raises(ValueError):
        TimeGrid(tau=tau, n_steps=n_steps)


def test_covering_grid():
    grid = TimeGrid.covering(1e-3, [0.01, 0.1])
    assert grid.n_steps == 100
    assert grid.step_of(0.01) == 10
    with pytest.raises(ValueError):
        TimeGrid.covering(0.1, [0.25])
    with pytest.raises(ValueError):
        TimeGrid.covering(0.1, [])
    with pytest.raises(ValueError):
        TimeGrid.covering(0.1, [0.0, 0.5])


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("n", [1, 7, 1000, 100000])
def test_l1_weights_telescope(alpha, n):
    b = l1_weights(alpha, n)
    assert b[0] == 1.0
    assert math.fsum(b) == pytest.approx(n ** (1.0 - alpha), rel=1e-13)
    assert np.all(b > 0)
    assert np.all(np.diff(b) < 0)


@settings(max_examples=80, deadline=None)
@given(alpha=st.floats(min_value=0.05, max_value=0.99), n=st.integers(min_value=1, max_value=5000))
def test_l1_weights_properties(alpha: float, n: int):
    b = l1_weights(alpha, n)
    assert b.shape == (n,)
    assert b[0] == 1.0
    assert np.all(b > 0.0)
    assert np.all(np.diff(b) < 0.0)
    assert math.fsum(b) == pytest.approx(n ** (1.0 - alpha), rel=1e-12)


@st.composite
def _spd_systems(draw):
    k = draw(st.integers(min_value=2, max_value=6))
    entries = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)
    q = np.array(draw(st.lists(entries, min_size=k * k, max_size=k * k))).reshape(k, k)
    a = q @ q.T + 0.1 * np.eye(k)
    masses = np.array(draw(st.lists(st.floats(min_value=0.5, max_value=2.0), min_size=k, max_size=k)))
    v = np.array(draw(st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=k, max_size=k)))
    return 0.5 * (a + a.T), masses, v


@settings(max_examples=60, deadline=None)
@given(
    system=_spd_systems(),
    alpha=st.floats(min_value=0.05, max_value=0.99),
    tau=st.floats(min_value=1e-3, max_value=1e-1),
    n_steps=st.integers(min_value=1, max_value=40),
)
def test_l1_solve_is_stable_for_spd_pairs(system, alpha: float, tau: float, n_steps: int):
    a, masses, v = system
    assert l1_norm_excess(a, masses, v, alpha, tau, n_steps) <= 1e-10


def test_l1_weights_alpha_one_is_backward_euler():
    assert np.array_equal(l1_weights(1.0, 4), np.array([1.0, 0.0, 0.0, 0.0]))


def test_l1_weights_reject_bad_input():
    with pytest.raises(ValueError):
        l1_weights(0.0, 3)
    with pytest.raises(ValueError):
        l1_weights(0.5, 0)


def test_l1_kappa():
    assert l1_kappa(0.5, 0.01) == pytest.approx(1.0 / (math.gamma(1.5) * 0.1))
    assert l1_kappa(1.0, 0.01) == pytest.approx(100.0)


def test_step_matrix_solves_shifted_system():
    pair = _diagonal_pair([1.0, 4.0, 9.0], masses=[0.5, 1.0, 2.0])
    system = l1_step_matrix(pair, 0.5, 0.01)
    rhs = np.array([1.0, 2.0, 3.0])
    expected = rhs / (system.kappa * np.array([0.5, 1.0, 2.0]) + np.array([0.5, 4.0, 18.0]))
    assert np.allclose(system.solve(rhs), expected)
    with pytest.raises(ValueError):
        l1_step_matrix(pair, 0.5, 0.0)


def test_l1_solve_decouples_into_scalar_modes():
    lams = [0.5, 3.0, 40.0]
    v = np.array([1.0, -2.0, 0.5])
    grid = TimeGrid(tau=0.02, n_steps=25)
    res = l1_solve(_diagonal_pair(lams, masses=[1.0, 2.0, 0.25]), v, 0.6, grid, [0.2, 0.5])
    for k, lam in enumerate(lams):
        y = scalar_l1(lam, 0.6, 0.02, 25, y0=v[k])
        assert res.solutions[0.2][k] == pytest.approx(y[10], rel=1e-12)
        assert res.solutions[0.5][k] == pytest.approx(y[25], rel=1e-12)


def test_l1_solve_with_source():
    lam, alpha, tau, n_steps = 2.0, 0.4, 0.05, 12
    grid = TimeGrid(tau=tau, n_steps=n_steps)
    res = l1_solve(_diagonal_pair([lam]), np.array([0.3]), alpha, grid, [grid.t_final], source=lambda t: np.array([t]))

    kappa = l1_kappa(alpha, tau)
    b = l1_weights(alpha, n_steps)
    y = [0.3]
    for n in range(1, n_steps + 1):
        conv = b[n - 1] * y[0] + sum((b[j - 1] - b[j]) * y[n - j] for j in range(1, n))
        y.append((kappa * conv + n * tau) / (kappa + lam))
    assert res.solutions[grid.t_final][0] == pytest.approx(y[-1], rel=1e-12)


@pytest.mark.parametrize("alpha", [0.3, 0.7])
def test_scalar_l1_converges_to_mittag_leffler(alpha):
    exact = mittag_leffler(alpha, 1.0, -1.0)
    errs = [abs(scalar_l1(1.0, alpha, 1.0 / n, n)[-1] - exact) for n in (40, 80, 160)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-2


def test_scalar_l1_alpha_one_is_first_order():
    exact = math.exp(-1.0)
    e1 = abs(scalar_l1(10.0, 1.0, 1e-3, 100)[-1] - exact)
    e2 = abs(scalar_l1(10.0, 1.0, 5e-4, 200)[-1] - exact)
    assert e1 / e2 == pytest.approx(2.0, rel=0.1)


def test_l1_solve_is_contractive_for_lumped_operators():
    mesh = build_mesh(1, 16)
    pair = operator_pair(mesh, "lumped")
    rng = np.random.default_rng(3)
    v = rng.standard_normal(mesh.n_dofs)
    grid = TimeGrid(tau=0.01, n_steps=20)
    res = l1_solve(pair, v, 0.5, grid, list(grid.times()[1:]))
    d = pair.mass_diagonal()
    norms = [math.sqrt(v @ (d * v))] + [math.sqrt(u @ (d * u)) for u in res.solutions.values()]
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


def test_trajectory_csv(tmp_path):
    grid = TimeGrid(tau=0.1, n_steps=5)
    v = np.array([1.0, 1.0])
    target = tmp_path / "traj" / "run.csv"
    res = l1_solve(_diagonal_pair([1.0, 2.0]), v, 0.5, grid, [0.5], trajectory_path=target)
    assert target.exists()
    df = pd.read_csv(target)
    assert list(df.columns) == ["t", "l2_norm"]
    assert len(df) == 6
    assert df["l2_norm"].iloc[0] == pytest.approx(math.sqrt(2.0))
    assert df["l2_norm"].is_monotonic_decreasing
    assert res.trajectory is not None and len(res.trajectory) == 6


def test_l1_solve_rejects_mismatched_vector():
    with pytest.raises(ValueError):
        l1_solve(_diagonal_pair([1.0, 2.0]), np.ones(3), 0.5, TimeGrid(0.1, 2), [0.2])


def test_history_budget(monkeypatch):
    monkeypatch.setattr(time_stepping, "settings", dataclasses.replace(time_stepping.settings, max_history_mb=0))
    with pytest.raises(HistoryBudgetError) as exc:
        l1_solve(_diagonal_pair([1.0]), np.ones(1), 0.5, TimeGrid(0.1, 10), [1.0])
    assert "FRACFEM_MAX_HISTORY_MB" in str(exc.value)
    assert isinstance(exc.value, MemoryError)


def test_temporal_refinement_study():
    mesh = build_mesh(2, 8)
    df = temporal_refinement_study(nonsmooth_c(), mesh, 0.5, 0.1, [0.02, 0.01, 0.005])
    assert list(df.columns) == ["h", "tau", "n_steps", "l2", "h1"]
    assert df["n_steps"].tolist() == [5, 10, 20]
    assert (df["h"] == mesh.h).all()
    assert df["l2"].is_monotonic_decreasing
    assert df["h1"].is_monotonic_decreasing
    assert (df["l2"] > 0).all()


def test_temporal_refinement_study_normalized_coarsest_cell():
    # h = 1/8, tau = 1e-2, alpha = 0.5, t = 0.1, errors divided by ||v|| = 1/2.
    v = nonsmooth_c()
    df = temporal_refinement_study(v, build_mesh(2, 8), 0.5, 0.1, [1e-2], scale=v.l2_norm)
    assert df.loc[0, "l2"] == pytest.approx(2.03e-3, rel=0.03)
    assert df.loc[0, "h1"] == pytest.approx(9.45e-3, rel=0.03)
    raw = temporal_refinement_study(v, build_mesh(2, 8), 0.5, 0.1, [1e-2])
    assert raw.loc[0, "l2"] == pytest.approx(0.5 * df.loc[0, "l2"])
    with pytest.raises(ValueError):
        temporal_refinement_study(v, build_mesh(2, 8), 0.5, 0.1, [1e-2], scale=0.0)
