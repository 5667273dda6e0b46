from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from polytransport.assembly import (
    ErrorRow,
    ErrorTable,
    asymptotic_solution,
    compare_fields,
    convergence_study,
    fitted_orders,
    generalized_mass,
    residual_of,
    residual_times,
)
from polytransport.errors import GridMismatch
from polytransport.full_solver import solve_full
from polytransport.grids import SpatialGrid
from polytransport.problem import build_problem, reference_config
from polytransport.transport import StepControl

CONTROL = StepControl(stiff_ratio=0.5)


def run_pair(problem, eps, times):
    asym = asymptotic_solution(
        problem.profiles, problem.op, eps, problem.u0, problem.v0, problem.grid, times, CONTROL,
        spectrum=problem.spectrum,
    )
    full = solve_full(
        problem.profiles, problem.op, eps, problem.u0, problem.v0, problem.grid, times, CONTROL
    )
    return asym, full


def test_composite_reproduces_initial_data(small_reference):
    p = small_reference
    asym = asymptotic_solution(p.profiles, p.op, 0.1, p.u0, p.v0, p.grid, [0.0, 0.1])
    comp = asym.composite
    assert np.max(np.abs(comp.u[0] - p.u0)) <= 1e-10
    assert np.max(np.abs(comp.v[0] - p.v0)) <= 1e-10


def test_equilibrium_data_give_regular_part_only():
    cfg = reference_config()
    cfg["initial"] = {k: v for k, v in cfg["initial"].items() if k != "modes"}
    p = build_problem(cfg, SpatialGrid(16, 13))
    comp = asymptotic_solution(p.profiles, p.op, 0.1, p.u0, p.v0, p.grid, [0.0, 0.05]).composite
    # projection onto h0 is exact only up to roundoff for two bins
    assert np.max(np.abs(comp.u - comp.u_regular)) < 1e-14
    assert np.max(np.abs(comp.v - comp.v_regular)) < 1e-14


def test_single_bin_composite_is_exactly_the_reduced_solution():
    cfg = reference_config(operator={"builtin": "single_bin"})
    cfg["profiles"] = dict(cfg["profiles"], alpha=0.5, beta=1.0)
    cfg["profiles"]["Kz"] = {"family": "linear", "a": 0.02, "b": 0.03}
    cfg["initial"] = {k: v for k, v in cfg["initial"].items() if k != "modes"}
    p = build_problem(cfg, SpatialGrid(16, 13))
    asym = asymptotic_solution(p.profiles, p.op, 0.1, p.u0, p.v0, p.grid, [0.0, 0.05])
    comp = asym.composite
    assert np.array_equal(comp.u[..., 0], asym.reduced.snapshots)
    assert np.array_equal(comp.v[..., 0], 0.5 * asym.reduced.snapshots[:, :, 0])


def test_layer_has_decayed_long_after_the_fast_scale(small_reference):
    p = small_reference
    eps = 0.1
    lam1 = abs(p.spectrum.eigenvalues[1].real)
    t_late = 10 * eps**2 / lam1 * 8  # exp(-80) of the initial amplitude
    comp = asymptotic_solution(p.profiles, p.op, eps, p.u0, p.v0, p.grid, [t_late]).composite
    assert np.max(np.abs(comp.u - comp.u_regular)) < 1e-8
    assert np.max(np.abs(comp.v - comp.v_regular)) < 1e-8


def test_compare_fields_examples(small_reference):
    p = small_reference
    comp = asymptotic_solution(p.profiles, p.op, 0.1, p.u0, p.v0, p.grid, [0.02, 0.1]).composite
    rows = compare_fields(comp, comp, p.op.grid, "sup")
    assert all(r.error_u == 0 and r.error_v == 0 for r in rows)
    shifted = dataclasses.replace(comp, u_regular=comp.u_regular + 0.25, v_regular=comp.v_regular + 0.25)
    rows = compare_fields(comp, shifted, p.op.grid, "sup")
    assert all(r.error_u == pytest.approx(0.25, abs=1e-15) for r in rows)
    # L2 of a constant over a unit domain with unit size weights
    rows = compare_fields(comp, shifted, p.op.grid, "L2")
    assert rows[0].error_u == pytest.approx(0.25 * np.sqrt(2), rel=1e-12)
    other = dataclasses.replace(comp, times=comp.times + 1e-3)
    with pytest.raises(GridMismatch):
        compare_fields(comp, other, p.op.grid)


def test_generalized_mass_of_composite_matches_direct(small_reference):
    p = small_reference
    asym, full = run_pair(p, 0.1, [0.01, 0.1, 0.5])
    s = p.spectrum
    m0 = generalized_mass(p.u0, p.v0, s, p.grid)
    for k in range(full.times.size):
        m_comp = generalized_mass(asym.composite.u[k], asym.composite.v[k], s, p.grid)
        m_full = generalized_mass(full.u[k], full.v[k], s, p.grid)
        assert abs(m_comp - m_full) <= 1e-5 * abs(m0)
        assert abs(m_full - m0) <= 1e-12 * abs(m0)


def test_residual_of_zero_field_is_zero(small_reference):
    p = small_reference

    @dataclasses.dataclass
    class Zero:
        times: np.ndarray
        u: np.ndarray
        v: np.ndarray
        grid: SpatialGrid

    times = np.linspace(0, 0.1, 5)
    z = Zero(times, np.zeros((5,) + p.u0.shape), np.zeros((5,) + p.v0.shape), p.grid)
    r = residual_of(z, p.profiles, p.op, 0.1)
    assert (r.interior, r.flux, r.exchange) == (0.0, 0.0, 0.0)


def test_direct_solution_residual_is_at_truncation_level(small_reference):
    p = small_reference
    eps = 0.2
    times = residual_times(eps, 0.2, n_layer=64, n_outer=64)
    asym, full = run_pair(p, eps, times)
    r_comp = residual_of(asym.composite, p.profiles, p.op, eps)
    r_full = residual_of(full, p.profiles, p.op, eps)
    for key in ("interior", "exchange", "flux"):
        assert getattr(r_full, key) < 0.2 * getattr(r_comp, key), key
    # refining the snapshot spacing shrinks the finite-difference defect
    times2 = residual_times(eps, 0.2, n_layer=128, n_outer=128)
    _, full2 = run_pair(p, eps, times2)
    assert residual_of(full2, p.profiles, p.op, eps).interior < r_full.interior


def test_residual_times_cover_both_scales():
    t = residual_times(0.1, 0.5, n_layer=10, n_outer=5)
    assert t[0] == 0.0 and t[-1] == 0.5 and t[10] == pytest.approx(0.3)
    assert np.all(np.diff(t) > 0)


def fake_rows():
    return [
        ErrorRow(0.2, "g", "L2", 0.5, 4e-4, 2e-4),
        ErrorRow(0.1, "g", "L2", 0.5, 1e-4, 0.5e-4),
    ]


def test_fitted_orders_and_csv():
    orders = fitted_orders(fake_rows()[::-1], 0.5)
    assert [o["order"] for o in orders] == pytest.approx([2.0, 2.0, 2.0])
    table = ErrorTable(rows=fake_rows())
    lines = table.to_csv().splitlines()
    assert lines[0] == "epsilon,grid,norm,t,error_u,error_v,error_state"
    assert lines[1].split(",")[:4] == ["0.20000000000000001", "g", "L2", "0.5"]
    assert "runtime" not in table.to_csv()


def tiny_factory(grid):
    cfg = reference_config(grid={"nx": 8, "nz": 7})
    return build_problem(cfg, grid)


def test_convergence_study_is_order_invariant():
    kw = dict(t_eval=0.05, control=CONTROL, refine=False, residuals=False)
    a = convergence_study(tiny_factory, [0.2, 0.1], **kw)
    b = convergence_study(tiny_factory, [0.1, 0.2], **kw)
    assert a.to_csv() == b.to_csv()
    assert [r.epsilon for r in a.rows][0] == 0.2
    assert {o["field"] for o in a.orders} == {"u", "v", "state"}


def test_convergence_study_single_epsilon_has_no_order():
    t = convergence_study(tiny_factory, [0.2], t_eval=0.05, control=CONTROL, refine=False, residuals=False)
    assert t.orders == [] and len(t.rows) == 4


def test_convergence_study_thread_count_does_not_change_results():
    kw = dict(t_eval=0.05, control=CONTROL, refine=True, residuals=True)
    a = convergence_study(tiny_factory, [0.2, 0.1], threads=1, **kw)
    b = convergence_study(tiny_factory, [0.2, 0.1], threads=3, **kw)
    assert a.to_csv() == b.to_csv()
    assert a.residuals == b.residuals
    assert len(a.refinement) == 2
