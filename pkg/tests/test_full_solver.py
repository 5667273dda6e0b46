from __future__ import annotations

import numpy as np
import pytest

from oracles import taylor_expm
from polytransport.coefficients import Profiles
from polytransport.errors import Condition2Violated, GridMismatch, SplittingStepTooLarge
from polytransport.full_solver import FullStepper, generalized_mass, solve_full, step_diagnostics
from polytransport.grids import SpatialGrid
from polytransport.size_space import chain_operator, spectral_decompose, two_bin_operator
from polytransport.transport import StepControl


def generic_profiles(grid, n_p=2):
    z = grid.z
    kz = np.column_stack([0.02 + 0.03 * z * (k + 1) for k in range(n_p)])
    return Profiles(
        V=0.3 + 0.2 * z,
        Kx=np.full(grid.nz, 0.01),
        Kz=kz,
        w=np.linspace(0.02, 0.08, n_p),
        alpha=np.linspace(0.3, 0.9, n_p),
        beta=np.linspace(1.0, 0.5, n_p),
    )


def smooth_state(grid, spectrum, profiles, seed=1):
    rng = np.random.default_rng(seed)
    X, Z = grid.mesh()
    base = 1 + 0.4 * np.sin(2 * np.pi * X)[..., None] * np.exp(-Z)[..., None]
    u0 = base * rng.uniform(0.5, 1.5, spectrum.size)
    v0 = profiles.c * u0[:, 0, :]
    return u0, v0


def test_stiff_propagators_match_taylor_oracle():
    g = SpatialGrid(4, 9)
    op = two_bin_operator()
    st = FullStepper(generic_profiles(g), op, 0.1, g)
    h = 3e-4
    e_int, e_bot = st.propagators(h)
    assert np.allclose(e_int, taylor_expm(h * st.interior_generator), rtol=0, atol=1e-13)
    assert np.allclose(e_bot, taylor_expm(h * st.bottom_generator), rtol=0, atol=1e-13)


def test_stiff_blocks_conserve_generalized_mass():
    g = SpatialGrid(4, 9)
    op = chain_operator(3)
    st = FullStepper(generic_profiles(g, 3), op, 0.05, g)
    s = spectral_decompose(op)
    # interior: columns of exp(hA) keep (., h0*) ; bottom block keeps (dz/2) u0 + v
    e_int, e_bot = st.propagators(0.01)
    q_star = s.grid.weights * s.adjoint_null
    assert np.allclose(q_star @ e_int, q_star, atol=1e-14)
    weight = np.concatenate([g.dz / 2 * q_star, q_star])
    assert np.allclose(weight @ e_bot, weight, atol=1e-14)


def test_generalized_mass_is_conserved_on_generic_profiles():
    g = SpatialGrid(12, 11)
    op = chain_operator(3)
    s = spectral_decompose(op)
    prof = generic_profiles(g, 3)
    u0, v0 = smooth_state(g, s, prof)
    traj = solve_full(prof, op, 0.2, u0, v0, g, [0.1, 0.3], StepControl(stiff_ratio=2.0))
    m0 = generalized_mass(u0, v0, s, g)
    for k in range(traj.times.size):
        assert abs(generalized_mass(traj.u[k], traj.v[k], s, g) - m0) <= 1e-12 * abs(m0)


def test_generalized_mass_examples():
    g = SpatialGrid(8, 5)
    s = spectral_decompose(two_bin_operator())
    zero_u, zero_v = np.zeros((8, 5, 2)), np.zeros((8, 2))
    assert generalized_mass(zero_u, zero_v, s, g) == 0.0
    u = np.broadcast_to(s.h0, (8, 5, 2))
    assert generalized_mass(u, zero_v, s, g) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(GridMismatch):
        generalized_mass(u, np.zeros((7, 2)), s, g)


def test_balanced_uniform_state_is_steady():
    g = SpatialGrid(6, 7)
    op = two_bin_operator()
    s = spectral_decompose(op)
    prof = Profiles(
        V=np.full(7, 0.4), Kx=np.full(7, 0.02), Kz=np.full((7, 2), 0.05), w=np.zeros(2),
        alpha=np.array([0.5, 1.0]), beta=np.array([1.0, 2.0]),
    )
    u0 = np.broadcast_to(2.0 * s.h0, (6, 7, 2)).copy()
    v0 = prof.c * u0[:, 0, :]
    traj = solve_full(prof, op, 0.1, u0, v0, g, [0.2])
    assert np.max(np.abs(traj.u[-1] - u0)) < 1e-13
    assert np.max(np.abs(traj.v[-1] - v0)) < 1e-13


def test_split_step_is_consistent_with_unsplit_rhs():
    g = SpatialGrid(6, 7)
    op = two_bin_operator()
    s = spectral_decompose(op)
    prof = generic_profiles(g)
    u0, v0 = smooth_state(g, s, prof)
    u0[:, 3] += 0.1 * s.right_modes[:, 1].real
    st = FullStepper(prof, op, 0.5, g)
    du, dv = st.rhs(u0, v0)
    errs = []
    for dt in (1e-4, 5e-5):
        u1, v1 = st.step(u0, v0, dt)
        errs.append(max(np.max(np.abs((u1 - u0) / dt - du)), np.max(np.abs((v1 - v0) / dt - dv))))
    assert errs[1] < 0.6 * errs[0]
    assert errs[1] < 1e-2 * max(np.max(np.abs(du)), 1.0)


def test_step_halving_diagnostics():
    g = SpatialGrid(6, 7)
    op = two_bin_operator()
    s = spectral_decompose(op)
    prof = generic_profiles(g)
    u0, v0 = smooth_state(g, s, prof)
    traj = solve_full(prof, op, 0.2, u0, v0, g, [0.05, 0.1], StepControl(stiff_ratio=1.0))
    rows = step_diagnostics(traj, s)
    assert [r["t"] for r in rows] == [0.05, 0.1]
    fine = solve_full(prof, op, 0.2, u0, v0, g, [0.05, 0.1], StepControl(stiff_ratio=0.25))
    fine_rows = step_diagnostics(fine, s)
    # Strang local error is third order: quartering dt shrinks it by about 64
    for r, f in zip(rows, fine_rows):
        assert f["halving_error"] < r["halving_error"] / 16
    assert rows[0]["generalized_mass"] == pytest.approx(rows[1]["generalized_mass"], rel=1e-13)
    with pytest.raises(SplittingStepTooLarge):
        step_diagnostics(traj, s, halving_tol=1e-300)


def test_input_checks():
    g = SpatialGrid(6, 7)
    op = two_bin_operator()
    s = spectral_decompose(op)
    prof = generic_profiles(g)
    u0, v0 = smooth_state(g, s, prof)
    with pytest.raises(Condition2Violated):
        solve_full(prof, op, 0.1, u0, v0 + 1.0, g, [0.1])
    with pytest.raises(GridMismatch):
        solve_full(prof, op, 0.1, u0[:, :5], v0, g, [0.1])
    with pytest.raises(ValueError):
        FullStepper(prof, op, 1.5, g)
    with pytest.raises(GridMismatch):
        FullStepper(prof, chain_operator(3), 0.1, g)
