from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from polytransport.errors import (
    ConfigError,
    GridMismatch,
    IllConditionedModeBasis,
    SpectralGapViolated,
    ZeroModeMissing,
    ZeroModeNotSimple,
)
from polytransport.size_space import (
    ParticleGrid,
    SizeOperator,
    build_conservative_operator,
    chain_operator,
    inner_product,
    load_table,
    project_onto_modes,
    reconstruct,
    single_bin_operator,
    spectral_decompose,
    spectrum_report,
    two_bin_operator,
)

# --- grids ----------------------------------------------------------------------


def test_trapezoid_weights_integrate_linear_functions_exactly():
    g = ParticleGrid.trapezoid([0.0, 0.5, 2.0])
    assert np.allclose(g.weights, [0.25, 1.0, 0.75])
    assert np.isclose(np.sum(g.weights * (3 * g.nodes + 1)), 3 * 2.0 + 2.0)


def test_single_node_grid_has_unit_weight():
    assert ParticleGrid.trapezoid([5.0]).weights.tolist() == [1.0]


@pytest.mark.parametrize(
    "nodes,weights",
    [([1.0, 1.0], [1.0, 1.0]), ([2.0, 1.0], [1.0, 1.0]), ([1.0, 2.0], [1.0, 0.0]), ([], [])],
)
def test_invalid_particle_grids_are_rejected(nodes, weights):
    with pytest.raises(ConfigError):
        ParticleGrid(nodes, weights)


# --- construction -----------------------------------------------------------------


def test_two_bin_operator_matches_hand_matrix():
    assert np.array_equal(two_bin_operator(1.0, 2.0).matrix, [[-1.0, 2.0], [1.0, -2.0]])


def test_single_bin_kernel_gives_zero_matrix():
    op = build_conservative_operator([[7.0]], ParticleGrid.unit_bins(1))
    assert op.matrix.tolist() == [[0.0]]


def test_three_bin_nearest_neighbour_kernel():
    k = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    op = build_conservative_operator(k, ParticleGrid.unit_bins(3))
    expected = np.array([[-1, 1, 0], [1, -2, 1], [0, 1, -1]], dtype=float)
    assert np.array_equal(op.matrix, expected)
    assert np.all(op.matrix.sum(axis=0) == 0)


def test_kernel_validation():
    g = ParticleGrid.unit_bins(2)
    with pytest.raises(ConfigError):
        build_conservative_operator([[0, np.nan], [1, 0]], g)
    with pytest.raises(ConfigError):
        build_conservative_operator([[0, -1], [1, 0]], g)
    with pytest.raises(GridMismatch):
        build_conservative_operator(np.zeros((3, 3)), g)


def test_raw_matrix_without_null_vector_is_rejected():
    with pytest.raises(ZeroModeMissing):
        SizeOperator.from_matrix(-np.eye(2), ParticleGrid.unit_bins(2))


def test_load_table_roundtrip(tmp_path):
    path = tmp_path / "k.txt"
    path.write_text("0 2\n1 0\n")
    assert np.array_equal(load_table(path), [[0, 2], [1, 0]])
    with pytest.raises(ConfigError):
        load_table(tmp_path / "missing.txt")


# --- spectra --------------------------------------------------------------------


def test_two_bin_spectrum_is_analytic():
    s = spectral_decompose(two_bin_operator())
    assert np.allclose(s.eigenvalues, [0.0, -3.0], atol=1e-12)
    assert np.allclose(s.h0, [2 / 3, 1 / 3], atol=1e-14)
    assert np.allclose(s.adjoint_null, [1.0, 1.0], atol=1e-14)
    assert abs(inner_product(s.h0, s.adjoint_null, s.grid) - 1) < 1e-12
    h1 = s.right_modes[:, 1].real
    assert abs(inner_product(h1, s.adjoint_null, s.grid)) < 1e-12
    assert s.gap == pytest.approx(3.0)


def test_single_bin_spectrum_is_identity_case():
    s = spectral_decompose(single_bin_operator())
    assert s.eigenvalues.tolist() == [0.0]
    assert s.h0.tolist() == [1.0] and s.adjoint_null.tolist() == [1.0]


def test_three_bin_spectrum_against_dense_oracle():
    op = chain_operator(3)
    s = spectral_decompose(op)
    oracle = np.sort(np.linalg.eigvalsh(op.matrix))[::-1]  # symmetric matrix
    assert np.allclose(s.eigenvalues.real, oracle, atol=1e-12)
    assert np.allclose(s.eigenvalues.real, [0.0, -1.0, -3.0], atol=1e-12)
    assert np.allclose(s.h0, [1 / 3] * 3)


def test_condition1_failures():
    g = ParticleGrid.unit_bins(2)
    with pytest.raises(ZeroModeMissing):
        spectral_decompose(SizeOperator(-np.eye(2), g))
    with pytest.raises(ZeroModeNotSimple):
        spectral_decompose(SizeOperator(np.zeros((2, 2)), g))
    with pytest.raises(SpectralGapViolated):
        spectral_decompose(two_bin_operator(), gap_min=5.0)


def test_complex_pairs_are_allowed_for_nonzero_modes():
    # cyclic exchange 1 -> 2 -> 3 -> 1: eigenvalues 0 and -3/2 +- i sqrt(3)/2
    k = np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]], dtype=float)
    s = spectral_decompose(build_conservative_operator(k, ParticleGrid.unit_bins(3)))
    assert not s.is_real
    assert np.allclose(np.sort_complex(s.eigenvalues[1:]), [-1.5 - 0.75**0.5 * 1j, -1.5 + 0.75**0.5 * 1j])
    f = np.array([0.3, -1.2, 2.0])
    assert np.allclose(reconstruct(project_onto_modes(f, s), s), f)


def test_spectrum_report_format():
    text = spectrum_report(np.array([0.0, -3.0]), 1e-8, 1e-6)
    assert text.splitlines()[1:] == ["0 0 0 zero", "1 -3 0 gap-ok"]
    assert spectrum_report(np.array([0.0, -1e-9]), 1e-12, 1e-6).splitlines()[2].endswith("gap-violated")


# --- projections ------------------------------------------------------------------


def test_projection_examples():
    s = spectral_decompose(two_bin_operator())
    h0, h1 = s.h0, s.right_modes[:, 1].real
    assert np.allclose(project_onto_modes(h0, s), [1.0, 0.0], atol=1e-14)
    assert np.allclose(project_onto_modes(3 * h0 + 2 * h1, s), [3.0, 2.0], atol=1e-13)


def test_projection_matches_linear_solve_oracle(rng):
    op = chain_operator(3)
    s = spectral_decompose(op)
    f = rng.normal(size=3)
    oracle = np.linalg.solve(s.right_modes.real, f)
    assert np.allclose(project_onto_modes(f, s), oracle, atol=1e-12)


def test_projection_detects_broken_basis():
    s = spectral_decompose(two_bin_operator())
    bad = type(s)(
        s.eigenvalues, np.array([[1.0, 1.0], [1.0, 1.0]], dtype=complex), s.adjoint_modes, s.grid,
        s.tol_zero, s.gap_min,
    )
    with pytest.raises(IllConditionedModeBasis):
        project_onto_modes(np.array([1.0, 0.0]), bad)


def test_inner_product_examples():
    g = ParticleGrid.unit_bins(2)
    assert inner_product([1, 1], [1, 1], g) == 2
    assert inner_product(np.array([2, 1]) / 3, [1, 1], g) == pytest.approx(1)
    with pytest.raises(GridMismatch):
        inner_product([1, 1, 1], [1, 1], g)


# --- properties over random conservative operators ------------------------------

sizes = st.integers(min_value=1, max_value=8)


@st.composite
def conservative_ops(draw):
    n = draw(sizes)
    nodes = np.cumsum(draw(arrays(float, n, elements=st.floats(0.1, 2.0))))
    grid = ParticleGrid.trapezoid(nodes)
    kernel = draw(arrays(float, (n, n), elements=st.floats(0.05, 3.0)))
    return build_conservative_operator(kernel, grid)


@settings(max_examples=60, deadline=None)
@given(conservative_ops())
def test_column_sums_vanish_under_quadrature(op):
    q = op.grid.weights
    assert np.max(np.abs(q @ op.matrix), initial=0.0) <= 1e-12 * max(op.norm, 1.0)


@settings(max_examples=60, deadline=None)
@given(conservative_ops(), st.integers(0, 2**32 - 1))
def test_spectral_invariants(op, seed):
    s = spectral_decompose(op)
    a, g, norm = op.matrix, op.grid, max(op.norm, 1.0)
    for i in range(s.size):
        h = s.right_modes[:, i]
        assert np.linalg.norm(a @ h - s.eigenvalues[i] * h) <= 1e-10 * norm
    assert np.linalg.norm(a.T @ (g.weights * s.adjoint_null)) <= 1e-10 * norm
    assert abs(inner_product(s.h0, s.adjoint_null, g) - 1) <= 1e-12
    for i in range(1, s.size):
        assert abs(inner_product(s.right_modes[:, i], s.adjoint_null, g)) <= 1e-10
    assert np.all(s.h0 >= 0)
    f = np.random.default_rng(seed).normal(size=(4, s.size))
    back = reconstruct(project_onto_modes(f, s), s)
    assert np.max(np.abs(back - f)) <= 1e-10 * np.max(np.abs(f))
    # generalized mass neutrality
    assert np.max(np.abs(inner_product(op.apply(f), s.adjoint_null, g))) <= 1e-10 * norm * np.max(
        np.linalg.norm(f, axis=-1)
    ) * np.max(np.abs(s.adjoint_null))
