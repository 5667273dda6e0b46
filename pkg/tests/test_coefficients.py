from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from polytransport.coefficients import (
    NonphysicalCoefficients,
    Profiles,
    bump,
    effective_coefficients,
    log_wind,
    profile_from_family,
    profile_from_table,
)
from polytransport.errors import ConfigError, GridMismatch
from polytransport.size_space import (
    ParticleGrid,
    build_conservative_operator,
    single_bin_operator,
    spectral_decompose,
    two_bin_operator,
)


def make_profiles(nz=5, n_p=2, **over):
    base = dict(
        V=np.ones(nz),
        Kx=np.full(nz, 0.1),
        Kz=np.ones((nz, n_p)),
        w=np.ones(n_p),
        alpha=np.ones(n_p),
        beta=np.ones(n_p),
    )
    base.update(over)
    return Profiles(**base)


def test_two_bin_settling_speed_average():
    s = spectral_decompose(two_bin_operator())
    eff = effective_coefficients(make_profiles(w=np.array([1.0, 4.0])), s)
    assert abs(eff.w_ef - 2.0) <= 1e-12


def test_effective_coefficients_match_brute_force_quadrature():
    s = spectral_decompose(two_bin_operator())
    z = np.linspace(0, 1, 5)
    kz = np.column_stack([1 + z, 2 + z**2])
    alpha, beta = np.array([0.3, 0.8]), np.array([1.5, 0.4])
    eff = effective_coefficients(make_profiles(Kz=kz, alpha=alpha, beta=beta), s)
    # h0 = (2/3, 1/3), h0* = (1, 1), unit weights
    assert np.allclose(eff.Kz_ef, (2 / 3) * (1 + z) + (1 / 3) * (2 + z**2), rtol=0, atol=1e-14)
    assert eff.c_ef == pytest.approx((2 / 3) * 0.2 + (1 / 3) * 2.0, abs=1e-14)
    assert np.allclose(eff.c, alpha / beta)


def test_single_bin_returns_raw_coefficients_exactly():
    s = spectral_decompose(single_bin_operator())
    z = np.linspace(0, 1, 7)
    kz = (0.02 + 0.03 * z)[:, None]
    prof = make_profiles(nz=7, n_p=1, Kz=kz, w=np.array([0.37]), alpha=np.array([0.3]), beta=np.array([0.7]))
    eff = effective_coefficients(prof, s)
    assert eff.w_ef == 0.37
    assert np.array_equal(eff.Kz_ef, kz[:, 0])
    assert eff.c_ef == 0.3 / 0.7


@pytest.mark.parametrize(
    "field,value,err",
    [
        ("Kz", np.zeros((5, 2)), NonphysicalCoefficients),
        ("Kx", -np.ones(5), NonphysicalCoefficients),
        ("w", -np.ones(2), NonphysicalCoefficients),
        ("alpha", -np.ones(2), NonphysicalCoefficients),
        ("beta", np.full(2, 1e-12), NonphysicalCoefficients),
        ("V", np.array([np.nan] * 5), ConfigError),
        ("Kz", np.ones((4, 2)), GridMismatch),
    ],
)
def test_profile_validation(field, value, err):
    with pytest.raises(err):
        make_profiles(**{field: value})


def test_negative_effective_diffusivity_is_reported():
    # Kz is positive per bin, but an h0 with a sign change makes its average negative
    s = spectral_decompose(two_bin_operator())
    flipped = type(s)(
        s.eigenvalues,
        np.array([[1.0, 0.7], [-0.5, 0.7]], dtype=complex),
        np.array([[1.0, 0.0], [1.0, 0.0]], dtype=complex),
        s.grid,
        s.tol_zero,
        s.gap_min,
    )
    kz = np.column_stack([np.ones(5), 4 * np.ones(5)])
    with pytest.raises(NonphysicalCoefficients):
        effective_coefficients(make_profiles(Kz=kz), flipped)


def test_profile_families():
    z = np.array([0.0, 0.5, 1.0])
    assert np.allclose(profile_from_family("constant", z, value=2.0), 2.0)
    assert np.allclose(profile_from_family("linear", z, a=1.0, b=2.0), [1, 2, 3])
    w = log_wind(z, u_star=0.5, z0=0.1, z_ref=1.0)
    assert w[0] == 0.0 and w[-1] == pytest.approx(0.5)
    assert np.all(np.diff(w) > 0)
    b = bump(np.linspace(0, 1, 101), center=0.55, half_width=0.35)
    assert b.max() == pytest.approx(1.0) and np.all(b[:20] == 0) and np.all(b[91:] == 0)
    with pytest.raises(ConfigError):
        profile_from_family("spline", z)
    with pytest.raises(ConfigError):
        profile_from_family("linear", z, slope=1.0)


def test_profile_table_interpolation(tmp_path):
    path = tmp_path / "kz.txt"
    path.write_text("0 1\n1 3\n")
    assert np.allclose(profile_from_table(path, [0, 0.25, 1]), [1, 1.5, 3])
    path.write_text("1 1\n0 3\n")
    with pytest.raises(ConfigError):
        profile_from_table(path, [0.5])


@settings(max_examples=40, deadline=None)
@given(
    st.integers(2, 6).flatmap(
        lambda n: st.tuples(
            arrays(float, (n, n), elements=st.floats(0.05, 3.0)),
            arrays(float, n, elements=st.floats(0.01, 5.0)),
        )
    )
)
def test_effective_coefficients_are_weighted_means(data):
    kernel, w = data
    n = w.size
    s = spectral_decompose(build_conservative_operator(kernel, ParticleGrid.unit_bins(n)))
    prof = make_profiles(n_p=n, w=w, Kz=np.tile(w, (5, 1)))
    eff = effective_coefficients(prof, s)
    # h0 >= 0 with (h0, h0*) = 1 and h0* constant, so averages stay in range
    assert w.min() - 1e-12 <= eff.w_ef <= w.max() + 1e-12
    assert np.allclose(eff.Kz_ef, eff.w_ef)
