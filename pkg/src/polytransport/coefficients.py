"""Transport coefficient profiles and their size-averaged (effective) values."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, GridMismatch
from .size_space import ParticleGrid, Spectrum, inner_product

DEFAULT_BETA_MIN = 1e-8


class NonphysicalCoefficients(ConfigError):
    pass


@dataclass(frozen=True)
class Profiles:
    """Coefficients tabulated on the z-nodes and size nodes.

    Shapes: ``V``, ``Kx`` -> (nz,); ``Kz`` -> (nz, n_p); ``w``, ``alpha``,
    ``beta`` -> (n_p,).  ``w`` is the settling speed entering the transport
    operator as ``-w du/dz``; with z pointing up a positive ``w`` moves
    impurity downwards.
    """

    V: np.ndarray
    Kx: np.ndarray
    Kz: np.ndarray
    w: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    beta_min: float = DEFAULT_BETA_MIN

    def __post_init__(self):
        arrays = {}
        for name in ("V", "Kx", "Kz", "w", "alpha", "beta"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"profile {name} contains non-finite values")
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        nz = arrays["V"].shape[0] if arrays["V"].ndim == 1 else -1
        n_p = arrays["w"].shape[0] if arrays["w"].ndim == 1 else -1
        if arrays["Kx"].shape != (nz,) or arrays["Kz"].shape != (nz, n_p):
            raise GridMismatch("profile shapes are inconsistent with the z-grid")
        if arrays["alpha"].shape != (n_p,) or arrays["beta"].shape != (n_p,):
            raise GridMismatch("profile shapes are inconsistent with the size grid")
        if np.any(arrays["Kz"] <= 0):
            raise NonphysicalCoefficients("Kz must be positive everywhere")
        if np.any(arrays["Kx"] < 0):
            raise NonphysicalCoefficients("Kx must be nonnegative")
        if np.any(arrays["w"] < 0):
            raise NonphysicalCoefficients("settling speed w must be nonnegative")
        if np.any(arrays["alpha"] < 0):
            raise NonphysicalCoefficients("deposition rate alpha must be nonnegative")
        if np.any(arrays["beta"] < self.beta_min):
            raise NonphysicalCoefficients(
                f"pickup rate beta must be >= beta_min = {self.beta_min:g}"
            )

    @property
    def nz(self) -> int:
        return self.V.shape[0]

    @property
    def n_p(self) -> int:
        return self.w.shape[0]

    @property
    def c(self) -> np.ndarray:
        """Surface/air equilibrium ratio ``alpha / beta`` per size node."""
        return self.alpha / self.beta

    def face_Kz(self) -> np.ndarray:
        """Kz linearly interpolated to the interior z-faces, shape (nz-1, n_p)."""
        return 0.5 * (self.Kz[:-1] + self.Kz[1:])


@dataclass(frozen=True)
class EffectiveCoefficients:
    w_ef: float
    Kz_ef: np.ndarray
    c_ef: float
    c: np.ndarray

    def face_Kz(self) -> np.ndarray:
        return 0.5 * (self.Kz_ef[:-1] + self.Kz_ef[1:])


def effective_coefficients(profiles: Profiles, spectrum: Spectrum) -> EffectiveCoefficients:
    """Pair the h0-weighted coefficients against the adjoint null mode."""
    grid = spectrum.grid
    if profiles.n_p != grid.size:
        raise GridMismatch(f"profiles have {profiles.n_p} size nodes, spectrum {grid.size}")
    h0 = spectrum.h0
    h0s = spectrum.adjoint_null
    c = profiles.c
    w_ef = float(inner_product(h0 * profiles.w, h0s, grid))
    kz_ef = inner_product(h0 * profiles.Kz, h0s, grid)
    c_ef = float(inner_product(c * h0, h0s, grid))
    if np.any(kz_ef <= 0):
        bad = int(np.argmin(kz_ef))
        raise NonphysicalCoefficients(
            f"effective Kz is not positive at z-node {bad} ({kz_ef[bad]:.3e})"
        )
    if not (np.isfinite(w_ef) and np.isfinite(c_ef)):
        raise NonphysicalCoefficients("effective coefficients are not finite")
    kz_ef = np.asarray(kz_ef, dtype=float)
    kz_ef.setflags(write=False)
    return EffectiveCoefficients(w_ef=w_ef, Kz_ef=kz_ef, c_ef=c_ef, c=c)


# --- profile families -------------------------------------------------------


def constant(z, value: float = 1.0):
    return np.full_like(np.asarray(z, dtype=float), value)


def linear(z, a: float = 0.0, b: float = 1.0):
    """``a + b z``."""
    return a + b * np.asarray(z, dtype=float)


def log_wind(z, u_star: float = 1.0, z0: float = 0.1, z_ref: float = 1.0):
    """Logarithmic wind profile, ``u_star * ln(1 + z/z0) / ln(1 + z_ref/z0)``."""
    z = np.asarray(z, dtype=float)
    return u_star * np.log1p(z / z0) / np.log1p(z_ref / z0)


def bump(z, center: float = 0.5, half_width: float = 0.25):
    """Smooth compactly supported bump, equal to 1 at ``center`` and exactly
    zero outside ``|z - center| < half_width``."""
    r = (np.asarray(z, dtype=float) - center) / half_width
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


FAMILIES = {"constant": constant, "linear": linear, "log_wind": log_wind, "bump": bump}


def profile_from_family(name: str, z, **params) -> np.ndarray:
    try:
        func = FAMILIES[name]
    except KeyError:
        raise ConfigError(f"unknown profile family {name!r}; known: {sorted(FAMILIES)}") from None
    try:
        return func(z, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for profile family {name!r}: {exc}") from exc


def profile_from_table(path, z) -> np.ndarray:
    """Interpolate a two-column (node, value) text table onto ``z``."""
    path = Path(path)
    try:
        table = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read profile table {path}: {exc}") from exc
    if table.shape[1] != 2 or np.any(np.diff(table[:, 0]) <= 0):
        raise ConfigError(f"profile table {path} must have increasing (node, value) rows")
    return np.interp(np.asarray(z, dtype=float), table[:, 0], table[:, 1])


def size_profile(values, grid: ParticleGrid) -> np.ndarray:
    """Broadcast a scalar or per-bin list to the size grid."""
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size == 1:
        return np.full(grid.size, arr[0])
    if arr.size != grid.size:
        raise GridMismatch(f"size profile has {arr.size} entries, grid has {grid.size}")
    return arr
