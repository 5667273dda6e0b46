"""Particle-size space: grids, the linear coagulation/dissociation operator
and its spectral decomposition.

Size functions are stored as arrays whose *last* axis runs over the size
nodes, so that fields ``u[x, z, p]`` can be paired with size functions
directly.  All pairings use the quadrature-weighted bilinear form

    (f, g) = sum_i q_i f(p_i) g(p_i)

which is also the pairing under which adjoint modes are defined.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as spla

from .errors import (
    ComplexEquilibrium,
    ConfigError,
    GridMismatch,
    IllConditionedModeBasis,
    SpectralGapViolated,
    ZeroModeMissing,
    ZeroModeNotSimple,
)

logger = logging.getLogger(__name__)

DEFAULT_GAP_MIN = 1e-6
DEFAULT_ZERO_RTOL = 1e-8
MAX_MODE_CONDITION = 1e12


@dataclass(frozen=True)
class ParticleGrid:
    """Discrete size set with positive quadrature weights."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if nodes.size < 1:
            raise ConfigError("particle grid needs at least one node")
        if nodes.shape != weights.shape:
            raise ConfigError("particle grid nodes and weights differ in length")
        if not np.all(np.isfinite(nodes)) or not np.all(np.isfinite(weights)):
            raise ConfigError("particle grid contains non-finite values")
        if np.any(np.diff(nodes) <= 0):
            raise ConfigError("particle grid nodes must be strictly increasing")
        if np.any(weights <= 0):
            raise ConfigError("particle grid weights must be positive")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.nodes.size

    @classmethod
    def trapezoid(cls, nodes) -> "ParticleGrid":
        """Trapezoid-rule weights on ``nodes``; a single node gets weight 1."""
        nodes = np.asarray(nodes, dtype=float).reshape(-1)
        if nodes.size == 1:
            return cls(nodes, np.ones(1))
        h = np.diff(nodes)
        weights = np.zeros_like(nodes)
        weights[:-1] += h / 2
        weights[1:] += h / 2
        return cls(nodes, weights)

    @classmethod
    def unit_bins(cls, n: int) -> "ParticleGrid":
        """``n`` discrete size classes ``1..n`` with unit weights."""
        if n < 1:
            raise ConfigError("number of size bins must be >= 1")
        return cls(np.arange(1.0, n + 1.0), np.ones(n))


@dataclass(frozen=True)
class SizeOperator:
    """Matrix form of the size operator: ``(L f)(p_i) = sum_j A_ij f(p_j)``."""

    matrix: np.ndarray
    grid: ParticleGrid

    def __post_init__(self):
        a = np.array(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError("size operator matrix must be square")
        if a.shape[0] != self.grid.size:
            raise GridMismatch(
                f"operator is {a.shape[0]}x{a.shape[0]} but grid has {self.grid.size} nodes"
            )
        if not np.all(np.isfinite(a)):
            raise ConfigError("size operator contains non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2)) if self.matrix.size else 0.0

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Apply along the last axis with a fixed summation order."""
        f = np.asarray(f)
        out = np.zeros(np.broadcast_shapes(f.shape), dtype=np.result_type(f, float))
        for j in range(self.grid.size):
            out += f[..., j : j + 1] * self.matrix[:, j]
        return out

    @classmethod
    def from_matrix(cls, matrix, grid: ParticleGrid, rtol: float = 1e-10) -> "SizeOperator":
        """Wrap a raw matrix, checking that a weighted left null vector exists."""
        op = cls(matrix, grid)
        a = op.matrix
        # A is singular iff A^T Q has a null vector, i.e. a weighted left null vector exists
        if np.any(a != 0):
            smin = spla.svdvals(a)[-1]
            if smin > rtol * max(op.norm, np.finfo(float).tiny):
                raise ZeroModeMissing(
                    f"matrix has no null vector (smallest singular value {smin:.3e})"
                )
        return op


def build_conservative_operator(kernel, grid: ParticleGrid) -> SizeOperator:
    """Integral operator with kernel ``K`` completed by a diagonal loss term.

    Gain entries are ``A_ij = K(p_i, p_j) q_j`` for ``i != j``; the diagonal is
    chosen so that ``sum_i q_i A_ij = 0`` for every column, which makes the
    constant function a left null vector and conserves generalized mass.
    Diagonal kernel entries are ignored.
    """
    k = np.asarray(kernel, dtype=float)
    n = grid.size
    if k.shape != (n, n):
        raise GridMismatch(f"kernel shape {k.shape} does not match grid size {n}")
    if not np.all(np.isfinite(k)):
        raise ConfigError("kernel contains non-finite entries")
    off = ~np.eye(n, dtype=bool)
    if np.any(k[off] < 0):
        raise ConfigError("off-diagonal kernel (gain) entries must be nonnegative")
    q = grid.weights
    a = np.where(off, k * q[None, :], 0.0)
    outflow = (q[:, None] * a).sum(axis=0)
    a[np.diag_indices(n)] = -outflow / q
    return SizeOperator(a, grid)


def two_bin_operator(a: float = 1.0, b: float = 2.0) -> SizeOperator:
    """Two size classes exchanging mass: rate ``a`` from bin 1 to bin 2 and
    rate ``b`` from bin 2 to bin 1 (unit weights)."""
    kernel = np.array([[0.0, b], [a, 0.0]])
    return build_conservative_operator(kernel, ParticleGrid.unit_bins(2))


def chain_operator(n: int, rate: float = 1.0) -> SizeOperator:
    """Nearest-neighbour exchange between ``n`` unit-weight bins."""
    idx = np.arange(n)
    kernel = np.where(np.abs(idx[:, None] - idx[None, :]) == 1, rate, 0.0)
    return build_conservative_operator(kernel, ParticleGrid.unit_bins(n))


def single_bin_operator(weight: float = 1.0) -> SizeOperator:
    grid = ParticleGrid(np.ones(1), np.array([weight]))
    return SizeOperator(np.zeros((1, 1)), grid)


def load_table(path) -> np.ndarray:
    """Read a whitespace-separated numeric table (one matrix row per line)."""
    path = Path(path)
    try:
        table = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read numeric table {path}: {exc}") from exc
    return table


def inner_product(f, g, grid: ParticleGrid):
    """Quadrature pairing over the last axis (broadcast over leading axes)."""
    f = np.asarray(f)
    g = np.asarray(g)
    n = grid.size
    if f.shape[-1:] != (n,) or g.shape[-1:] != (n,):
        raise GridMismatch(
            f"size-function lengths {f.shape[-1:]}, {g.shape[-1:]} do not match grid size {n}"
        )
    return np.sum(f * g * grid.weights, axis=-1)


@dataclass(frozen=True)
class Spectrum:
    """Eigen-decomposition of a size operator.

    ``right_modes[:, i]`` is ``h_i`` sampled on the grid and
    ``adjoint_modes[:, i]`` the matching adjoint mode, scaled so that
    ``(h_i, h_j*) = delta_ij``.  ``h0`` has unit mass and ``adjoint_null``
    (``h0*``) satisfies ``(h0, h0*) = 1``.  Modes ``i >= 1`` have unit
    quadrature norm.
    """

    eigenvalues: np.ndarray
    right_modes: np.ndarray
    adjoint_modes: np.ndarray
    grid: ParticleGrid
    tol_zero: float
    gap_min: float
    equilibrium_nonnegative: bool = field(default=True)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    @property
    def h0(self) -> np.ndarray:
        return self.right_modes[:, 0].real

    @property
    def adjoint_null(self) -> np.ndarray:
        return self.adjoint_modes[:, 0].real

    @property
    def gap(self) -> float:
        """Spectral gap ``-max_{i>=1} Re(lambda_i)`` (``inf`` for one bin)."""
        if self.size == 1:
            return float("inf")
        return float(-np.max(self.eigenvalues[1:].real))

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.eigenvalues.imag == 0))


def _sort_key(values: np.ndarray) -> np.ndarray:
    # descending real part, then descending imaginary part for determinism
    return np.lexsort((-values.imag, -values.real))


def sorted_eigenvalues(op: SizeOperator) -> np.ndarray:
    vals = spla.eigvals(op.matrix)
    return vals[_sort_key(vals)]


def default_tol_zero(op: SizeOperator) -> float:
    return DEFAULT_ZERO_RTOL * op.norm


def spectral_decompose(
    op: SizeOperator, tol_zero: float | None = None, gap_min: float = DEFAULT_GAP_MIN
) -> Spectrum:
    """Verify the simple-zero / spectral-gap condition and return the modes.

    Raises
    ------
    ZeroModeMissing, ZeroModeNotSimple, SpectralGapViolated, ComplexEquilibrium
        When the operator fails the condition.
    """
    a = op.matrix
    q = op.grid.weights
    n = a.shape[0]
    if tol_zero is None:
        tol_zero = default_tol_zero(op)

    vals, vl, vr = spla.eig(a, left=True, right=True)
    order = _sort_key(vals)
    vals, vl, vr = vals[order], vl[:, order], vr[:, order]

    zero = np.flatnonzero(np.abs(vals) <= tol_zero)
    if zero.size == 0:
        raise ZeroModeMissing(
            f"no eigenvalue within {tol_zero:.3e} of zero (closest {np.min(np.abs(vals)):.3e})"
        )
    if zero.size > 1:
        raise ZeroModeNotSimple(f"{zero.size} eigenvalues within {tol_zero:.3e} of zero")
    k = zero[0]
    perm = np.r_[k, np.delete(np.arange(n), k)]
    vals, vl, vr = vals[perm], vl[:, perm], vr[:, perm]
    vals[0] = 0.0

    if n > 1 and np.max(vals[1:].real) > -gap_min:
        raise SpectralGapViolated(
            f"Re(lambda_1) = {np.max(vals[1:].real):.3e} exceeds -gap_min = {-gap_min:.3e}"
        )

    # bilinear left eigenvectors y_i (y^T A = lambda y^T); weighted adjoint is Q^-1 y
    left = (np.conj(vl) / q[:, None]).astype(complex)
    right = vr.astype(complex)

    h0 = right[:, 0]
    h0_star = left[:, 0]
    for vec, name in ((h0, "equilibrium mode"), (h0_star, "adjoint null mode")):
        scale = np.max(np.abs(vec))
        vec_phase = vec[np.argmax(np.abs(vec))] / scale
        if np.max(np.abs((vec / vec_phase).imag)) > 1e-10 * scale:
            raise ComplexEquilibrium(f"{name} has a non-negligible imaginary part")
    h0 = (h0 * np.conj(h0[np.argmax(np.abs(h0))])).real
    mass = float(np.sum(q * h0))
    if abs(mass) > 1e-12 * np.sum(q * np.abs(h0)):
        h0 = h0 / mass
    else:
        h0 = h0 / np.sqrt(np.sum(q * h0**2))
    h0_star = (h0_star * np.conj(h0_star[np.argmax(np.abs(h0_star))])).real
    h0_star = h0_star / np.sum(q * h0 * h0_star)
    right[:, 0] = h0
    left[:, 0] = h0_star

    for i in range(1, n):
        h = right[:, i]
        h = h / np.sqrt(np.sum(q * np.abs(h) ** 2))
        pivot = h[np.argmax(np.abs(h))]
        h = h * (np.abs(pivot) / pivot)
        if np.all(np.abs(h.imag) <= 1e-14 * np.max(np.abs(h))):
            h = h.real.astype(complex)
        right[:, i] = h

    # Biorthogonal adjoint modes from the inverse mode matrix: (Q H*)^T R = I.
    # Pairwise left eigenvectors are not biorthogonal inside a repeated eigenspace.
    if n > 1:
        if np.linalg.cond(right) > MAX_MODE_CONDITION:
            raise IllConditionedModeBasis(
                f"mode matrix condition number {np.linalg.cond(right):.3e} (defective operator?)"
            )
        inv = np.linalg.inv(right)
        left[:, 1:] = inv[1:].T / q[:, None]

    nonneg = bool(np.all(h0 >= -1e-12 * np.max(np.abs(h0))))
    if not nonneg:
        logger.warning("equilibrium mode h0 is not componentwise nonnegative")

    for arr in (vals, right, left):
        arr.setflags(write=False)
    return Spectrum(
        eigenvalues=vals,
        right_modes=right,
        adjoint_modes=left,
        grid=op.grid,
        tol_zero=float(tol_zero),
        gap_min=float(gap_min),
        equilibrium_nonnegative=nonneg,
    )


def project_onto_modes(f, spectrum: Spectrum, rtol: float = 1e-10) -> np.ndarray:
    """Coefficients ``c_i`` with ``f = sum_i c_i h_i`` along the last axis.

    The coefficients come from the adjoint modes, ``c_i = (f, h_i*)``, and the
    expansion is checked by reconstruction.  ``c[..., 0]`` is the amplitude of
    the equilibrium mode.  The result is complex when the spectrum is.
    """
    f = np.asarray(f, dtype=float)
    coeffs = inner_product(f[..., None, :], spectrum.adjoint_modes.T, spectrum.grid)
    recon = reconstruct(coeffs, spectrum)
    scale = max(float(np.max(np.abs(f))) if f.size else 0.0, np.finfo(float).tiny)
    err = float(np.max(np.abs(recon - f))) if f.size else 0.0
    if err > rtol * scale:
        raise IllConditionedModeBasis(
            f"mode expansion reconstruction error {err:.3e} (relative {err / scale:.3e})"
        )
    if spectrum.is_real:
        coeffs = coeffs.real
    return coeffs


def reconstruct(coeffs, spectrum: Spectrum) -> np.ndarray:
    """Inverse of :func:`project_onto_modes`; returns the real part."""
    coeffs = np.asarray(coeffs)
    return np.real(coeffs @ spectrum.right_modes.T)


def spectrum_report(eigenvalues, tol_zero: float, gap_min: float) -> str:
    """One record per eigenvalue: ``index re im flag``."""
    lines = ["# index re_lambda im_lambda flag"]
    vals = np.asarray(eigenvalues, dtype=complex)
    zero_seen = False
    for i, lam in enumerate(vals):
        if abs(lam) <= tol_zero and not zero_seen:
            flag = "zero"
            zero_seen = True
        elif lam.real <= -gap_min:
            flag = "gap-ok"
        else:
            flag = "gap-violated"
        lines.append(f"{i} {float(lam.real):.17g} {float(lam.imag):.17g} {flag}")
    return "\n".join(lines) + "\n"
