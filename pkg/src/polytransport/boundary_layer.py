"""Initial-layer functions in the fast time ``tau = t / eps**2``.

The atmospheric layer is the non-equilibrium part of the initial data
relaxed by the size operator alone,

    Pu(x, z, tau, p) = sum_{i>=1} u_i(x, z) h_i(p) exp(lambda_i tau),

and the surface layer solves ``Pv_tau = alpha Pu|_{z=0} - beta Pv`` which,
with exponential-sum forcing, integrates in closed form.  The z-boundary
condition is deliberately not imposed on these functions; its defect is
measured elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Condition2Violated, GridMismatch, NumericalFailure
from .size_space import Spectrum, project_onto_modes

IMAG_TOL = 1e-10


@dataclass(frozen=True)
class LayerModes:
    """Amplitudes ``u_i(x, z)`` of the non-equilibrium modes ``i >= 1``."""

    amplitudes: np.ndarray  # (n_modes, nx, nz), complex for complex spectra
    eigenvalues: np.ndarray  # (n_modes,)
    modes: np.ndarray  # (n_p, n_modes)

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class SurfaceLayer:
    taus: np.ndarray
    values: np.ndarray  # (ntau, nx, n_p)


def decompose_initial(u0: np.ndarray, spectrum: Spectrum) -> tuple[np.ndarray, LayerModes]:
    """Split ``u0(x, z, p)`` into the equilibrium amplitude and layer modes.

    Returns ``(phi0_init, modes)`` with ``phi0_init = (u0, h0*)``.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.ndim != 3 or u0.shape[-1] != spectrum.size:
        raise GridMismatch(f"initial field shape {u0.shape} does not match {spectrum.size} size nodes")
    coeffs = project_onto_modes(u0, spectrum)
    phi0 = np.real(coeffs[..., 0]).copy()
    amps = np.moveaxis(coeffs[..., 1:], -1, 0).copy()
    modes = LayerModes(
        amplitudes=amps,
        eigenvalues=np.asarray(spectrum.eigenvalues[1:]),
        modes=np.asarray(spectrum.right_modes[:, 1:]),
    )
    return phi0, modes


def _real(values: np.ndarray, what: str) -> np.ndarray:
    if np.iscomplexobj(values):
        scale = max(float(np.max(np.abs(values))) if values.size else 0.0, 1.0)
        if values.size and np.max(np.abs(values.imag)) > IMAG_TOL * scale:
            raise NumericalFailure(f"{what} has a residual imaginary part")
        return values.real.copy()
    return values


def _mode_sum(amplitudes: np.ndarray, modes: LayerModes, weights: np.ndarray) -> np.ndarray:
    """``sum_i weights_i * amplitudes_i[..., None] * h_i`` in a fixed order."""
    n_p = modes.modes.shape[0]
    out = np.zeros(amplitudes.shape[1:] + (n_p,), dtype=complex)
    for i in range(modes.n_modes):
        out += (weights[i] * amplitudes[i])[..., None] * modes.modes[:, i]
    return out


def compute_layer_u(modes: LayerModes, tau: float) -> np.ndarray:
    """Atmospheric layer function at fast time ``tau``, shape (nx, nz, n_p)."""
    if tau < 0:
        raise ValueError("fast time tau must be nonnegative")
    weights = np.exp(modes.eigenvalues * tau)
    return _real(_mode_sum(modes.amplitudes, modes, weights), "layer function")


def layer_u_rate(modes: LayerModes, tau: float) -> np.ndarray:
    """``d/dtau`` of :func:`compute_layer_u`."""
    if tau < 0:
        raise ValueError("fast time tau must be nonnegative")
    weights = modes.eigenvalues * np.exp(modes.eigenvalues * tau)
    return _real(_mode_sum(modes.amplitudes, modes, weights), "layer rate")


def _phi1(z: np.ndarray) -> np.ndarray:
    """``(exp(z) - 1) / z`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def pi_v_initial(v0: np.ndarray, phi0_init: np.ndarray, c: np.ndarray, h0: np.ndarray) -> np.ndarray:
    """Initial surface layer ``v0 - c h0 phi0(x, 0, 0)``."""
    return np.asarray(v0, dtype=float) - phi0_init[:, 0, None] * (c * h0)


def solve_layer_v(
    modes: LayerModes,
    alpha: np.ndarray,
    beta: np.ndarray,
    pi_v_init: np.ndarray,
    taus,
) -> SurfaceLayer:
    """Closed-form surface layer.

    For each (x, p)::

        Pv(tau) = exp(-beta tau) Pv(0)
                  + alpha sum_i u_i(x, 0) h_i(p) (exp(lambda_i tau) - exp(-beta tau)) / (lambda_i + beta)

    with the confluent case ``lambda_i = -beta`` giving ``tau exp(-beta tau)``.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(taus < 0):
        raise ValueError("fast time tau must be nonnegative")
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    pi_v_init = np.asarray(pi_v_init, dtype=float)
    n_p = modes.modes.shape[0]
    if alpha.shape != (n_p,) or beta.shape != (n_p,) or pi_v_init.shape[-1] != n_p:
        raise GridMismatch("surface layer inputs do not match the size grid")
    surface_amps = modes.amplitudes[:, :, 0]  # (n_modes, nx)
    out = np.empty((taus.size,) + pi_v_init.shape)
    for k, tau in enumerate(taus):
        decay = np.exp(-beta * tau)
        forced = np.zeros(pi_v_init.shape, dtype=complex)
        for i in range(modes.n_modes):
            lam = modes.eigenvalues[i]
            kern = decay * tau * _phi1((lam + beta) * tau)  # (n_p,)
            forced += surface_amps[i][:, None] * (modes.modes[:, i] * kern)
        val = decay * pi_v_init + alpha * forced
        out[k] = _real(val, "surface layer")
    return SurfaceLayer(taus=taus, values=out)


def layer_v_rate(
    modes: LayerModes, alpha: np.ndarray, beta: np.ndarray, layer_v: np.ndarray, tau: float
) -> np.ndarray:
    """Right-hand side ``alpha Pu|_{z=0} - beta Pv`` of the surface layer ODE."""
    pu_surface = compute_layer_u(modes, tau)[:, 0]
    return alpha * pu_surface - beta * layer_v


@dataclass(frozen=True)
class Condition2Report:
    satisfied: bool
    max_residual: float
    relative_residual: float
    location: tuple[int, int]  # (x index, p index)
    tol: float

    def to_text(self, x=None, p=None) -> str:
        ix, ip = self.location
        where = f"x_index={ix} p_index={ip}"
        if x is not None and p is not None:
            where += f" x={float(x[ix]):.17g} p={float(p[ip]):.17g}"
        status = "satisfied" if self.satisfied else "violated"
        return (
            f"Condition 2: {status}, residual {self.max_residual:.6g}\n"
            f"max_residual {self.max_residual!r}\n"
            f"relative_residual {self.relative_residual!r}\n"
            f"tolerance {self.tol!r}\n"
            f"location {where}\n"
        )


def condition2_residual(u0, v0, alpha, beta, tol: float = 1e-12) -> Condition2Report:
    """Local deposition/pickup balance ``alpha u0|_{z=0} - beta v0`` of the
    initial data, measured relative to ``max|alpha u0| + max|beta v0|``."""
    u_surf = np.asarray(u0, dtype=float)[:, 0, :]
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != u_surf.shape:
        raise GridMismatch(f"surface data shape {v0.shape} does not match {u_surf.shape}")
    dep = alpha * u_surf
    pick = beta * v0
    res = np.abs(dep - pick)
    scale = float(np.max(np.abs(dep), initial=0.0) + np.max(np.abs(pick), initial=0.0))
    idx = np.unravel_index(int(np.argmax(res)), res.shape) if res.size else (0, 0)
    max_res = float(res[idx]) if res.size else 0.0
    rel = max_res / scale if scale > 0 else 0.0
    return Condition2Report(
        satisfied=rel <= tol,
        max_residual=max_res,
        relative_residual=rel,
        location=(int(idx[0]), int(idx[1])),
        tol=tol,
    )


def check_condition2(
    u0, v0, alpha, beta, tol: float = 1e-12, policy: str = "strict"
) -> tuple[Condition2Report, np.ndarray]:
    """Check (``strict``) or enforce (``repair``) the initial-data balance.

    Returns the report and the surface data to use; ``repair`` replaces
    ``v0`` by ``(alpha / beta) u0|_{z=0}``.
    """
    report = condition2_residual(u0, v0, alpha, beta, tol)
    if policy == "repair":
        v_new = (np.asarray(alpha) / np.asarray(beta)) * np.asarray(u0, dtype=float)[:, 0, :]
        return condition2_residual(u0, v_new, alpha, beta, tol), v_new
    if policy != "strict":
        raise ValueError(f"unknown condition-2 policy {policy!r}")
    if not report.satisfied:
        raise Condition2Violated(
            f"initial data violate the surface balance: relative residual "
            f"{report.relative_residual:.3e} at {report.location}"
        )
    return report, np.asarray(v0, dtype=float)
