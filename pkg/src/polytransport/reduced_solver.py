"""Size-averaged problem for the equilibrium amplitude phi0(x, z, t).

The amplitude obeys the transport equation with the effective coefficients
and the dynamic surface condition

    (w_ef phi0 + Kz_ef phi0_z)|_{z=0} = c_ef phi0_t|_{z=0}.

The surface condition is an ODE-PDE coupling: the surface store
``s = c_ef phi0(x, 0, t)`` absorbs exactly the flux leaving the lowest half
cell.  Eliminating the ghost value below z = 0 gives the half-cell balance

    (dz/2 + c_ef) phi0_t = (dz/2) X[phi0] - G_{1/2}

at the bottom node, which is what :class:`TransportOperator` implements when
``c_ef`` is passed as bottom storage.  ``int int phi0 + int s`` is therefore
conserved to roundoff on periodic, zero-flux-top configurations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .coefficients import EffectiveCoefficients
from .errors import GridMismatch
from .grids import SpatialGrid
from .size_space import Spectrum
from .transport import (
    StepControl,
    TransportCoefficients,
    TransportOperator,
    check_blowup,
    plan_steps,
    resolve_dt,
    ssprk3_step,
    validate_times,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReducedTrajectory:
    grid: SpatialGrid
    times: np.ndarray
    snapshots: np.ndarray  # (nt, nx, nz)
    step_times: np.ndarray
    surface_trace: np.ndarray  # (n_steps + 1, nx), phi0(x, 0, t) after every step
    n_steps: int
    dt_max: float
    operator: TransportOperator | None = None

    def rates(self) -> np.ndarray:
        """Semi-discrete ``phi0_t`` at every snapshot."""
        if self.operator is None:
            raise ValueError("trajectory carries no operator")
        return np.array([reduced_rhs(s, self.operator) for s in self.snapshots]).reshape(
            self.snapshots.shape
        )


def reduced_operator(
    eff: EffectiveCoefficients, V, Kx, grid: SpatialGrid
) -> TransportOperator:
    V = np.asarray(V, dtype=float)
    Kx = np.asarray(Kx, dtype=float)
    if eff.Kz_ef.shape != (grid.nz,):
        raise GridMismatch("effective Kz does not match the z-grid")
    coeffs = TransportCoefficients(
        V=V,
        Kx=Kx,
        Kz_faces=eff.face_Kz()[:, None],
        w=np.array([eff.w_ef]),
        bottom_storage=np.array([eff.c_ef]),
    )
    return TransportOperator(grid, coeffs)


def reduced_rhs(phi: np.ndarray, op: TransportOperator) -> np.ndarray:
    """Semi-discrete time derivative of ``phi`` with shape (..., nx, nz)."""
    return op.rhs(phi[..., None])[..., 0]


def reduced_mass(phi: np.ndarray, grid: SpatialGrid, c_ef: float) -> float:
    """``int int phi dx dz + int c_ef phi(x, 0) dx``."""
    return float(grid.integrate(phi) + c_ef * grid.integrate_x(phi[:, 0]))


def solve_phi0(
    eff: EffectiveCoefficients,
    V,
    Kx,
    phi0_init: np.ndarray,
    grid: SpatialGrid,
    times,
    control: StepControl = StepControl(),
    horizon: float | None = None,
) -> ReducedTrajectory:
    """Integrate the reduced problem with SSP-RK3, landing on every output time.

    ``times`` are the snapshot times (a snapshot at ``t = 0`` is allowed).
    """
    times = validate_times(times, horizon)
    phi = np.array(phi0_init, dtype=float)
    grid.check_field(phi)
    if not np.all(np.isfinite(phi)):
        raise ValueError("initial amplitude is not finite")
    op = reduced_operator(eff, V, Kx, grid)
    dt_max = resolve_dt(control, op.stable_dt(control.cfl))
    rhs = op.rhs
    ref = float(np.max(np.abs(phi))) if phi.size else 0.0

    u = phi[..., None]
    t = 0.0
    snaps = []
    step_times = [0.0]
    trace = [u[:, 0, 0].copy()]
    n_steps = 0
    for (n, dt), t_out in zip(plan_steps(times, 0.0, dt_max), times):
        for k in range(n):
            u = ssprk3_step(rhs, u, dt)
            n_steps += 1
            t = t_out if k == n - 1 else t + dt
            step_times.append(t)
            trace.append(u[:, 0, 0].copy())
            if n_steps % 64 == 0 or k == n - 1:
                check_blowup(u, ref, control, t)
        snaps.append(u[..., 0].copy())
    logger.debug("reduced solver: %d steps, dt_max = %.3e", n_steps, dt_max)
    return ReducedTrajectory(
        grid=grid,
        times=times,
        snapshots=np.array(snaps).reshape(len(times), grid.nx, grid.nz),
        step_times=np.array(step_times),
        surface_trace=np.array(trace),
        n_steps=n_steps,
        dt_max=dt_max,
        operator=op,
    )


def reconstruct_regular(
    traj: ReducedTrajectory, spectrum: Spectrum, eff: EffectiveCoefficients
) -> tuple[np.ndarray, np.ndarray]:
    """Leading regular terms ``u = h0 phi0`` and ``v = c h0 phi0(x, 0)``.

    Returns arrays of shape (nt, nx, nz, n_p) and (nt, nx, n_p).
    """
    h0 = spectrum.h0
    if eff.c.shape != h0.shape:
        raise GridMismatch("effective coefficients and spectrum use different size grids")
    phi = traj.snapshots
    u_bar = phi[..., None] * h0
    v_bar = phi[:, :, 0, None] * (eff.c * h0)
    return u_bar, v_bar
