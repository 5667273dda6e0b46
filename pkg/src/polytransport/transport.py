"""Finite-volume transport operator shared by the reduced and full solvers.

Fields have shape ``(nx, nz, m)`` where ``m`` is 1 for the reduced amplitude
and the number of size nodes for the full field.  The operator discretises

    u_t = -V(z) u_x + Kx(z) u_xx + w u_z + (Kz u_z)_z

on vertex-centred cells (half cells at z = 0 and z = Z_top).  x is periodic;
the top face carries zero total flux.  The flux through z = 0 is *not*
included here: each solver supplies it through its own surface balance.
Upwind differences are used for both advection terms and second-order
central differences for diffusion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUp, CFLViolation
from .grids import SpatialGrid


@dataclass(frozen=True)
class StepControl:
    """Time-step selection.

    ``dt`` fixes the (maximum) step; ``None`` picks ``cfl`` times the explicit
    stability limit.  ``stiff_ratio`` (full solver only) caps
    ``dt * |lambda|_max / eps**2`` so that the splitting resolves the fast
    relaxation accurately.  ``blowup`` bounds ``max|u|`` relative to the
    initial data.
    """

    dt: float | None = None
    cfl: float = 0.9
    stiff_ratio: float | None = None
    blowup: float = 1e6
    max_steps: int = 50_000_000


@dataclass(frozen=True)
class TransportCoefficients:
    """Coefficients in the layout the stencil wants.

    ``V``, ``Kx``: (nz,); ``Kz_faces``: (nz-1, m); ``w``: (m,);
    ``bottom_storage``: (m,) extra capacity attached to the z = 0 cell.
    """

    V: np.ndarray
    Kx: np.ndarray
    Kz_faces: np.ndarray
    w: np.ndarray
    bottom_storage: np.ndarray


class TransportOperator:
    def __init__(self, grid: SpatialGrid, coeffs: TransportCoefficients):
        self.grid = grid
        self.coeffs = coeffs
        nz = grid.nz
        m = coeffs.w.shape[0]
        if coeffs.V.shape != (nz,) or coeffs.Kx.shape != (nz,):
            raise ValueError("V and Kx must be given per z-node")
        if coeffs.Kz_faces.shape != (nz - 1, m) or coeffs.bottom_storage.shape != (m,):
            raise ValueError("Kz faces / bottom storage have inconsistent shapes")
        self.m = m
        vol = np.repeat(grid.z_weights[:, None], m, axis=1)
        self._cell = vol
        cap = vol.copy()
        cap[0] += coeffs.bottom_storage
        self._capacity = cap
        self._vpos = np.maximum(coeffs.V, 0.0)[None, :, None]
        self._vneg = np.minimum(coeffs.V, 0.0)[None, :, None]
        self._kx = coeffs.Kx[None, :, None]
        self._kzf = coeffs.Kz_faces[None, :, :]
        self._w = coeffs.w[None, None, :]

    def x_part(self, u: np.ndarray) -> np.ndarray:
        """Per-unit-volume horizontal transport ``-(V u)_x + Kx u_xx``."""
        dx = self.grid.dx
        up = np.roll(u, -1, axis=0)
        flux = self._vpos * u + self._vneg * up
        adv = -(flux - np.roll(flux, 1, axis=0)) / dx
        diff = self._kx * (up - 2.0 * u + np.roll(u, 1, axis=0)) / dx**2
        return adv + diff

    def z_fluxes(self, u: np.ndarray) -> np.ndarray:
        """Upward flux ``-w u - Kz u_z`` at interior faces, shape (nx, nz-1, m)."""
        dz = self.grid.dz
        return -self._w * u[:, 1:] - self._kzf * (u[:, 1:] - u[:, :-1]) / dz

    def net_z(self, u: np.ndarray) -> np.ndarray:
        """Net vertical inflow per cell (zero flux at the top and at z = 0)."""
        g = self.z_fluxes(u)
        net = np.zeros_like(u)
        net[:, :-1] -= g
        net[:, 1:] += g
        return net

    def rhs(self, u: np.ndarray) -> np.ndarray:
        """Time derivative from transport alone (surface storage included in
        the bottom cell capacity)."""
        return (self._cell * self.x_part(u) + self.net_z(u)) / self._capacity

    def max_rate(self) -> float:
        """Largest diagonal coefficient; explicit Euler is positive for
        ``dt * max_rate <= 1``."""
        g = self.grid
        c = self.coeffs
        rate_x = np.abs(c.V) / g.dx + 2.0 * c.Kx / g.dx**2
        kzf = c.Kz_faces / g.dz
        rate_z = np.zeros((g.nz, self.m))
        rate_z[:-1] += kzf
        rate_z[1:] += c.w[None, :] + kzf
        rate = rate_x[:, None] * self._cell / self._capacity + rate_z / self._capacity
        return float(np.max(rate))

    def stable_dt(self, cfl: float) -> float:
        rate = self.max_rate()
        return np.inf if rate == 0 else cfl / rate


def ssprk3_step(rhs, u: np.ndarray, dt: float) -> np.ndarray:
    """One Shu-Osher third-order strong-stability-preserving RK step."""
    u1 = u + dt * rhs(u)
    u2 = 0.75 * u + 0.25 * (u1 + dt * rhs(u1))
    return u / 3.0 + 2.0 / 3.0 * (u2 + dt * rhs(u2))


def plan_steps(times: np.ndarray, t0: float, dt_max: float) -> list[tuple[int, float]]:
    """Split each interval between output times into equal steps <= dt_max."""
    plan = []
    prev = t0
    for t in times:
        span = t - prev
        if span <= 0:
            plan.append((0, 0.0))
        else:
            n = max(1, int(np.ceil(span / dt_max * (1 - 1e-12))))
            plan.append((n, span / n))
        prev = t
    return plan


def resolve_dt(control: StepControl, dt_stable: float) -> float:
    if control.dt is not None:
        if control.dt <= 0:
            raise CFLViolation("time step must be positive")
        if control.dt > dt_stable / control.cfl * (1 + 1e-12):
            raise CFLViolation(
                f"requested dt = {control.dt:.3e} exceeds the stability limit {dt_stable / control.cfl:.3e}"
            )
        return control.dt
    return dt_stable


def check_blowup(u: np.ndarray, reference: float, control: StepControl, t: float) -> None:
    peak = float(np.max(np.abs(u))) if u.size else 0.0
    if not np.isfinite(peak) or peak > control.blowup * max(reference, 1.0):
        raise BlowUp(f"solution blew up at t = {t:.6g} (max |u| = {peak:.3e})")


def validate_times(times, horizon: float | None = None) -> np.ndarray:
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        return times
    if np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise ValueError("output times must be nonnegative and strictly increasing")
    if horizon is not None and times[-1] > horizon * (1 + 1e-12):
        raise ValueError("output times exceed the time horizon")
    return times
