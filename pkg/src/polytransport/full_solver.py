"""Direct solver for the complete singularly perturbed system.

Semi-discrete form (vertex-centred finite volumes, see :mod:`.transport`)::

    u_t = T_p[u] + A u / eps^2                       cells j >= 1
    (dz/2) u_t = (dz/2) X[u] - G_{1/2} + (dz/2) A u / eps^2 - v_t    cell j = 0
    v_t = (alpha u|_{z=0} - beta v) / eps^2

The bottom-cell balance is the flux condition: whatever leaves the lowest
half cell through z = 0 is exactly the surface uptake ``v_t``.

Each step is a Strang splitting: half a step of the stiff linear part,
a full explicit transport step, another stiff half step.  The stiff part is
linear and autonomous, so it is applied exactly with precomputed matrix
exponentials: ``exp(h A / eps^2)`` for every cell above the ground and a
``2 n_p`` block coupling the lowest cell with the surface store.  Both
blocks conserve ``(u, h0*)`` plus surface mass exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

from .boundary_layer import check_condition2
from .coefficients import Profiles
from .errors import GridMismatch, SplittingStepTooLarge
from .grids import SpatialGrid
from .size_space import SizeOperator, Spectrum, inner_product
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


def _apply_matrix(mat: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``mat @ f`` along the last axis with a fixed summation order."""
    out = np.zeros(f.shape[:-1] + (mat.shape[0],))
    for j in range(mat.shape[1]):
        out += f[..., j : j + 1] * mat[:, j]
    return out


class FullStepper:
    """Holds the transport operator and cached stiff propagators."""

    def __init__(self, profiles: Profiles, op: SizeOperator, epsilon: float, grid: SpatialGrid):
        if not (0 < epsilon <= 1):
            raise ValueError("epsilon must lie in (0, 1]")
        if profiles.nz != grid.nz:
            raise GridMismatch(f"profiles have {profiles.nz} z-nodes, grid has {grid.nz}")
        if profiles.n_p != op.grid.size:
            raise GridMismatch("profiles and size operator use different size grids")
        self.profiles = profiles
        self.op = op
        self.epsilon = float(epsilon)
        self.grid = grid
        n_p = profiles.n_p
        self.transport = TransportOperator(
            grid,
            TransportCoefficients(
                V=profiles.V,
                Kx=profiles.Kx,
                Kz_faces=profiles.face_Kz(),
                w=profiles.w,
                bottom_storage=np.zeros(n_p),
            ),
        )
        a = op.matrix
        half = grid.dz / 2
        alpha = np.diag(profiles.alpha)
        beta = np.diag(profiles.beta)
        bottom = np.block([[a - alpha / half, beta / half], [alpha, -beta]])
        eps2 = self.epsilon**2
        self.interior_generator = a / eps2
        self.bottom_generator = bottom / eps2
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def stiff_rate(self) -> float:
        """Largest magnitude eigenvalue of the stiff generators."""
        rates = [np.max(np.abs(np.linalg.eigvals(self.bottom_generator)))]
        if self.interior_generator.size:
            rates.append(np.max(np.abs(np.linalg.eigvals(self.interior_generator))))
        return float(max(rates))

    def propagators(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        if h not in self._cache:
            self._cache[h] = (
                spla.expm(h * self.interior_generator),
                spla.expm(h * self.bottom_generator),
            )
        return self._cache[h]

    def stiff(self, u: np.ndarray, v: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
        e_int, e_bot = self.propagators(h)
        n_p = v.shape[-1]
        out = np.empty_like(u)
        out[:, 1:] = _apply_matrix(e_int, u[:, 1:])
        block = _apply_matrix(e_bot, np.concatenate([u[:, 0], v], axis=-1))
        out[:, 0] = block[:, :n_p]
        return out, block[:, n_p:]

    def step(self, u: np.ndarray, v: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
        u, v = self.stiff(u, v, dt / 2)
        u = ssprk3_step(self.transport.rhs, u, dt)
        return self.stiff(u, v, dt / 2)

    def max_dt(self, control: StepControl) -> float:
        dt = resolve_dt(control, self.transport.stable_dt(control.cfl))
        if control.stiff_ratio is not None:
            dt = min(dt, control.stiff_ratio / self.stiff_rate)
        return dt

    def rhs(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Semi-discrete time derivatives of the unsplit system."""
        eps2 = self.epsilon**2
        p = self.profiles
        v_t = (p.alpha * u[:, 0] - p.beta * v) / eps2
        u_t = self.transport.rhs(u) + self.op.apply(u) / eps2
        u_t[:, 0] -= v_t / (self.grid.dz / 2)
        return u_t, v_t


@dataclass
class FullTrajectory:
    grid: SpatialGrid
    epsilon: float
    times: np.ndarray
    u: np.ndarray  # (nt, nx, nz, n_p)
    v: np.ndarray  # (nt, nx, n_p)
    dt: float
    n_steps: int
    splitting: str = "strang"
    log: list = field(default_factory=list)
    stepper: FullStepper | None = None


def solve_full(
    profiles: Profiles,
    op: SizeOperator,
    epsilon: float,
    u0: np.ndarray,
    v0: np.ndarray,
    grid: SpatialGrid,
    times,
    control: StepControl = StepControl(),
    horizon: float | None = None,
    condition2_tol: float | None = 1e-10,
) -> FullTrajectory:
    """Integrate the full system and return snapshots at ``times``.

    ``condition2_tol=None`` skips the initial-data balance check.
    """
    times = validate_times(times, horizon)
    u = np.array(u0, dtype=float)
    v = np.array(v0, dtype=float)
    grid.check_field(u, 3)
    if u.shape[-1] != op.grid.size or v.shape != (grid.nx, op.grid.size):
        raise GridMismatch("initial data do not match the grids")
    if condition2_tol is not None:
        check_condition2(u, v, profiles.alpha, profiles.beta, condition2_tol, "strict")
    stepper = FullStepper(profiles, op, epsilon, grid)
    dt_max = stepper.max_dt(control)
    ref = max(float(np.max(np.abs(u))), float(np.max(np.abs(v), initial=0.0)))

    us, vs, log = [], [], []
    n_steps = 0
    t = 0.0
    for (n, dt), t_out in zip(plan_steps(times, 0.0, dt_max), times):
        for k in range(n):
            u, v = stepper.step(u, v, dt)
            n_steps += 1
            t = t_out if k == n - 1 else t + dt
            if n_steps % 64 == 0 or k == n - 1:
                check_blowup(u, ref, control, t)
                check_blowup(v, ref, control, t)
        us.append(u.copy())
        vs.append(v.copy())
        log.append({"t": float(t_out), "steps": n, "dt": float(dt)})
    logger.debug("full solver eps=%g: %d steps, dt_max=%.3e", epsilon, n_steps, dt_max)
    n_p = op.grid.size
    return FullTrajectory(
        grid=grid,
        epsilon=float(epsilon),
        times=times,
        u=np.array(us).reshape(len(times), grid.nx, grid.nz, n_p),
        v=np.array(vs).reshape(len(times), grid.nx, n_p),
        dt=float(dt_max),
        n_steps=n_steps,
        log=log,
        stepper=stepper,
    )


def generalized_mass(u: np.ndarray, v: np.ndarray, spectrum: Spectrum, grid: SpatialGrid) -> float:
    """``(int int u dx dz + int v dx, h0*)`` by quadrature in every variable."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    grid.check_field(u, 3)
    if v.shape != (grid.nx, u.shape[-1]):
        raise GridMismatch(f"surface field shape {v.shape} does not match the grids")
    column = grid.integrate(u) + grid.integrate_x(v)
    return float(inner_product(column, spectrum.adjoint_null, spectrum.grid))


def step_diagnostics(
    traj: FullTrajectory, spectrum: Spectrum, halving_tol: float | None = None
) -> list[dict]:
    """Per-snapshot generalized mass, field ranges and a step-halving estimate
    of the splitting error (one step of the run's ``dt`` against two halves)."""
    rows = []
    for k, t in enumerate(traj.times):
        u, v = traj.u[k], traj.v[k]
        row = {
            "t": float(t),
            "generalized_mass": generalized_mass(u, v, spectrum, traj.grid),
            "u_min": float(u.min()),
            "u_max": float(u.max()),
            "v_min": float(v.min()) if v.size else 0.0,
            "v_max": float(v.max()) if v.size else 0.0,
            "halving_error": float("nan"),
        }
        if traj.stepper is not None:
            dt = traj.dt
            u1, v1 = traj.stepper.step(u, v, dt)
            u2, v2 = traj.stepper.step(*traj.stepper.step(u, v, dt / 2), dt / 2)
            err = max(float(np.max(np.abs(u1 - u2))), float(np.max(np.abs(v1 - v2), initial=0.0)))
            row["halving_error"] = err
            if halving_tol is not None and err > halving_tol:
                raise SplittingStepTooLarge(
                    f"step-halving disagreement {err:.3e} at t = {t:.6g} exceeds {halving_tol:.3e}"
                )
        rows.append(row)
    return rows
