"""Composite asymptotic solution, error tables, residuals and epsilon sweeps.

The composite is ``u = h0 phi0 + Pu(t / eps^2)`` and
``v = c h0 phi0|_{z=0} + Pv(t / eps^2)``.  Errors against the direct solver
are measured in quadrature norms over every variable::

    |u|_2^2 = int int sum_p q_p u^2 dx dz,      |v|_2^2 = int sum_p q_p v^2 dx

and the state norm ``|(u, v)|_2 = sqrt(|u|_2^2 + |v|_2^2)``.
"""
from __future__ import annotations

import csv
import io
import logging
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundary_layer import (
    LayerModes,
    compute_layer_u,
    decompose_initial,
    layer_u_rate,
    layer_v_rate,
    pi_v_initial,
    solve_layer_v,
)
from .coefficients import EffectiveCoefficients, Profiles, effective_coefficients
from .errors import GridMismatch
from .full_solver import FullStepper, generalized_mass, solve_full
from .grids import SpatialGrid
from .reduced_solver import ReducedTrajectory, reconstruct_regular, solve_phi0
from .size_space import ParticleGrid, SizeOperator, Spectrum, spectral_decompose
from .transport import StepControl

logger = logging.getLogger(__name__)

__all__ = [
    "BoundaryLayers",
    "CompositeSolution",
    "ErrorRow",
    "ErrorTable",
    "ResidualNorms",
    "asymptotic_solution",
    "build_layers",
    "compare_fields",
    "compose_asymptotic",
    "convergence_study",
    "fitted_orders",
    "generalized_mass",
    "residual_of",
    "residual_times",
]


# --- composite -----------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryLayers:
    """Everything needed to evaluate ``Pu`` and ``Pv`` at any fast time."""

    modes: LayerModes
    alpha: np.ndarray
    beta: np.ndarray
    pi_v_init: np.ndarray  # (nx, n_p)

    def u(self, tau: float) -> np.ndarray:
        return compute_layer_u(self.modes, tau)

    def v(self, tau: float) -> np.ndarray:
        return solve_layer_v(self.modes, self.alpha, self.beta, self.pi_v_init, [tau]).values[0]

    def u_rate(self, tau: float) -> np.ndarray:
        return layer_u_rate(self.modes, tau)

    def v_rate(self, tau: float) -> np.ndarray:
        return layer_v_rate(self.modes, self.alpha, self.beta, self.v(tau), tau)


def build_layers(
    u0: np.ndarray, v0: np.ndarray, spectrum: Spectrum, profiles: Profiles
) -> tuple[np.ndarray, BoundaryLayers]:
    """Split initial data into ``phi0(x, z, 0)`` and the layer description."""
    phi0, modes = decompose_initial(u0, spectrum)
    piv = pi_v_initial(v0, phi0, profiles.c, spectrum.h0)
    return phi0, BoundaryLayers(modes, profiles.alpha, profiles.beta, piv)


@dataclass(frozen=True)
class CompositeSolution:
    grid: SpatialGrid
    times: np.ndarray
    epsilon: float
    u_regular: np.ndarray  # (nt, nx, nz, n_p)
    u_layer: np.ndarray
    v_regular: np.ndarray  # (nt, nx, n_p)
    v_layer: np.ndarray
    u_rate: np.ndarray | None = None  # time derivatives, same shapes
    v_rate: np.ndarray | None = None

    @property
    def u(self) -> np.ndarray:
        return self.u_regular + self.u_layer

    @property
    def v(self) -> np.ndarray:
        return self.v_regular + self.v_layer


def compose_asymptotic(
    reduced: ReducedTrajectory,
    layers: BoundaryLayers,
    spectrum: Spectrum,
    eff: EffectiveCoefficients,
    epsilon: float,
) -> CompositeSolution:
    """Sum the regular part and the layer functions at ``tau = t / eps^2``.

    When the reduced trajectory carries its operator, the exact semi-discrete
    time derivatives are attached as well (residual evaluation uses them).
    """
    if not (0 < epsilon <= 1):
        raise ValueError("epsilon must lie in (0, 1]")
    grid = reduced.grid
    n_p = spectrum.size
    if layers.modes.amplitudes.shape[1:] != (grid.nx, grid.nz) and layers.modes.n_modes:
        raise GridMismatch("layer amplitudes do not match the reduced grid")
    if layers.pi_v_init.shape != (grid.nx, n_p):
        raise GridMismatch("surface layer data do not match the grids")
    eps2 = epsilon**2
    u_bar, v_bar = reconstruct_regular(reduced, spectrum, eff)
    nt = reduced.times.size
    u_lay = np.empty_like(u_bar)
    v_lay = np.empty_like(v_bar)
    for k, t in enumerate(reduced.times):
        tau = t / eps2
        u_lay[k] = layers.u(tau)
        v_lay[k] = layers.v(tau)

    u_rate = v_rate = None
    if reduced.operator is not None:
        phi_t = reduced.rates()
        h0 = spectrum.h0
        u_rate = phi_t[..., None] * h0
        v_rate = phi_t[:, :, 0, None] * (eff.c * h0)
        for k in range(nt):
            tau = reduced.times[k] / eps2
            u_rate[k] += layers.u_rate(tau) / eps2
            v_rate[k] += layers.v_rate(tau) / eps2
    return CompositeSolution(
        grid=grid,
        times=reduced.times,
        epsilon=float(epsilon),
        u_regular=u_bar,
        u_layer=u_lay,
        v_regular=v_bar,
        v_layer=v_lay,
        u_rate=u_rate,
        v_rate=v_rate,
    )


@dataclass(frozen=True)
class AsymptoticRun:
    composite: CompositeSolution
    reduced: ReducedTrajectory
    spectrum: Spectrum
    eff: EffectiveCoefficients
    layers: BoundaryLayers


def asymptotic_solution(
    profiles: Profiles,
    op: SizeOperator,
    epsilon: float,
    u0: np.ndarray,
    v0: np.ndarray,
    grid: SpatialGrid,
    times,
    control: StepControl = StepControl(),
    spectrum: Spectrum | None = None,
    horizon: float | None = None,
) -> AsymptoticRun:
    """Run the whole asymptotic pipeline for one epsilon."""
    if spectrum is None:
        spectrum = spectral_decompose(op)
    eff = effective_coefficients(profiles, spectrum)
    phi0, layers = build_layers(u0, v0, spectrum, profiles)
    reduced = solve_phi0(eff, profiles.V, profiles.Kx, phi0, grid, times, control, horizon)
    comp = compose_asymptotic(reduced, layers, spectrum, eff, epsilon)
    return AsymptoticRun(comp, reduced, spectrum, eff, layers)


# --- error tables ---------------------------------------------------------------

NORMS = ("L2", "sup")


def field_norm(u: np.ndarray, grid: SpatialGrid, pgrid: ParticleGrid, norm: str) -> float:
    """Norm of an atmospheric field (nx, nz, n_p)."""
    if norm == "sup":
        return float(np.max(np.abs(u), initial=0.0))
    if norm == "L2":
        sq = np.tensordot(u * u, pgrid.weights, axes=(-1, 0))
        return float(np.sqrt(max(float(grid.integrate(sq)), 0.0)))
    raise ValueError(f"unknown norm {norm!r}")


def surface_norm(v: np.ndarray, grid: SpatialGrid, pgrid: ParticleGrid, norm: str) -> float:
    """Norm of a surface field (nx, n_p)."""
    if norm == "sup":
        return float(np.max(np.abs(v), initial=0.0))
    if norm == "L2":
        sq = np.tensordot(v * v, pgrid.weights, axes=(-1, 0))
        return float(np.sqrt(max(float(grid.integrate_x(sq)), 0.0)))
    raise ValueError(f"unknown norm {norm!r}")


def state_norm(eu: float, ev: float, norm: str) -> float:
    return float(np.hypot(eu, ev)) if norm == "L2" else max(eu, ev)


@dataclass(frozen=True)
class ErrorRow:
    epsilon: float
    grid: str
    norm: str
    t: float
    error_u: float
    error_v: float
    runtime: float = 0.0

    @property
    def error(self) -> float:
        """Error of the state ``(u, v)``."""
        return state_norm(self.error_u, self.error_v, self.norm)


@dataclass
class ErrorTable:
    rows: list[ErrorRow] = field(default_factory=list)
    orders: list[dict] = field(default_factory=list)
    refinement: list[dict] = field(default_factory=list)
    residuals: list[dict] = field(default_factory=list)

    COLUMNS = ("epsilon", "grid", "norm", "t", "error_u", "error_v", "error_state")

    def to_csv(self) -> str:
        """Rows in a fixed column order with round-trip precision.

        Runtimes are left out so reruns produce identical bytes.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow(
                [
                    f"{r.epsilon:.17g}",
                    r.grid,
                    r.norm,
                    f"{r.t:.17g}",
                    f"{r.error_u:.17g}",
                    f"{r.error_v:.17g}",
                    f"{r.error:.17g}",
                ]
            )
        return buf.getvalue()

    def summary(self, runtimes: bool = True) -> str:
        head = "epsilon  grid  norm  t  error_u  error_v  error_state"
        lines = [head + ("  runtime_s" if runtimes else "")]
        for r in self.rows:
            line = (
                f"{r.epsilon:g}  {r.grid}  {r.norm}  {r.t:.6g}  {r.error_u:.4e}  "
                f"{r.error_v:.4e}  {r.error:.4e}"
            )
            lines.append(line + (f"  {r.runtime:.2f}" if runtimes else ""))
        for o in self.orders:
            lines.append(
                f"order {o['field']} {o['norm']} t={o['t']:.6g} "
                f"eps {o['eps_coarse']:g}->{o['eps_fine']:g}: {o['order']:.4f}"
            )
        for r in self.refinement:
            lines.append(
                f"grid refinement eps={r['epsilon']:g}: {r['coarse']} -> {r['fine']} "
                f"relative change {r['relative_change']:.4f}"
            )
        for r in self.residuals:
            lines.append(
                f"residual eps={r['epsilon']:g}: interior {r['interior']:.4e} "
                f"flux {r['flux']:.4e} exchange {r['exchange']:.4e}"
            )
        return "\n".join(lines) + "\n"


def _frames(obj) -> tuple[np.ndarray, np.ndarray, np.ndarray, SpatialGrid]:
    return np.asarray(obj.times), np.asarray(obj.u), np.asarray(obj.v), obj.grid


def compare_fields(
    a,
    b,
    pgrid: ParticleGrid,
    norm: str = "L2",
    epsilon: float | None = None,
    runtime: float = 0.0,
) -> list[ErrorRow]:
    """Per-snapshot errors between two solutions (composite or trajectory).

    Both objects need ``times``, ``u`` (nt, nx, nz, n_p), ``v`` (nt, nx, n_p)
    and ``grid``.
    """
    ta, ua, va, ga = _frames(a)
    tb, ub, vb, gb = _frames(b)
    if ga != gb:
        raise GridMismatch(f"grids differ: {ga} vs {gb}")
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=1e-12, atol=1e-15):
        raise GridMismatch("snapshot times differ")
    if ua.shape != ub.shape or va.shape != vb.shape:
        raise GridMismatch(f"field shapes differ: {ua.shape} vs {ub.shape}")
    if ua.shape[-1] != pgrid.size:
        raise GridMismatch("fields do not match the size grid")
    eps = float(epsilon if epsilon is not None else getattr(a, "epsilon", np.nan))
    spec = f"{ga.nx}x{ga.nz}"
    rows = []
    for k, t in enumerate(ta):
        eu = field_norm(ua[k] - ub[k], ga, pgrid, norm)
        ev = surface_norm(va[k] - vb[k], ga, pgrid, norm)
        rows.append(ErrorRow(eps, spec, norm, float(t), eu, ev, runtime))
    return rows


def fitted_orders(rows: list[ErrorRow], t: float, norm: str = "L2", grid: str | None = None) -> list[dict]:
    """``log2``-type orders ``log(e1/e2)/log(eps1/eps2)`` for consecutive epsilons."""
    sel = [r for r in rows if r.norm == norm and abs(r.t - t) <= 1e-12 * max(1.0, t)]
    if grid is not None:
        sel = [r for r in sel if r.grid == grid]
    sel.sort(key=lambda r: -r.epsilon)
    out = []
    for r1, r2 in zip(sel, sel[1:]):
        ratio = np.log(r1.epsilon / r2.epsilon)
        for name, e1, e2 in (
            ("u", r1.error_u, r2.error_u),
            ("v", r1.error_v, r2.error_v),
            ("state", r1.error, r2.error),
        ):
            order = float(np.log(e1 / e2) / ratio) if e1 > 0 and e2 > 0 else float("nan")
            out.append(
                {
                    "field": name,
                    "norm": norm,
                    "t": float(t),
                    "eps_coarse": r1.epsilon,
                    "eps_fine": r2.epsilon,
                    "order": order,
                }
            )
    return out


# --- residuals --------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualNorms:
    """Time-integrated defects of the interior equation, the flux condition at
    z = 0 and the surface exchange equation."""

    interior: float
    flux: float
    exchange: float

    def as_dict(self) -> dict:
        return {"interior": self.interior, "flux": self.flux, "exchange": self.exchange}


def residual_times(epsilon: float, horizon: float, n_layer: int = 64, n_outer: int = 64,
                   layer_span: float = 30.0) -> np.ndarray:
    """Time grid resolving both the fast layer (``t <= layer_span eps^2``)
    and the slow evolution up to ``horizon``."""
    t_layer = min(layer_span * epsilon**2, horizon)
    fast = np.linspace(0.0, t_layer, n_layer + 1)
    slow = np.linspace(t_layer, horizon, n_outer + 1)[1:] if horizon > t_layer else np.array([])
    return np.concatenate([fast, slow])


def _trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    if times.size < 2:
        return float(values[0]) if values.size else 0.0
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def residual_of(
    candidate,
    profiles: Profiles,
    op: SizeOperator,
    epsilon: float,
    grid: SpatialGrid | None = None,
) -> ResidualNorms:
    """Apply the semi-discrete operators of the full system to ``candidate``.

    Defects (vertex-centred discretisation of the full solver)::

        interior  eps^2 (u_t - T u) - A u                       nodes z > 0
        flux      (dz/2)(u_t - T u - A u / eps^2)|_{z=0} + v_t  bottom half cell
        exchange  eps^2 v_t - (alpha u|_{z=0} - beta v)

    ``T`` is the transport operator without the surface term.  Each defect is
    measured in the quadrature L2 norm at every snapshot and then integrated
    over time with the trapezoid rule.  Time derivatives come from the
    candidate's ``u_rate``/``v_rate`` when present, otherwise from
    second-order finite differences of the snapshots.
    """
    grid = grid if grid is not None else candidate.grid
    times = np.asarray(candidate.times, dtype=float)
    u = np.asarray(candidate.u, dtype=float)
    v = np.asarray(candidate.v, dtype=float)
    u_t = getattr(candidate, "u_rate", None)
    v_t = getattr(candidate, "v_rate", None)
    if u_t is None or v_t is None:
        if times.size < 3:
            raise ValueError("finite-difference rates need at least three snapshots")
        u_t = np.gradient(u, times, axis=0, edge_order=2)
        v_t = np.gradient(v, times, axis=0, edge_order=2)
    stepper = FullStepper(profiles, op, epsilon, grid)
    pgrid = op.grid
    eps2 = epsilon**2
    half = grid.dz / 2
    ra, rb, rc = [], [], []
    for k in range(times.size):
        tu = stepper.transport.rhs(u[k])
        au = op.apply(u[k])
        d_int = eps2 * (u_t[k] - tu) - au
        ra.append(field_norm(d_int[:, 1:], _InteriorQuadrature(grid), pgrid, "L2"))
        d_flux = half * (u_t[k][:, 0] - tu[:, 0] - au[:, 0] / eps2) + v_t[k]
        rb.append(surface_norm(d_flux, grid, pgrid, "L2"))
        d_exch = eps2 * v_t[k] - (profiles.alpha * u[k][:, 0] - profiles.beta * v[k])
        rc.append(surface_norm(d_exch, grid, pgrid, "L2"))
    return ResidualNorms(
        interior=_trapezoid(np.array(ra), times),
        flux=_trapezoid(np.array(rb), times),
        exchange=_trapezoid(np.array(rc), times),
    )


class _InteriorQuadrature:
    """Quadrature over the nodes above the ground (the bottom node is the
    flux balance's business)."""

    def __init__(self, grid: SpatialGrid):
        self.grid = grid

    def integrate(self, field: np.ndarray) -> float:
        wts = self.grid.z_weights[1:]
        return np.tensordot(wts, field.sum(axis=0) * self.grid.dx, axes=(0, 0))


# --- epsilon sweeps ---------------------------------------------------------------


def _one_run(problem, epsilon: float, times: np.ndarray, control: StepControl,
             norms: tuple[str, ...]) -> tuple[list[ErrorRow], float]:
    start = _time.perf_counter()
    asym = asymptotic_solution(
        problem.profiles, problem.op, epsilon, problem.u0, problem.v0, problem.grid, times, control,
        spectrum=getattr(problem, "spectrum", None),
    )
    full = solve_full(
        problem.profiles, problem.op, epsilon, problem.u0, problem.v0, problem.grid, times,
        control, condition2_tol=None,
    )
    runtime = _time.perf_counter() - start
    rows = []
    for norm in norms:
        rows += compare_fields(asym.composite, full, problem.op.grid, norm, epsilon, runtime)
    logger.info("eps=%g grid=%dx%d done in %.1f s", epsilon, problem.grid.nx, problem.grid.nz, runtime)
    return rows, runtime


def _residual_run(problem, epsilon: float, horizon: float, control: StepControl) -> ResidualNorms:
    times = residual_times(epsilon, horizon)
    asym = asymptotic_solution(
        problem.profiles, problem.op, epsilon, problem.u0, problem.v0, problem.grid, times, control,
        spectrum=getattr(problem, "spectrum", None),
    )
    return residual_of(asym.composite, problem.profiles, problem.op, epsilon, problem.grid)


def convergence_study(
    factory,
    epsilons,
    t_eval: float = 0.5,
    base_grid: SpatialGrid | None = None,
    control: StepControl = StepControl(),
    refine: bool = True,
    refine_tol: float = 0.10,
    residuals: bool = True,
    layer_time: bool = True,
    threads: int = 1,
) -> ErrorTable:
    """Composite-vs-direct errors for each epsilon, with fitted orders.

    ``factory(grid)`` returns a :class:`~polytransport.problem.Problem` on that grid
    (``None`` means the configured grid), such as
    ``lambda g: build_problem(config, g)``.  Epsilons are processed in
    descending order.  With ``refine`` every epsilon is also run on the
    grid with both spacings halved; the relative change of the L2 state
    error at ``t_eval`` is recorded and orders are fitted on the finest grid.
    Snapshots are taken at ``t = eps^2`` (inside the layer) when
    ``layer_time`` is set, and at ``t_eval``.  Independent runs execute on up
    to ``threads`` worker threads; results do not depend on the count.
    """
    eps_list = sorted({float(e) for e in epsilons}, reverse=True)
    if not eps_list:
        raise ValueError("at least one epsilon is required")
    if any(not (0 < e <= 1) for e in eps_list):
        raise ValueError("epsilon values must lie in (0, 1]")
    base = factory(base_grid)
    grids = [base.grid] + ([base.grid.refined()] if refine else [])
    problems = [base] + [factory(g) for g in grids[1:]]

    jobs = []
    for eps in eps_list:
        times = [t_eval]
        if layer_time and eps**2 < t_eval:
            times = [eps**2, t_eval]
        for prob in problems:
            jobs.append((prob, eps, np.array(times)))

    norms = ("L2", "sup")
    workers = max(1, int(threads))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_one_run, p, e, t, control, norms) for p, e, t in jobs]
        res_futures = (
            [pool.submit(_residual_run, base, e, t_eval, control) for e in eps_list]
            if residuals
            else []
        )
        results = [f.result() for f in futures]
        res_results = [f.result() for f in res_futures]

    table = ErrorTable()
    for rows, _ in results:
        table.rows.extend(rows)
    finest = f"{grids[-1].nx}x{grids[-1].nz}"
    if refine:
        coarse = f"{grids[0].nx}x{grids[0].nz}"
        for eps in eps_list:
            e = {
                r.grid: r.error
                for r in table.rows
                if r.epsilon == eps and r.norm == "L2" and abs(r.t - t_eval) <= 1e-12
            }
            change = abs(e[finest] - e[coarse]) / e[finest] if e[finest] > 0 else 0.0
            table.refinement.append(
                {
                    "epsilon": eps,
                    "coarse": coarse,
                    "fine": finest,
                    "error_coarse": e[coarse],
                    "error_fine": e[finest],
                    "relative_change": change,
                    "converged": change < refine_tol,
                }
            )
    for norm in norms:
        table.orders += fitted_orders(table.rows, t_eval, norm, finest)
    for eps, r in zip(eps_list, res_results):
        table.residuals.append({"epsilon": eps, **r.as_dict()})
    return table


def residual_orders(table: ErrorTable) -> list[dict]:
    """Fitted orders of each residual for consecutive epsilons."""
    rows = sorted(table.residuals, key=lambda r: -r["epsilon"])
    out = []
    for r1, r2 in zip(rows, rows[1:]):
        ratio = np.log(r1["epsilon"] / r2["epsilon"])
        entry = {"eps_coarse": r1["epsilon"], "eps_fine": r2["epsilon"]}
        for key in ("interior", "flux", "exchange"):
            a, b = r1[key], r2[key]
            entry[key] = float(np.log(a / b) / ratio) if a > 0 and b > 0 else float("nan")
        out.append(entry)
    return out
