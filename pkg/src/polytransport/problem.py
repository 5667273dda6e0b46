"""Problem definitions built from a configuration mapping.

A configuration describes profiles and initial data through named families
so the same problem can be rebuilt on any spatial grid (grid refinement
studies need that).  :data:`REFERENCE_CONFIG` is the surface-compatible
reference configuration used by the validation suite.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import coefficients as cf
from .boundary_layer import Condition2Report, check_condition2, condition2_residual
from .errors import ConfigError
from .grids import SpatialGrid
from .size_space import (
    DEFAULT_GAP_MIN,
    ParticleGrid,
    SizeOperator,
    build_conservative_operator,
    chain_operator,
    load_table,
    single_bin_operator,
    Spectrum,
    spectral_decompose,
    two_bin_operator,
)

REFERENCE_CONFIG: dict = {
    "grid": {"nx": 64, "nz": 48, "length_x": 1.0, "height": 1.0},
    "operator": {"builtin": "two_bin", "a": 1.0, "b": 2.0},
    "profiles": {
        "V": {"family": "log_wind", "u_star": 0.5, "z0": 0.1, "z_ref": 1.0},
        "Kx": {"family": "constant", "value": 0.01},
        "Kz": {
            "family": "linear",
            "a": 0.02,
            "b": 0.03,
            "p_bump": {"amplitude": [0.0, 1.5], "center": 0.55, "half_width": 0.35},
        },
        "w": 0.05,
        "alpha": [0.5, 1.0],
        "beta": [1.0, 2.0],
    },
    "initial": {
        "equilibrium": {
            "family": "gaussian_wave",
            "background": 1.0,
            "amplitude": 0.5,
            "kx": 1,
            "z_center": 0.3,
            "z_width": 0.05,
        },
        "modes": [
            {
                "mode": 1,
                "family": "surface_ramp",
                "amplitude": 0.12,
                "modulation": 0.5,
                "scale": 0.25,
            }
        ],
        "surface": "equilibrium",
    },
    "epsilons": [0.2, 0.1],
    "time": {"horizon": 0.5, "snapshots": [0.5]},
    "tolerances": {"gap_min": 1e-6, "beta_min": 1e-8, "condition2": 1e-10},
    "condition2_policy": "strict",
    "step": {"cfl": 0.9, "stiff_ratio": 0.5},
}


@dataclass(frozen=True)
class Problem:
    grid: SpatialGrid
    op: SizeOperator
    profiles: cf.Profiles
    u0: np.ndarray
    v0: np.ndarray
    condition2: Condition2Report | None = None
    spectrum: Spectrum | None = None


# --- initial-data families on the (x, z) grid ---------------------------------


def _field_family(spec: dict, grid: SpatialGrid) -> np.ndarray:
    spec = dict(spec)
    name = spec.pop("family", None)
    X, Z = grid.mesh()
    L = grid.length_x
    try:
        if name == "constant":
            return np.full(X.shape, float(spec.pop("value", 1.0)))
        if name == "wave":
            # background + amplitude cos(2 pi kx x / L) cos(pi kz z / H)
            out = spec.pop("background", 0.0) + spec.pop("amplitude", 1.0) * np.cos(
                2 * np.pi * spec.pop("kx", 1) * X / L
            ) * np.cos(np.pi * spec.pop("kz", 1) * Z / grid.height)
        elif name == "gaussian_wave":
            out = spec.pop("background", 0.0) + spec.pop("amplitude", 1.0) * np.cos(
                2 * np.pi * spec.pop("kx", 1) * X / L
            ) * np.exp(-((Z - spec.pop("z_center", 0.5)) ** 2) / spec.pop("z_width", 0.1))
        elif name == "surface_ramp":
            # vanishes at z = 0 with nonzero slope, peaks at z = scale
            s = spec.pop("scale", 0.25)
            out = (
                spec.pop("amplitude", 1.0)
                * (1 + spec.pop("modulation", 0.0) * np.sin(2 * np.pi * X / L))
                * (Z / s)
                * np.exp(1 - Z / s)
            )
        else:
            raise ConfigError(f"unknown initial-data family {name!r}")
    except TypeError as exc:
        raise ConfigError(f"bad parameters for initial-data family {name!r}: {exc}") from exc
    if spec:
        raise ConfigError(f"unknown keys for initial-data family {name!r}: {sorted(spec)}")
    return out


def _z_profile(spec, z: np.ndarray, base_dir: Path | None) -> np.ndarray:
    if isinstance(spec, (int, float)):
        return np.full(z.shape, float(spec))
    if not isinstance(spec, dict):
        raise ConfigError(f"profile must be a number or a mapping, got {spec!r}")
    spec = dict(spec)
    spec.pop("p_bump", None)
    spec.pop("p_factor", None)
    if "table" in spec:
        path = Path(spec["table"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return cf.profile_from_table(path, z)
    name = spec.pop("family", None)
    if name is None:
        raise ConfigError(f"profile mapping needs 'family' or 'table': {spec!r}")
    return cf.profile_from_family(name, z, **spec)


def build_operator(spec: dict, base_dir: Path | None = None) -> SizeOperator:
    spec = dict(spec)
    weights = spec.get("weights")
    nodes = spec.get("nodes")

    def grid_for(n):
        if nodes is not None:
            g = (
                ParticleGrid(nodes, weights)
                if weights is not None
                else ParticleGrid.trapezoid(nodes)
            )
        else:
            g = ParticleGrid.unit_bins(n) if weights is None else ParticleGrid(np.arange(1.0, n + 1), weights)
        if g.size != n:
            raise ConfigError(f"operator has {n} bins but the size grid has {g.size}")
        return g

    def resolve(p):
        p = Path(p)
        return base_dir / p if base_dir is not None and not p.is_absolute() else p

    if "builtin" in spec:
        name = spec["builtin"]
        if name == "two_bin":
            return two_bin_operator(float(spec.get("a", 1.0)), float(spec.get("b", 2.0)))
        if name in ("three_bin", "chain"):
            return chain_operator(int(spec.get("n", 3)), float(spec.get("rate", 1.0)))
        if name == "single_bin":
            return single_bin_operator()
        raise ConfigError(f"unknown built-in operator {name!r}")
    if "matrix" in spec:
        mat = load_table(resolve(spec["matrix"]))
        return SizeOperator.from_matrix(mat, grid_for(mat.shape[0]))
    if "kernel" in spec:
        ker = load_table(resolve(spec["kernel"]))
        return build_conservative_operator(ker, grid_for(ker.shape[0]))
    raise ConfigError("operator section needs one of 'builtin', 'matrix', 'kernel'")


def build_problem(
    config: dict,
    grid: SpatialGrid | None = None,
    base_dir: Path | None = None,
    enforce: bool = True,
) -> Problem:
    """Assemble grids, operator, profiles and initial data.

    ``grid`` overrides the configured grid (used for refinement).  The
    condition-2 policy is applied here: ``repair`` rewrites the surface data
    and ``strict`` raises on violation.  ``enforce=False`` only attaches the
    report.
    """
    try:
        if grid is None:
            g = config.get("grid", {})
            grid = SpatialGrid(
                int(g.get("nx", 64)),
                int(g.get("nz", 48)),
                float(g.get("length_x", 1.0)),
                float(g.get("height", 1.0)),
            )
        op = build_operator(config["operator"], base_dir)
        pgrid = op.grid
        prof = config["profiles"]
        tol = config.get("tolerances", {})
        z = grid.z
        V = _z_profile(prof.get("V", 0.0), z, base_dir)
        Kx = _z_profile(prof.get("Kx", 0.0), z, base_dir)
        kz_spec = prof.get("Kz", 1.0)
        kz_base = _z_profile(kz_spec, z, base_dir)
        Kz = np.repeat(kz_base[:, None], pgrid.size, axis=1)
        if isinstance(kz_spec, dict):
            if "p_factor" in kz_spec:
                Kz = Kz * cf.size_profile(kz_spec["p_factor"], pgrid)[None, :]
            if "p_bump" in kz_spec:
                b = dict(kz_spec["p_bump"])
                amp = cf.size_profile(b.pop("amplitude"), pgrid)
                shape = cf.bump(z, **b)
                Kz = Kz * (1 + amp[None, :] * shape[:, None])
        profiles = cf.Profiles(
            V=V,
            Kx=Kx,
            Kz=Kz,
            w=cf.size_profile(prof.get("w", 0.0), pgrid),
            alpha=cf.size_profile(prof.get("alpha", 0.0), pgrid),
            beta=cf.size_profile(prof.get("beta", 1.0), pgrid),
            beta_min=float(tol.get("beta_min", cf.DEFAULT_BETA_MIN)),
        )
        spectrum = configured_spectrum(op, tol)
        u0, v0 = _initial_data(config.get("initial", {}), grid, op, profiles, spectrum)
    except KeyError as exc:
        raise ConfigError(f"missing configuration key {exc}") from None

    policy = config.get("condition2_policy", "strict")
    if policy not in ("strict", "repair"):
        raise ConfigError(f"condition2_policy must be 'strict' or 'repair', got {policy!r}")
    tol2 = float(tol.get("condition2", 1e-10))
    if not enforce:
        report = condition2_residual(u0, v0, profiles.alpha, profiles.beta, tol2)
        return Problem(grid, op, profiles, u0, v0, report, spectrum)
    report, v0 = check_condition2(
        u0, v0, profiles.alpha, profiles.beta, tol2, policy
    )
    return Problem(grid, op, profiles, u0, v0, report, spectrum)


def configured_spectrum(op: SizeOperator, tol: dict) -> Spectrum:
    """Spectral decomposition with the configured ``tol_zero``/``gap_min``."""
    tz = tol.get("tol_zero")
    return spectral_decompose(
        op,
        tol_zero=None if tz is None else float(tz),
        gap_min=float(tol.get("gap_min", DEFAULT_GAP_MIN)),
    )


def _initial_data(spec: dict, grid, op, profiles, spectrum) -> tuple[np.ndarray, np.ndarray]:
    eq = spec.get("equilibrium", {"family": "constant", "value": 1.0})
    u0 = _field_family(eq, grid)[..., None] * spectrum.h0
    for entry in spec.get("modes", []):
        entry = dict(entry)
        i = int(entry.pop("mode"))
        if not 1 <= i < spectrum.size:
            raise ConfigError(f"initial mode index {i} out of range 1..{spectrum.size - 1}")
        mode = spectrum.right_modes[:, i]
        if np.any(mode.imag != 0):
            raise ConfigError(f"initial mode {i} is complex; use a real mode")
        u0 = u0 + _field_family(entry, grid)[..., None] * mode.real
    surface = spec.get("surface", "equilibrium")
    if surface == "equilibrium":
        v0 = profiles.c * u0[:, 0, :]
    elif surface == "zero":
        v0 = np.zeros((grid.nx, op.grid.size))
    elif isinstance(surface, (int, float)):
        v0 = np.full((grid.nx, op.grid.size), float(surface))
    else:
        raise ConfigError(f"unknown surface initial data {surface!r}")
    return u0, v0


def reference_config(**overrides) -> dict:
    """Deep copy of :data:`REFERENCE_CONFIG` with top-level overrides."""
    cfg = copy.deepcopy(REFERENCE_CONFIG)
    cfg.update(copy.deepcopy(overrides))
    return cfg
