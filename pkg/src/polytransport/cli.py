"""Batch front end.

Usage::

    polytransport CONFIG.yaml [--mode MODE] [--out DIR] [--threads N]

The YAML file carries the whole experiment; flags only select the mode,
output directory and worker count.  ``POLYTRANSPORT_OUTPUT_DIR`` overrides
the configured output directory (``--out`` overrides both).  Exit codes:
0 success, 2 configuration error, 3 Condition 1 failure, 4 Condition 2
failure, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import output
from .assembly import (
    ErrorTable,
    asymptotic_solution,
    compare_fields,
    convergence_study,
    fitted_orders,
    residual_orders,
)
from .errors import Condition1Error, Condition2Violated, ConfigError, PolyTransportError
from .full_solver import solve_full, step_diagnostics
from .grids import SpatialGrid
from .problem import build_operator, build_problem, configured_spectrum
from .size_space import default_tol_zero, sorted_eigenvalues, spectrum_report
from .transport import StepControl

logger = logging.getLogger(__name__)

MODES = ("spectrum", "check", "asymptotic", "direct", "compare", "converge")
OUTPUT_ENV = "POLYTRANSPORT_OUTPUT_DIR"
TOP_KEYS = {
    "mode",
    "grid",
    "operator",
    "profiles",
    "initial",
    "epsilons",
    "time",
    "tolerances",
    "condition2_policy",
    "step",
    "output_dir",
    "converge",
    "threads",
}
SECTION_KEYS = {
    "grid": {"nx", "nz", "length_x", "height"},
    "time": {"horizon", "snapshots"},
    "tolerances": {"tol_zero", "gap_min", "beta_min", "condition2"},
    "step": {"dt", "cfl", "stiff_ratio", "blowup"},
    "converge": {"t_eval", "refine", "refine_tol", "residuals", "layer_time"},
}


@dataclass
class RunConfig:
    mode: str
    problem: dict
    epsilons: list[float]
    horizon: float
    snapshots: list[float]
    output_dir: Path
    threads: int = 1
    control: StepControl = field(default_factory=StepControl)
    converge: dict = field(default_factory=dict)
    base_dir: Path | None = None


def _number(section: str, key: str, value, kind=float):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}") from None


def validate_config(raw: dict, base_dir: Path | None = None, mode: str | None = None,
                    out: str | None = None, threads: int | None = None) -> RunConfig:
    """Check a parsed configuration mapping and resolve overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of sections")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration key {sorted(unknown)[0]!r}")
    for section, allowed in SECTION_KEYS.items():
        sec = raw.get(section, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"{section}: expected a mapping")
        extra = set(sec) - allowed
        if extra:
            raise ConfigError(f"unknown key {section}.{sorted(extra)[0]}")
    for key in ("operator", "profiles"):
        if key not in raw:
            raise ConfigError(f"missing configuration key {key!r}")

    mode = mode or raw.get("mode", "compare")
    if mode not in MODES:
        raise ConfigError(f"mode: unknown mode {mode!r}; choose from {', '.join(MODES)}")

    g = raw.get("grid", {})
    for key in ("nx", "nz"):
        if key in g and _number("grid", key, g[key], int) < 1:
            raise ConfigError(f"grid.{key} must be >= 1")
    for key in ("length_x", "height"):
        if key in g and not _number("grid", key, g[key]) > 0:
            raise ConfigError(f"grid.{key} must be positive")

    eps = raw.get("epsilons", [0.1])
    if isinstance(eps, (int, float)):
        eps = [eps]
    eps = [_number("epsilons", str(i), e) for i, e in enumerate(eps)]
    if not eps or any(not (0 < e <= 1) for e in eps):
        raise ConfigError("epsilons: every value must lie in (0, 1]")

    t = raw.get("time", {})
    horizon = _number("time", "horizon", t.get("horizon", 1.0))
    if not horizon > 0:
        raise ConfigError("time.horizon must be positive")
    snaps = t.get("snapshots", [horizon])
    snaps = sorted(_number("time", "snapshots", s) for s in snaps)
    if any(s < 0 or s > horizon * (1 + 1e-12) for s in snaps):
        raise ConfigError("time.snapshots must lie within [0, time.horizon]")
    if len(set(snaps)) != len(snaps):
        raise ConfigError("time.snapshots must be distinct")

    tol = raw.get("tolerances", {})
    for key, val in tol.items():
        if _number("tolerances", key, val) <= 0:
            raise ConfigError(f"tolerances.{key} must be positive")

    step = raw.get("step", {})
    control = StepControl(
        dt=None if step.get("dt") is None else _number("step", "dt", step["dt"]),
        cfl=_number("step", "cfl", step.get("cfl", 0.9)),
        stiff_ratio=None
        if step.get("stiff_ratio") is None
        else _number("step", "stiff_ratio", step["stiff_ratio"]),
        blowup=_number("step", "blowup", step.get("blowup", 1e6)),
    )
    if not 0 < control.cfl <= 1:
        raise ConfigError("step.cfl must lie in (0, 1]")

    out_dir = out or os.environ.get(OUTPUT_ENV) or raw.get("output_dir", "polytransport_out")
    out_dir = Path(out_dir)
    if base_dir is not None and not out_dir.is_absolute() and out is None and OUTPUT_ENV not in os.environ:
        out_dir = base_dir / out_dir
    n_threads = threads if threads is not None else raw.get("threads", 1)
    n_threads = _number("threads", "threads", n_threads, int)
    if n_threads < 1:
        raise ConfigError("threads must be >= 1")

    conv = dict(raw.get("converge", {}))
    conv.setdefault("t_eval", snaps[-1])
    return RunConfig(
        mode=mode,
        problem=raw,
        epsilons=eps,
        horizon=horizon,
        snapshots=snaps,
        output_dir=out_dir,
        threads=n_threads,
        control=control,
        converge=conv,
        base_dir=base_dir,
    )


def load_config(path: Path, **overrides) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration {path} is not valid YAML: {exc}") from None
    return validate_config(raw or {}, base_dir=path.resolve().parent, **overrides)


def _eps_tag(eps: float) -> str:
    return f"eps{eps:g}"


def _grid(cfg: RunConfig) -> SpatialGrid:
    g = cfg.problem.get("grid", {})
    return SpatialGrid(
        int(g.get("nx", 64)), int(g.get("nz", 48)), float(g.get("length_x", 1.0)), float(g.get("height", 1.0))
    )


class Runner:
    """Mode dispatch; every written file is recorded for the manifest."""

    def __init__(self, cfg: RunConfig, stream=None):
        self.cfg = cfg
        self.out = cfg.output_dir
        self.files: list[Path] = []
        self.extra: dict = {"epsilons": cfg.epsilons, "threads": cfg.threads}
        self.stream = stream

    def emit(self, path: Path) -> Path:
        self.files.append(Path(path))
        return path

    def say(self, text: str) -> None:
        stream = self.stream or sys.stdout
        stream.write(text if text.endswith("\n") else text + "\n")

    def run(self) -> int:
        self.out.mkdir(parents=True, exist_ok=True)
        try:
            getattr(self, f"mode_{self.cfg.mode}")()
        finally:
            output.write_manifest(self.out, self.cfg.mode, self.cfg.problem, self.files, self.extra)
        return 0

    def _problem(self, enforce: bool = True):
        return build_problem(self.cfg.problem, _grid(self.cfg), self.cfg.base_dir, enforce)

    # --- modes ---

    def mode_spectrum(self) -> None:
        op = build_operator(self.cfg.problem["operator"], self.cfg.base_dir)
        tol = self.cfg.problem.get("tolerances", {})
        tol_zero = float(tol.get("tol_zero", default_tol_zero(op)))
        gap_min = float(tol.get("gap_min", 1e-6))
        report = spectrum_report(sorted_eigenvalues(op), tol_zero, gap_min)
        path = self.emit(self.out / "spectrum.txt")
        try:
            spectrum = configured_spectrum(op, tol)
        except Condition1Error as exc:
            verdict = f"Condition 1: violated ({type(exc).__name__}: {exc})"
            path.write_text(report + verdict + "\n")
            self.say(report + verdict)
            raise
        verdict = f"Condition 1: satisfied, spectral gap {spectrum.gap:.17g}"
        path.write_text(report + verdict + "\n")
        modes = self.emit(self.out / "modes.csv")
        records = []
        for i in range(spectrum.size):
            for j, p in enumerate(spectrum.grid.nodes):
                records.append(
                    {
                        "index": i,
                        "p": p,
                        "re_h": spectrum.right_modes[j, i].real,
                        "im_h": spectrum.right_modes[j, i].imag,
                        "re_adjoint": spectrum.adjoint_modes[j, i].real,
                        "im_adjoint": spectrum.adjoint_modes[j, i].imag,
                    }
                )
        output.write_records(modes, records)
        self.say(report + verdict)

    def mode_check(self) -> None:
        prob = self._problem(enforce=False)
        rep = prob.condition2
        text = rep.to_text(prob.grid.x, prob.op.grid.nodes)
        self.emit(self.out / "condition2.txt").write_text(text)
        self.say(text)
        if not rep.satisfied and self.cfg.problem.get("condition2_policy", "strict") == "strict":
            raise Condition2Violated(
                f"relative residual {rep.relative_residual:.3e} exceeds {rep.tol:.3e}"
            )

    def _times(self) -> np.ndarray:
        return np.asarray(self.cfg.snapshots, dtype=float)

    def _asymptotic(self, prob, eps):
        run = asymptotic_solution(
            prob.profiles, prob.op, eps, prob.u0, prob.v0, prob.grid, self._times(),
            self.cfg.control, spectrum=prob.spectrum, horizon=self.cfg.horizon,
        )
        tag = _eps_tag(eps)
        g, p = prob.grid, prob.op.grid.nodes
        comp = run.composite
        if not any(f.name == "phi0.csv" for f in self.files):
            output.write_scalar_field(self.emit(self.out / "phi0.csv"), comp.times, g.x, g.z, run.reduced.snapshots)
        output.write_field(self.emit(self.out / f"composite_u_{tag}.csv"), comp.times, g.x, g.z, p, comp.u)
        output.write_surface(self.emit(self.out / f"composite_v_{tag}.csv"), comp.times, g.x, p, comp.v)
        taus = comp.times / eps**2
        output.write_field(
            self.emit(self.out / f"layer_u_{tag}.csv"), taus, g.x, g.z, p, comp.u_layer, "layer_u", "tau"
        )
        output.write_surface(
            self.emit(self.out / f"layer_v_{tag}.csv"), taus, g.x, p, comp.v_layer, "layer_v", "tau"
        )
        self.extra.setdefault("reduced", {})[tag] = {
            "steps": run.reduced.n_steps,
            "dt_max": run.reduced.dt_max,
            "effective": {
                "w_ef": run.eff.w_ef,
                "c_ef": run.eff.c_ef,
                "Kz_ef_surface": float(run.eff.Kz_ef[0]),
            },
        }
        return run

    def _direct(self, prob, eps):
        traj = solve_full(
            prob.profiles, prob.op, eps, prob.u0, prob.v0, prob.grid, self._times(),
            self.cfg.control, horizon=self.cfg.horizon, condition2_tol=None,
        )
        tag = _eps_tag(eps)
        g, p = prob.grid, prob.op.grid.nodes
        output.write_field(self.emit(self.out / f"direct_u_{tag}.csv"), traj.times, g.x, g.z, p, traj.u)
        output.write_surface(self.emit(self.out / f"direct_v_{tag}.csv"), traj.times, g.x, p, traj.v)
        diag = step_diagnostics(traj, prob.spectrum)
        output.write_records(self.emit(self.out / f"diagnostics_{tag}.csv"), diag)
        self.extra.setdefault("direct", {})[tag] = {
            "dt": traj.dt,
            "steps": traj.n_steps,
            "splitting": traj.splitting,
            "grid": {"nx": g.nx, "nz": g.nz, "n_p": p.size},
        }
        return traj

    def mode_asymptotic(self) -> None:
        prob = self._problem()
        for eps in self.cfg.epsilons:
            self._asymptotic(prob, eps)
        self.say(f"wrote {len(self.files)} files to {self.out}")

    def mode_direct(self) -> None:
        prob = self._problem()
        for eps in self.cfg.epsilons:
            self._direct(prob, eps)
        self.say(f"wrote {len(self.files)} files to {self.out}")

    def mode_compare(self) -> None:
        prob = self._problem()
        table = ErrorTable()
        for eps in sorted(self.cfg.epsilons, reverse=True):
            start = time.perf_counter()
            comp = self._asymptotic(prob, eps).composite
            traj = self._direct(prob, eps)
            runtime = time.perf_counter() - start
            for norm in ("L2", "sup"):
                table.rows += compare_fields(comp, traj, prob.op.grid, norm, eps, runtime)
        for norm in ("L2", "sup"):
            for t in self.cfg.snapshots:
                table.orders += fitted_orders(table.rows, t, norm)
        self._write_table(table)

    def mode_converge(self) -> None:
        if len(self.cfg.epsilons) < 1:
            raise ConfigError("epsilons: converge mode needs at least one value")
        conv = self.cfg.converge
        cfg = self.cfg

        def factory(grid):
            return build_problem(cfg.problem, grid or _grid(cfg), cfg.base_dir)

        table = convergence_study(
            factory,
            cfg.epsilons,
            t_eval=float(conv["t_eval"]),
            base_grid=_grid(cfg),
            control=cfg.control,
            refine=bool(conv.get("refine", True)),
            refine_tol=float(conv.get("refine_tol", 0.10)),
            residuals=bool(conv.get("residuals", True)),
            layer_time=bool(conv.get("layer_time", True)),
            threads=cfg.threads,
        )
        self._write_table(table)

    def _write_table(self, table) -> None:
        (self.out / "errors.csv").write_text(table.to_csv())
        self.emit(self.out / "errors.csv")
        if table.orders:
            output.write_records(self.emit(self.out / "orders.csv"), table.orders,
                                 ["field", "norm", "t", "eps_coarse", "eps_fine", "order"])
        if table.refinement:
            output.write_records(self.emit(self.out / "refinement.csv"), table.refinement)
        if table.residuals:
            output.write_records(self.emit(self.out / "residuals.csv"), table.residuals,
                                 ["epsilon", "interior", "flux", "exchange"])
            ro = residual_orders(table)
            if ro:
                output.write_records(self.emit(self.out / "residual_orders.csv"), ro,
                                     ["eps_coarse", "eps_fine", "interior", "flux", "exchange"])
        # runtimes vary between reruns, so they go to the console only
        self.emit(self.out / "summary.txt").write_text(table.summary(runtimes=False))
        summary = table.summary()
        self.say(summary)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polytransport", description=__doc__.split("\n\n")[0])
    ap.add_argument("config", type=Path, help="YAML run configuration")
    ap.add_argument("--mode", choices=MODES, help="override the configured mode")
    ap.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    ap.add_argument("--threads", type=int, help="maximum worker threads")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, mode=args.mode, out=args.out, threads=args.threads)
        return Runner(cfg).run()
    except PolyTransportError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
