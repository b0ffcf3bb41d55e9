"""Problem ingestion, pipeline orchestration, and artifact persistence.

Problems are declared in JSON; field-valued entries are scalars, inline
nested lists, or references to CSV grids written by :mod:`finsler_hj.geometry`.
The ``solve`` command runs the exponent ladder and writes per-rung fields,
a duality report, and a ladder convergence record; ``oracle`` writes the
shortest-path envelope and the sup-norm gap against any solved limit;
``report`` re-summarizes existing artifacts.  Outputs are deterministic for
a fixed seed so reruns are byte-identical (plots excepted).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry, metric as metric_mod
from .distance import maximal_subsolution
from .geometry import Grid, ScalarField
from .metric import GridField, METRIC_FAMILIES, FinslerMetric
from .solver import (
    IncompatibleSpec,
    LadderResult,
    ProblemSpec,
    mass_balance_gap,
    solve_ladder,
)
from .transport import duality_report


class ParseError(ValueError):
    """The problem file is not valid JSON or misses required keys."""


class ValidationError(ValueError):
    """The problem file parses but violates a declared invariant."""


@dataclass
class RunConfig:
    problem: ProblemSpec
    commands: tuple[str, ...]
    out_dir: Path
    plots: bool
    seed: int
    assertions: dict


def _field_values(entry, grid: Grid, base: Path, what: str) -> np.ndarray:
    """Scalar, inline nested list, or CSV reference, resolved to node values."""
    if isinstance(entry, (int, float)):
        return np.full(grid.shape, float(entry))
    if isinstance(entry, dict) and "csv" in entry:
        f = geometry.read_scalar_csv(base / entry["csv"])
        if not f.grid.same_as(grid):
            raise ValidationError(f"{what}: CSV grid does not match the problem grid")
        return f.values
    if isinstance(entry, dict) and "values" in entry:
        v = np.asarray(entry["values"], dtype=float)
        if v.shape != grid.shape:
            raise ValidationError(f"{what}: inline values have shape {v.shape}, grid is {grid.shape}")
        return v
    raise ParseError(f"{what}: expected a number, {{'csv': path}} or {{'values': [[...]]}}")


def _boundary_values(entry, grid: Grid, base: Path, what: str) -> np.ndarray:
    nb = len(grid.boundary_nodes)
    if isinstance(entry, (int, float)):
        return np.full(nb, float(entry))
    if isinstance(entry, dict) and "boundary_values" in entry:
        v = np.asarray(entry["boundary_values"], dtype=float)
        if v.shape != (nb,):
            raise ValidationError(f"{what}: need {nb} boundary values, got {v.shape}")
        return v
    return _field_values(entry, grid, base, what).reshape(-1)[grid.boundary_nodes]


def _metric_param(entry, grid: Grid, base: Path, what: str):
    if isinstance(entry, (int, float)):
        return float(entry)
    return GridField(grid, _field_values(entry, grid, base, what))


def _build_metric(cfg: dict, grid: Grid, base: Path) -> FinslerMetric:
    family = cfg.get("family")
    if family not in METRIC_FAMILIES:
        raise ParseError(f"metric.family must be one of {sorted(METRIC_FAMILIES)}, got {family!r}")
    if family == "weighted_euclidean":
        return METRIC_FAMILIES[family](_metric_param(cfg.get("k", 1.0), grid, base, "metric.k"))
    if family == "riemannian":
        return METRIC_FAMILIES[family](
            _metric_param(cfg.get("a11", 1.0), grid, base, "metric.a11"),
            _metric_param(cfg.get("a12", 0.0), grid, base, "metric.a12"),
            _metric_param(cfg.get("a22", 1.0), grid, base, "metric.a22"),
        )
    if family == "polytope":
        if "vertices" not in cfg:
            raise ParseError("polytope metric needs a 'vertices' list")
        return METRIC_FAMILIES[family](np.asarray(cfg["vertices"], dtype=float))
    if isinstance(cfg.get("b"), list):
        return METRIC_FAMILIES[family](np.asarray(cfg["b"], dtype=float))
    raise ParseError("shifted metric needs a constant drift 'b': [bx, by]")


def load_problem(path, overrides: dict | None = None) -> ProblemSpec:
    """Parse and eagerly validate a JSON problem file.

    Raises ParseError for malformed input and ValidationError (naming the
    violated invariant, including the compatibility witness) for bad data.
    """
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    base = path.parent
    overrides = overrides or {}

    try:
        gc = dict(cfg["grid"])
        nx, ny = int(gc["nx"]), int(gc["ny"])
        h = float(gc["extent"]) / (nx - 1) if "extent" in gc else float(gc["h"])
        if overrides.get("grid"):
            # The override keeps the physical x-extent; meant for square configs.
            n = int(overrides["grid"])
            h = h * (nx - 1) / (n - 1)
            nx = ny = n
        grid = Grid(nx, ny, h, tuple(gc.get("origin", (0.0, 0.0))))
    except KeyError as e:
        raise ParseError(f"grid section missing key {e}") from e

    fmetric = _build_metric(cfg.get("metric", {"family": "weighted_euclidean"}), grid, base)
    rho = ScalarField(grid, _field_values(cfg.get("rho", 0.0), grid, base, "rho"))
    phi = _boundary_values(cfg.get("phi", 0.0), grid, base, "phi")
    psi = _boundary_values(cfg.get("psi", 0.0), grid, base, "psi")

    ladder = tuple(int(p) for p in cfg.get("p_ladder", (2, 4, 8, 16, 32, 64)))
    if "p_max" in overrides and overrides["p_max"]:
        ladder = tuple(p for p in ladder if p <= int(overrides["p_max"]))
        if not ladder:
            raise ValidationError("p_max override removed every ladder rung")

    try:
        spec = ProblemSpec(
            grid=grid,
            metric=fmetric,
            rho=rho,
            phi=phi,
            psi=psi,
            p_ladder=ladder,
            grad_tol_scale=float(cfg.get("grad_tol_scale", 1e-8)),
            max_iterations=int(cfg.get("max_iterations", 5000)),
            epsilon_schedule=cfg.get("epsilon_schedule"),
        )
        spec.validate()
    except IncompatibleSpec as e:
        raise ValidationError(str(e)) from e
    except ValueError as e:
        raise ValidationError(str(e)) from e
    return spec


def _default_assertions() -> dict:
    return {
        "max_duality_gap_rel": 0.05,
        "max_complementarity_leak": 0.02,
        "mass_balance_tol_factor": 10.0,
        "max_oracle_sup_gap": 0.05,
    }


def load_config(path, args) -> RunConfig:
    cfg = json.loads(Path(path).read_text())
    spec = load_problem(path, overrides={"grid": args.grid, "p_max": args.p_max})
    assertions = _default_assertions()
    assertions.update(cfg.get("assertions", {}))
    return RunConfig(
        problem=spec,
        commands=(args.command,),
        out_dir=Path(args.out),
        plots=bool(args.plots),
        seed=int(args.seed if args.seed is not None else cfg.get("seed", 0)),
        assertions=assertions,
    )


def _write_rung(out: Path, sol) -> None:
    geometry.write_scalar_csv(out / f"u_p{sol.p}.csv", sol.u)
    geometry.write_vector_csv(out / f"theta_p{sol.p}.csv", sol.theta)
    geometry.write_boundary_csv(out / f"theta_bdy_p{sol.p}.csv", sol.theta_boundary)


def _ladder_record(ladder: LadderResult) -> dict:
    # Wall time is deliberately omitted: report.json is byte-reproducible.
    return {
        "p": [s.p for s in ladder.solutions],
        "energy": [s.energy for s in ladder.solutions],
        "iterations": [s.iterations for s in ladder.solutions],
        "grad_norm": [s.grad_norm for s in ladder.solutions],
        "tol": [s.tol for s in ladder.solutions],
        "epsilon": [s.epsilon for s in ladder.solutions],
        "converged": [s.converged for s in ladder.solutions],
        "sup_diffs": ladder.sup_diffs,
    }


def _emit_plots(out: Path, ladder: LadderResult) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sol = ladder.final
    grid = sol.u.grid
    for name, img in (
        ("u", sol.u.values),
        ("flux_magnitude", sol.theta.magnitude()),
    ):
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(img, origin="lower", extent=(0, grid.extent[0], 0, grid.extent[1]))
        fig.colorbar(im, ax=ax)
        ax.set_title(f"{name} at p={sol.p}")
        fig.savefig(out / f"{name}_p{sol.p}.png", dpi=120)
        plt.close(fig)
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(sol.theta_boundary.weights, lw=1)
    ax.set_xlabel("boundary node (ccw)")
    ax.set_ylabel("boundary measure")
    fig.tight_layout()
    fig.savefig(out / f"theta_boundary_p{sol.p}.png", dpi=120)
    plt.close(fig)


def run_pipeline(config: RunConfig) -> int:
    """Execute the requested commands; returns a process exit status."""
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    spec = config.problem
    rng = np.random.default_rng(config.seed)
    failures: list[str] = []
    report: dict = {"seed": config.seed}

    command = config.commands[0]
    if command == "solve":
        ladder = solve_ladder(spec)
        for sol in ladder.solutions:
            _write_rung(out, sol)
        report["ladder"] = _ladder_record(ladder)

        for sol in ladder.solutions:
            if not sol.converged:
                continue
            gap = mass_balance_gap(sol, spec)
            cap = config.assertions["mass_balance_tol_factor"] * sol.tol
            if gap > cap:
                failures.append(
                    f"solver.mass_balance: |sum theta + int rho| = {gap:.3e} > {cap:.3e} at p={sol.p}"
                )

        dr = duality_report(spec, ladder.final, rng=rng)
        report["duality"] = dr.as_dict()
        if not dr.weak_duality_ok:
            failures.append(
                f"transport.weak_duality: KR {dr.kr_value:.6g} exceeds Beckmann {dr.beckmann_value:.6g}"
            )
        if dr.gap_rel > config.assertions["max_duality_gap_rel"]:
            failures.append(
                f"transport.duality_gap: relative gap {dr.gap_rel:.3g} > "
                f"{config.assertions['max_duality_gap_rel']}"
            )
        leak_p, leak_m = dr.complementarity_leak
        if max(leak_p, leak_m) > config.assertions["max_complementarity_leak"]:
            failures.append(
                f"transport.complementarity: leak ({leak_p:.3g}, {leak_m:.3g}) > "
                f"{config.assertions['max_complementarity_leak']}"
            )
        if config.plots:
            _emit_plots(out, ladder)

    elif command == "oracle":
        oracle = maximal_subsolution(spec.metric, spec.grid, spec.phi, spec.psi)
        geometry.write_scalar_csv(out / "oracle_v.csv", oracle)
        report["oracle"] = {"center_value": float(oracle.values[spec.grid.ny // 2, spec.grid.nx // 2])}
        u_files = sorted(out.glob("u_p*.csv"), key=lambda p: int(p.stem.split("u_p")[1]))
        if u_files:
            u = geometry.read_scalar_csv(u_files[-1])
            gap = float(np.max(np.abs(u.values - oracle.values)))
            report["oracle"]["sup_gap"] = gap
            report["oracle"]["against"] = u_files[-1].name
            if gap > config.assertions["max_oracle_sup_gap"]:
                failures.append(
                    f"solver.limit_oracle: sup gap {gap:.3g} > "
                    f"{config.assertions['max_oracle_sup_gap']}"
                )

    elif command == "report":
        missing = []
        u_files = sorted(out.glob("u_p*.csv"))
        if not u_files:
            missing.append("u_p*.csv")
        if not (out / "report.json").exists() and not u_files:
            missing.append("report.json")
        if missing:
            sys.stderr.write(f"missing artifact {', '.join(missing)}\n")
            return 2
        report["artifacts"] = sorted(p.name for p in out.iterdir())

    else:
        sys.stderr.write(f"unknown command {command!r}\n")
        return 2

    report["failures"] = failures
    report["ok"] = not failures
    _merge_report(out / "report.json", command, report)
    if failures:
        sys.stderr.write("\n".join(failures) + "\n")
        return 1
    return 0


def _merge_report(path: Path, command: str, payload: dict) -> None:
    existing = {}
    if path.exists():
        try:
            existing = json.loads(path.read_text())
        except json.JSONDecodeError:
            existing = {}
    existing[command] = payload
    path.write_text(json.dumps(existing, indent=2, sort_keys=True) + "\n")


def main(argv=None) -> int:
    if os.environ.get("FINSLER_HJ_THREADS"):
        # Caps BLAS worker pools; honored by libraries loaded after this point.
        os.environ.setdefault("OMP_NUM_THREADS", os.environ["FINSLER_HJ_THREADS"])
        os.environ.setdefault("OPENBLAS_NUM_THREADS", os.environ["FINSLER_HJ_THREADS"])

    parser = argparse.ArgumentParser(
        prog="finsler-hj",
        description="Finsler p-Laplace ladder solver with transport-duality verification",
    )
    parser.add_argument("command", choices=("solve", "oracle", "report"))
    parser.add_argument("--config", required=True, help="problem JSON file")
    parser.add_argument("--out", default="out", help="artifact directory")
    parser.add_argument("--p-max", dest="p_max", type=int, default=None,
                        help="truncate the exponent ladder")
    parser.add_argument("--grid", type=int, default=None,
                        help="override nx = ny (spacing rescaled to keep the extent)")
    parser.add_argument("--plots", action="store_true", help="emit raster images")
    parser.add_argument("--seed", type=int, default=None, help="seed for sampled checks")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args)
    except (ParseError, ValidationError) as e:
        sys.stderr.write(f"{type(e).__name__}: {e}\n")
        return 2
    return run_pipeline(config)


if __name__ == "__main__":
    sys.exit(main())
