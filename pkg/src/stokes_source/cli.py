"""Batch command-line front end.

Commands: forward | reconstruct | counterexample | validate | sweep.
Configuration precedence: built-in defaults, then the --config file (flat
``key = value`` lines), then explicit command-line flags.  Exit codes:
0 success, 2 configuration error, 3 solver failure, 4 validation failure.
"""

import argparse
import csv
import sys
from dataclasses import fields as dataclass_fields, replace
from pathlib import Path

from .data import (
    NoiseModel,
    initial_guess,
    load_observations,
    make_observations,
    save_observations,
    true_source,
)
from .fem import SolverConfig, SolverError, assemble, forward_solve, norm_omega
from .inverse import ReconstructionDiverged, reconstruct
from .mesh import DEFAULT_DOMAIN, DEFAULT_OMEGA, build_rect_mesh
from .oracles import counterexample_report
from .validate import format_table, run_validation_suite
from . import report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VALIDATION = 4

_SOLVER_KEYS = {f.name for f in dataclass_fields(SolverConfig)}
_FILE_KEYS = _SOLVER_KEYS | {"lambda", "h", "example", "k_max", "out"}
_INT_KEYS = {"seed", "example", "k_max"}


class ConfigError(ValueError):
    pass


def parse_config_file(path):
    """Flat key = value file; '#' starts a comment; keys mirror SolverConfig."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FILE_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key == "out":
            values[key] = val
        elif key in _INT_KEYS:
            try:
                values[key] = int(val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {key} must be an integer") from exc
        else:
            try:
                values[key] = float(val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {key} must be a number") from exc
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    return values


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stokes-source",
        description="Forward solves and source reconstruction for penalized unsteady Stokes flow.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", metavar="PATH", help="flat key=value configuration file")
        p.add_argument("--example", type=int, choices=(1, 2, 3), help="benchmark case")
        p.add_argument("--h", type=float, help="mesh size")
        p.add_argument("--dt", type=float, help="time step")
        p.add_argument("--delta", type=float, help="noise level")
        p.add_argument("--seed", type=int, help="noise seed")
        p.add_argument("--c", type=float, help="fixed-point tuning constant")
        p.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
        p.add_argument("--tau", type=float, help="stopping tolerance (inf allowed)")
        p.add_argument("--k-max", type=int, help="iteration cap")
        p.add_argument("--nu", type=float, help="viscosity")
        p.add_argument("--eps", type=float, help="divergence penalty")
        p.add_argument("--T", type=float, help="time horizon")
        p.add_argument("--out", metavar="DIR", help="artifact directory (default ./out)")

    add_common(sub.add_parser("forward", help="run the forward model and export snapshots"))

    p_rec = sub.add_parser("reconstruct", help="reconstruct the source from observations")
    add_common(p_rec)
    p_rec.add_argument("--force-k", type=int, help="run exactly this many updates, ignore tau")
    p_rec.add_argument("--observations", metavar="PATH", help="load observations instead of generating")
    p_rec.add_argument(
        "--f0-true", action="store_true", help="start from the true source (diagnostic runs)"
    )

    p_ce = sub.add_parser("counterexample", help="non-uniqueness certificates")
    add_common(p_ce)
    p_ce.add_argument("--which", choices=("general", "separated", "both"), default="both")

    p_val = sub.add_parser("validate", help="run the oracle suite")
    add_common(p_val)
    p_val.add_argument(
        "--corrupt-gradient",
        action="store_true",
        help="negative control: flip the adjoint gradient sign; the suite must fail",
    )

    p_sw = sub.add_parser("sweep", help="reconstruction sweep over tuning constants")
    add_common(p_sw)
    p_sw.add_argument("--c-values", metavar="LIST", help="comma-separated c values")

    return parser


def resolve_settings(args):
    """Merge defaults, config file, and flags into (SolverConfig, extras)."""
    merged = {"h": 0.1, "example": 1, "k_max": 30, "out": "out"}
    explicit = set()
    if args.config:
        file_values = parse_config_file(args.config)
        merged.update(file_values)
        explicit.update(file_values)
    for key in _SOLVER_KEYS | {"h", "example", "k_max", "out"}:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
            explicit.add(key)

    solver_kwargs = {k: merged[k] for k in _SOLVER_KEYS if k in merged}
    try:
        solver = SolverConfig(**solver_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if merged["example"] not in (1, 2, 3):
        raise ConfigError(f"example must be 1, 2 or 3, got {merged['example']}")
    if merged["h"] <= 0:
        raise ConfigError("h must be positive")
    extras = {
        "h": float(merged["h"]),
        "example": int(merged["example"]),
        "k_max": int(merged["k_max"]),
        "out": str(merged["out"]),
        "explicit_keys": explicit,
    }
    return solver, extras


def _flat_config(solver, extras, command):
    flat = {
        "command": command,
        "nu": solver.nu,
        "eps": solver.eps,
        "dt": solver.dt,
        "T": solver.T,
        "lambda": solver.lam,
        "c": solver.c,
        "tau": solver.tau,
        "delta": solver.delta,
        "seed": solver.seed,
        "h": extras["h"],
        "example": extras["example"],
        "k_max": extras["k_max"],
        "out": extras["out"],
    }
    return flat


def _prepare_out(extras):
    out = Path(extras["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_problem(solver, extras):
    mesh = build_rect_mesh(DEFAULT_DOMAIN, extras["h"], omega_box=DEFAULT_OMEGA)
    ops = assemble(mesh, solver)
    return mesh, ops


def cmd_forward(args, solver, extras):
    out = _prepare_out(extras)
    mesh, ops = _build_problem(solver, extras)
    source = true_source(extras["example"], mesh)
    series = forward_solve(ops, source)
    report.echo_config(out / "resolved_config.txt", _flat_config(solver, extras, "forward"))
    paths = report.write_snapshot_series(out, mesh, series)
    report.write_norm_trace(out / "norm_trace.csv", ops, series)
    report.fig_nodal_field(
        out / "final_speed.png", mesh, series.snapshots[-1], f"|u| at t = {series.t[-1]:.3g}"
    )
    report.fig_norm_trace(out / "norm_trace.png", ops, series)
    print(f"forward: example {extras['example']}, {len(paths)} snapshots -> {out}")
    print(f"penalty residual max: {series.penalty_residual_max:.3e}")
    return EXIT_OK


def cmd_reconstruct(args, solver, extras):
    out = _prepare_out(extras)
    mesh, ops = _build_problem(solver, extras)
    source = true_source(extras["example"], mesh)

    if getattr(args, "observations", None):
        obs, meta = load_observations(args.observations)
        if obs.snapshots.shape != (solver.n_steps + 1, ops.dofs.n_velocity):
            raise ConfigError(
                f"observations {args.observations} have shape {obs.snapshots.shape}, "
                f"expected {(solver.n_steps + 1, ops.dofs.n_velocity)}"
            )
    else:
        obs = make_observations(
            source, NoiseModel(solver.delta, solver.seed), solver, mesh, ops=ops
        )
        save_observations(
            out / "observations.bin",
            obs,
            extras["h"],
            meta={"example_id": extras["example"], "delta": solver.delta, "seed": solver.seed},
        )

    f0 = source.f.copy() if getattr(args, "f0_true", False) else initial_guess(extras["example"], mesh)
    state = reconstruct(
        ops,
        f0,
        obs,
        k_max=extras["k_max"],
        f_true=source.f,
        force_k=getattr(args, "force_k", None),
    )

    report.echo_config(out / "resolved_config.txt", _flat_config(solver, extras, "reconstruct"))
    report.write_history(out / "err_history.csv", state)
    report.write_vtk(out / "final_f.vtk", mesh, state.f, name="source", title="reconstructed source")
    summary = {
        "example": extras["example"],
        "k": state.k,
        "stopped_by": state.stopped_by,
        "final_err": state.final_error,
        "final_rel_change": float(state.rel_change[-1]) if state.k else None,
        "J_lambda": float(state.cost_history[-1]),
        "forward_solves": state.forward_solves,
        "adjoint_solves": state.adjoint_solves,
    }
    report.write_json(out / "summary.json", summary)
    report.fig_reconstruction(out / "reconstruction.png", mesh, state.f, source.f)
    report.fig_history(out / "history.png", state)
    print(
        f"reconstruct: example {extras['example']}, k={state.k} ({state.stopped_by}), "
        f"err={state.final_error:.4f}, J={summary['J_lambda']:.4e} -> {out}"
    )
    return EXIT_OK


def cmd_counterexample(args, solver, extras):
    out = _prepare_out(extras)
    # default to a finer march than the benchmark dt unless the user set one
    dt = solver.dt if "dt" in extras["explicit_keys"] else 0.01
    solver = replace(solver, dt=dt)
    which_list = ("general", "separated") if args.which == "both" else (args.which,)
    report.echo_config(out / "resolved_config.txt", _flat_config(solver, extras, "counterexample"))
    for which in which_list:
        rep, mesh = counterexample_report(
            which, h=extras["h"], dt=dt, horizon=solver.T, nu=solver.nu
        )
        report.write_json(out / f"counterexample_{which}.json", rep)
        text = [
            f"counterexample: {which}",
            f"mesh size h = {rep['h']}, dt = {rep['dt']}",
            f"interior difference norm      : {rep['interior_norm']:.6e}",
            f"exterior (observation) norm   : {rep['exterior_norm']:.6e}",
            f"boundary/interior ratio       : {rep['boundary_interior_ratio']:.6e}",
            f"match to expected curl field  : {rep['interior_rel_err']:.6e} relative",
            "two distinct sources, boundary-region data agree to the ratio above",
        ]
        (out / f"counterexample_{which}.txt").write_text("\n".join(text) + "\n")
        report.fig_counterexample(
            out / f"counterexample_{which}.png",
            mesh,
            rep["_diff_mid"],
            rep["_expected_mid"],
            f"{which} source pair, mid-horizon fields",
        )
        print(
            f"counterexample {which}: ratio={rep['boundary_interior_ratio']:.3e}, "
            f"interior match {100 * (1 - rep['interior_rel_err']):.1f}% -> {out}"
        )
    return EXIT_OK


def cmd_validate(args, solver, extras):
    records, all_ok, elapsed = run_validation_suite(
        corrupt_gradient=getattr(args, "corrupt_gradient", False)
    )
    print(format_table(records))
    print(f"{'all checks passed' if all_ok else 'VALIDATION FAILED'} ({elapsed:.1f}s)")
    out = _prepare_out(extras)
    report.echo_config(out / "resolved_config.txt", _flat_config(solver, extras, "validate"))
    report.write_json(out / "validation.json", {"checks": records, "all_ok": all_ok})
    return EXIT_OK if all_ok else EXIT_VALIDATION


def cmd_sweep(args, solver, extras):
    if not getattr(args, "c_values", None):
        raise ConfigError("sweep requires --c-values, e.g. --c-values 0.001,0.01,0.1")
    try:
        c_values = [float(tok) for tok in args.c_values.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --c-values: {exc}") from exc
    if not c_values:
        raise ConfigError("--c-values produced an empty list")

    out = _prepare_out(extras)
    mesh, ops = _build_problem(solver, extras)
    source = true_source(extras["example"], mesh)
    obs = make_observations(source, NoiseModel(solver.delta, solver.seed), solver, mesh, ops=ops)
    f0 = initial_guess(extras["example"], mesh)
    f0_norm = norm_omega(ops, f0)

    rows = []
    for c in c_values:
        cfg_c = replace(solver, c=c)
        ops_c = assemble(mesh, cfg_c)
        try:
            state = reconstruct(ops_c, f0, obs, k_max=extras["k_max"], f_true=source.f)
            rows.append(
                {
                    "c": c,
                    "status": "ok",
                    "k": state.k,
                    "final_err": state.final_error,
                    "first_update_norm": float(state.rel_change[0] * f0_norm),
                    "stopped_by": state.stopped_by,
                }
            )
        except ReconstructionDiverged as exc:
            rows.append(
                {
                    "c": c,
                    "status": f"diverged at iteration {exc.iteration}",
                    "k": exc.iteration,
                    "final_err": None,
                    "first_update_norm": float("nan"),
                    "stopped_by": "divergence",
                }
            )

    report.echo_config(out / "resolved_config.txt", _flat_config(solver, extras, "sweep"))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(
            fh, fieldnames=["c", "status", "k", "final_err", "first_update_norm", "stopped_by"]
        )
        w.writeheader()
        w.writerows(rows)
    report.write_json(out / "sweep.json", {"rows": rows})
    report.fig_sweep(out / "sweep.png", rows)
    for row in rows:
        err = "-" if row["final_err"] is None else f"{row['final_err']:.4f}"
        print(f"c={row['c']:<10g} k={row['k']:<4} err={err:<8} {row['status']}")
    return EXIT_OK


COMMANDS = {
    "forward": cmd_forward,
    "reconstruct": cmd_reconstruct,
    "counterexample": cmd_counterexample,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        solver, extras = resolve_settings(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, solver, extras)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ReconstructionDiverged) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
