"""Artifact writers: legacy VTK, delimited traces, JSON summaries, figures."""

import csv
import json
from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import matplotlib.tri as mtri

from .fem import norm_pressure, norm_velocity


def write_vtk(path, mesh, point_vectors=None, name="velocity", title="stokes-source export"):
    """Legacy ASCII unstructured-grid file, optionally with one vector field.

    Vectors are padded with a zero third component; cells are written with
    VTK type 5 (triangle).
    """
    n = mesh.n_vertices
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g} 0")
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    if point_vectors is not None:
        vx, vy = point_vectors[:n], point_vectors[n:]
        lines.append(f"POINT_DATA {n}")
        lines.append(f"VECTORS {name} double")
        for a, b in zip(vx, vy):
            lines.append(f"{a:.17g} {b:.17g} 0")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def write_snapshot_series(outdir, mesh, series, basename="snapshot"):
    """One VTK file per time node; returns the written paths."""
    outdir = Path(outdir)
    paths = []
    for m, snap in enumerate(series.snapshots):
        p = outdir / f"{basename}_{m:04d}.vtk"
        write_vtk(p, mesh, snap, title=f"t = {series.t[m]:.6g}")
        paths.append(p)
    return paths


def write_norm_trace(path, ops, series):
    """CSV trace of the discrete L2 norms: columns t, l2_u, l2_p."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "l2_u", "l2_p"])
        for m in range(series.snapshots.shape[0]):
            l2u = norm_velocity(ops, series.snapshots[m])
            l2p = norm_pressure(ops, series.pressures[m]) if series.pressures is not None else 0.0
            w.writerow([f"{series.t[m]:.10g}", f"{l2u:.16e}", f"{l2p:.16e}"])
    return Path(path)


def write_history(path, state):
    """CSV of the reconstruction history: k, rel_change, err_vs_true, J_lambda.

    Row k reports the iterate after update k; J_lambda for the last row is
    present only when the closing cost evaluation ran.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "rel_change", "err_vs_true", "J_lambda"])
        for i in range(state.k):
            err = "" if state.err_vs_true is None else f"{state.err_vs_true[i]:.16e}"
            cost = (
                f"{state.cost_history[i + 1]:.16e}" if i + 1 < len(state.cost_history) else ""
            )
            w.writerow([i + 1, f"{state.rel_change[i]:.16e}", err, cost])
    return Path(path)


def write_json(path, obj):
    def scrub(val):
        if isinstance(val, dict):
            return {k: scrub(v) for k, v in val.items() if not k.startswith("_")}
        if isinstance(val, (list, tuple)):
            return [scrub(v) for v in val]
        if isinstance(val, (np.floating, np.integer)):
            return val.item()
        if isinstance(val, np.ndarray):
            return val.tolist()
        return val

    with open(path, "w") as fh:
        json.dump(scrub(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Path(path)


def echo_config(path, mapping):
    """Flat key = value dump of the resolved run configuration."""
    lines = [f"{k} = {mapping[k]}" for k in sorted(mapping)]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def _triangulation(mesh):
    return mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)


def _component(values, n, which):
    if which == "x":
        return values[:n]
    if which == "y":
        return values[n:]
    return np.hypot(values[:n], values[n:])


def fig_nodal_field(path, mesh, values, title, component="magnitude"):
    tri = _triangulation(mesh)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.tripcolor(tri, _component(values, mesh.n_vertices, component), shading="gouraud")
    fig.colorbar(im, ax=ax)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_reconstruction(path, mesh, f_rec, f_true=None):
    """Side-by-side x-component panels: reconstruction, truth, |difference|."""
    tri = _triangulation(mesh)
    n = mesh.n_vertices
    panels = [(f_rec[:n], "reconstructed $f_1$")]
    if f_true is not None:
        panels.append((f_true[:n], "true $f_1$"))
        panels.append((np.abs(f_rec[:n] - f_true[:n]), "|difference|"))
    fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.8))
    axes = np.atleast_1d(axes)
    for ax, (vals, title) in zip(axes, panels):
        im = ax.tripcolor(tri, vals, shading="gouraud")
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_aspect("equal")
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_history(path, state):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ks = np.arange(1, state.k + 1)
    ax1.semilogy(ks, state.rel_change, "o-", label="relative change")
    if state.err_vs_true is not None and len(state.err_vs_true):
        ax1.semilogy(ks, state.err_vs_true, "s-", label="error vs truth")
    ax1.set_xlabel("iteration")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.semilogy(np.arange(len(state.cost_history)), state.cost_history, "o-")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel(r"$J_\lambda$")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_norm_trace(path, ops, series):
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    l2u = [norm_velocity(ops, s) for s in series.snapshots]
    ax.plot(series.t, l2u, "o-", label=r"$\|u\|_{L^2}$")
    if series.pressures is not None:
        l2p = [norm_pressure(ops, p) for p in series.pressures]
        ax.plot(series.t, l2p, "s-", label=r"$\|p\|_{L^2}$")
    ax.set_xlabel("t")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_sweep(path, rows):
    """rows: list of dicts with c, final_err, first_update_norm, status."""
    ok = [r for r in rows if r["status"] == "ok"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    if ok:
        ax1.loglog([r["c"] for r in ok], [r["final_err"] for r in ok], "o-")
    ax1.set_xlabel("c")
    ax1.set_ylabel("final relative error")
    ax1.grid(alpha=0.3, which="both")
    ax2.loglog([r["c"] for r in rows], [r["first_update_norm"] for r in rows], "o-")
    ax2.set_xlabel("c")
    ax2.set_ylabel("first update norm")
    ax2.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_counterexample(path, mesh, diff_mid, expected_mid, title):
    tri = _triangulation(mesh)
    n = mesh.n_vertices
    fields = [
        (np.hypot(diff_mid[:n], diff_mid[n:]), "|u1 - u2|"),
        (np.hypot(expected_mid[:n], expected_mid[n:]), "expected |curl potential|"),
        (
            np.hypot(diff_mid[:n] - expected_mid[:n], diff_mid[n:] - expected_mid[n:]),
            "|mismatch|",
        ),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(12.5, 3.8))
    for ax, (vals, sub) in zip(axes, fields):
        im = ax.tripcolor(tri, vals, shading="gouraud")
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_aspect("equal")
        ax.set_title(sub)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)
