"""Self-validation suite: every independent oracle behind one pass/fail table.

Each check records the measured value, its budget, and the comparison
direction.  The gradient check accepts a deliberate sign-corruption switch as
a negative control: with it the suite must report a failure.
"""

import time

import numpy as np

from .data import NoiseModel, PortableUniform, SourceSpec, make_observations, true_source
from .fem import (
    SolverConfig,
    TimeSeries,
    adjoint_solve,
    adjoint_source_integral,
    assemble,
    forward_solve,
    inner_omega,
    norm_omega,
    spacetime_inner_obs,
)
from .inverse import cost, reconstruct, support_dofs
from .mesh import DEFAULT_DOMAIN, DEFAULT_OMEGA, build_rect_mesh
from .oracles import convergence_study, counterexample_report, heat_kernel_fem_check


def _check(name, value, limit, kind="<="):
    ok = value <= limit if kind == "<=" else value >= limit
    return {"name": name, "value": float(value), "limit": float(limit), "kind": kind, "ok": bool(ok)}


def run_validation_suite(corrupt_gradient=False, seed=12345):
    """Run all oracle checks; returns (records, all_ok)."""
    records = []
    t_start = time.time()

    # mesh tiling
    worst = 0.0
    for h in (0.3, 0.1, 0.05):
        m = build_rect_mesh(DEFAULT_DOMAIN, h)
        worst = max(worst, abs(m.triangle_areas().sum() - 9.0) / 9.0)
    records.append(_check("mesh_area_partition", worst, 1e-12))

    # shared benchmark setup
    mesh = build_rect_mesh(DEFAULT_DOMAIN, 0.1, omega_box=DEFAULT_OMEGA)
    config = SolverConfig()
    ops = assemble(mesh, config)
    support = support_dofs(mesh)
    rng = np.random.default_rng(seed)
    penalty_worst = 0.0

    # forward/adjoint transpose identity on random data
    h_dir = np.zeros(ops.dofs.n_velocity)
    h_dir[support] = rng.standard_normal(int(support.sum()))
    r = rng.standard_normal((config.n_steps + 1, ops.dofs.n_velocity))
    sens = forward_solve(ops, SourceSpec(np.exp, h_dir))
    adj = adjoint_solve(ops, r)
    lhs = spacetime_inner_obs(ops, TimeSeries(snapshots=r, t=sens.t), sens)
    rhs = inner_omega(ops, h_dir, adjoint_source_integral(ops, adj, np.exp))
    records.append(_check("duality_identity_rel", abs(lhs - rhs) / abs(lhs), 1e-8))
    penalty_worst = max(penalty_worst, sens.penalty_residual_max, adj.penalty_residual_max)

    # adjoint gradient against central differences
    src = true_source(1, mesh)
    obs = make_observations(src, NoiseModel(config.delta, config.seed), config, mesh, ops=ops)
    f_point = np.zeros_like(h_dir)
    f_point[support] = rng.standard_normal(int(support.sum()))
    sol = forward_solve(ops, SourceSpec(np.exp, f_point))
    penalty_worst = max(penalty_worst, sol.penalty_residual_max)
    residual = TimeSeries(snapshots=sol.snapshots - obs.snapshots, t=sol.t)
    z = adjoint_solve(ops, residual)
    g = 2.0 * (adjoint_source_integral(ops, z, np.exp) + config.lam * f_point)
    if corrupt_gradient:
        g = -g
    step = 1e-3
    jp = cost(ops, f_point + step * h_dir, obs)
    jm = cost(ops, f_point - step * h_dir, obs)
    fd = (jp - jm) / (2.0 * step)
    adj_dir = float(inner_omega(ops, g, h_dir))
    records.append(_check("gradient_vs_fd_rel", abs(fd - adj_dir) / abs(fd), 1e-4))

    # one-step contraction with self-consistent data
    obs0 = make_observations(src, NoiseModel(0.0, config.seed), config, mesh, ops=ops)
    st = reconstruct(ops, src.f.copy(), obs0, k_max=1, final_cost=False)
    factor = config.c / (config.c + config.lam)
    dev = norm_omega(ops, st.f - factor * src.f) / norm_omega(ops, src.f)
    records.append(_check("exact_data_contraction", dev, 1e-12))

    records.append(_check("penalty_residual_max", penalty_worst, 1e-12))

    # noise generator determinism
    a = PortableUniform(config.seed).uniform_pm1(512)
    b = PortableUniform(config.seed).uniform_pm1(512)
    records.append(_check("noise_determinism", float(np.max(np.abs(a - b))), 0.0))

    # free-space kernel oracle: velocity at nu=1, pressure premise at nu=0.2
    rep = heat_kernel_fem_check(h=0.1, dt=0.0125, nu=1.0)
    records.append(_check("heat_kernel_velocity_rel", rep["rel_l2_central"], 0.05))
    rep_p = heat_kernel_fem_check(h=0.15, dt=0.0125, nu=0.2)
    records.append(_check("free_space_pressure_ratio", rep_p["pressure_velocity_ratio"], 1e-3))
    penalty_worst = max(
        penalty_worst, rep["penalty_residual_max"], rep_p["penalty_residual_max"]
    )

    # manufactured convergence
    conv = convergence_study()
    records.append(_check("manufactured_rate", conv["rate"], 1.8, kind=">="))

    # counterexample certificates; dt fine enough that the spatial leak
    # dominates the exterior trace and the refinement halving is clean
    coarse, _ = counterexample_report("separated", h=0.1, dt=0.005)
    fine, _ = counterexample_report("separated", h=0.05, dt=0.005)
    records.append(_check("counterexample_ratio_h005", fine["boundary_interior_ratio"], 0.05))
    records.append(
        _check(
            "counterexample_ratio_halving",
            fine["boundary_interior_ratio"] / coarse["boundary_interior_ratio"],
            0.5,
        )
    )
    records.append(
        _check(
            "counterexample_interior_strength",
            fine["interior_norm"] / fine["expected_interior_norm"],
            0.5,
            kind=">=",
        )
    )

    all_ok = all(rec["ok"] for rec in records)
    return records, all_ok, time.time() - t_start


def format_table(records):
    width = max(len(r["name"]) for r in records)
    lines = []
    for r in records:
        status = "PASS" if r["ok"] else "FAIL"
        lines.append(
            f"{status}  {r['name']:<{width}}  value={r['value']:.6e}  {r['kind']} {r['limit']:.3e}"
        )
    return "\n".join(lines)
