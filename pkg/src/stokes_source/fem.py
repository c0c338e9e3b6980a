"""Mini-element discretization of the penalized unsteady Stokes system.

Velocity is approximated with piecewise linears enriched by cubic element
bubbles, pressure with piecewise linears.  The bubble unknowns never appear
globally: because bubble/linear stiffness couplings vanish and the bubbles
carry no time derivative or load, they can be condensed element by element
into a pressure-pressure stabilization block.  The resulting per-step system

    [ M/dt + nu*K   -B^T ] [u]   [ M/dt u_prev + b ]
    [ B             S+eps*Mp ] [p] = [ 0 ]

is factorized once and reused for every time step; the backward adjoint
march solves the transposed system with the same factorization, which makes
the discrete forward/adjoint pair an exact transpose of each other.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import DofMap
from .quadrature import TRI_POINTS, physical_points


class SolverError(RuntimeError):
    """Linear solve produced no usable solution.

    Attributes
    ----------
    step : int or None
        Time step index at which the failure occurred, None for
        factorization-time failures.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SolverConfig:
    """All scalar parameters of the method.

    nu : viscosity (> 0)
    eps : divergence penalty (> 0)
    dt : requested time step; the march uses T / round(T/dt)
    T : time horizon (>= dt)
    lam : Tikhonov regularization weight (>= 0)
    c : fixed-point tuning constant (> 0)
    tau : relative-change stopping tolerance (> 0, may be inf)
    delta : multiplicative noise level (>= 0)
    seed : noise generator seed
    """

    nu: float = 0.65
    eps: float = 1e-9
    dt: float = 0.07
    T: float = 1.0
    lam: float = 1e-5
    c: float = 0.01
    tau: float = 1e-3
    delta: float = 0.01
    seed: int = 42

    def __post_init__(self):
        if self.nu <= 0 or self.eps <= 0 or self.dt <= 0 or self.T <= 0:
            raise ValueError("nu, eps, dt and T must be positive")
        if self.dt > self.T:
            raise ValueError("dt must not exceed T")
        if self.lam < 0 or self.delta < 0:
            raise ValueError("lam and delta must be nonnegative")
        if self.c <= 0 or self.tau <= 0:
            raise ValueError("c and tau must be positive")

    @property
    def n_steps(self):
        return max(1, round(self.T / self.dt))

    def time_nodes(self):
        """Uniform nodes t_0=0 .. t_M=T actually used by the march."""
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass
class TimeSeries:
    """Velocity (and optionally pressure) snapshots on uniform time nodes."""

    snapshots: np.ndarray  # (M+1, n_velocity_dofs)
    t: np.ndarray  # (M+1,)
    pressures: np.ndarray | None = None  # (M+1, n_pressure_dofs)
    penalty_residual_max: float = 0.0

    @property
    def n_steps(self):
        return self.snapshots.shape[0] - 1

    @property
    def dt(self):
        return self.t[1] - self.t[0]


@dataclass
class AssembledOperators:
    """Global matrices for one (mesh, config) pair.

    mass, stiffness, div and pressure_mass are the full (pre-elimination)
    blocks; `stab` holds the condensed bubble contribution to the pressure
    equation.  mass_omega / mass_obs are the velocity mass matrices assembled
    over the tagged source-support elements and over their complement.  The
    instance is immutable after assembly apart from the cached factorization
    and may be shared across threads for independent solves.
    """

    mesh: object
    dofs: DofMap
    config: SolverConfig
    mass: sp.csr_matrix  # velocity mass, 2n x 2n
    stiffness: sp.csr_matrix  # nu-scaled velocity Laplacian, 2n x 2n
    div: sp.csr_matrix  # pressure row  ∫ q div(v),  n x 2n
    pressure_mass: sp.csr_matrix  # n x n
    stab: sp.csr_matrix  # condensed bubble block, n x n
    mass_omega: sp.csr_matrix  # velocity mass over tagged elements
    mass_obs: sp.csr_matrix  # velocity mass over untagged elements
    _interior_blocks: tuple = field(default=None, repr=False)
    _lu_cache: object = field(default=None, repr=False)
    _abs_blocks: tuple = field(default=None, repr=False)
    # running maximum of the penalty-equation backward error over every march
    # performed with this instance; lets callers audit entire campaigns
    penalty_residual_observed: float = 0.0

    def interior_blocks(self):
        """(A, B_int, C) restricted to non-Dirichlet velocity dofs."""
        if self._interior_blocks is None:
            idx = self.dofs.interior
            dt_eff = self.config.T / self.config.n_steps
            a_full = self.mass / dt_eff + self.stiffness
            a = a_full[idx][:, idx].tocsr()
            b = self.div[:, idx].tocsr()
            c = (self.stab + self.config.eps * self.pressure_mass).tocsr()
            self._interior_blocks = (a, b, c)
        return self._interior_blocks

    def step_matrix(self):
        a, b, c = self.interior_blocks()
        return sp.bmat([[a, -b.T], [b, c]], format="csc")

    def penalty_scale_matrices(self):
        """Entrywise absolute values of the penalty-equation blocks.

        Used to normalize the residual of B u + C p = 0 by the magnitude of
        the terms actually summed (a backward-error measure); normalizing by
        |B u| alone is meaningless for nearly divergence-free flows where
        that product cancels to roundoff by itself.
        """
        if self._abs_blocks is None:
            _, b, c = self.interior_blocks()
            self._abs_blocks = (abs(b), abs(c))
        return self._abs_blocks

    def lu(self):
        if self._lu_cache is None:
            mat = self.step_matrix()
            try:
                self._lu_cache = (spla.splu(mat), mat)
            except RuntimeError as exc:
                raise SolverError(f"time-step matrix factorization failed: {exc}") from exc
        return self._lu_cache


def _element_geometry(mesh):
    """Areas and barycentric gradients for all triangles."""
    corners = mesh.vertices[mesh.triangles]
    d1 = corners[:, 1] - corners[:, 0]
    d2 = corners[:, 2] - corners[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0):
        raise ValueError("mesh contains non-CCW or degenerate triangles")
    area = 0.5 * det
    # grad(lambda_i) from the analytic inverse of the affine map
    grads = np.empty((mesh.n_triangles, 3, 2))
    grads[:, 1, 0] = d2[:, 1] / det
    grads[:, 1, 1] = -d2[:, 0] / det
    grads[:, 2, 0] = -d1[:, 1] / det
    grads[:, 2, 1] = d1[:, 0] / det
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return area, grads


def _scatter(tris, local, n, rows_of=None, cols_of=None):
    """Assemble (ne, 3, 3) element matrices into a CSR matrix."""
    rows = np.repeat(tris, 3, axis=1).ravel() if rows_of is None else rows_of
    cols = np.tile(tris, (1, 3)).ravel() if cols_of is None else cols_of
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _p1_scalar_matrices(mesh, element_mask=None):
    """Scalar P1 mass and stiffness, optionally over a subset of elements."""
    area, grads = _element_geometry(mesh)
    tris = mesh.triangles
    if element_mask is not None:
        area, grads, tris = area[element_mask], grads[element_mask], tris[element_mask]
    n = mesh.n_vertices
    mass_local = (np.ones((3, 3)) + np.eye(3))[None, :, :] * (area / 12.0)[:, None, None]
    stiff_local = np.einsum("eid,ejd->eij", grads, grads) * area[:, None, None]
    return _scatter(tris, mass_local, n), _scatter(tris, stiff_local, n)


def _vector_block(mat):
    """Expand a scalar vertex matrix to both velocity components."""
    return sp.block_diag([mat, mat], format="csr")


def assemble(mesh, config):
    """Assemble all operators of the penalized weak form for one mesh.

    Element integrals of P1/bubble products are exact; the bubble dofs are
    eliminated per element, leaving their footprint as the pressure
    stabilization block `stab` with entries
    area * grad(l_i).grad(l_j) / (20 nu sum_k |grad(l_k)|^2).
    """
    if mesh.omega_tags is None:
        raise ValueError("mesh must carry omega tags (pass omega_box to build_rect_mesh)")
    area, grads = _element_geometry(mesh)
    tris = mesh.triangles
    n = mesh.n_vertices

    m1, k1 = _p1_scalar_matrices(mesh)
    m1_omega, _ = _p1_scalar_matrices(mesh, mesh.omega_tags)
    m1_obs, _ = _p1_scalar_matrices(mesh, ~mesh.omega_tags)

    # divergence rows: ∫ lambda_i d_c(lambda_j) = area/3 * d_c(lambda_j)
    div_blocks = []
    for comp in range(2):
        local = np.broadcast_to(
            (grads[:, None, :, comp] * (area / 3.0)[:, None, None]), (len(tris), 3, 3)
        )
        div_blocks.append(_scatter(tris, np.ascontiguousarray(local), n))
    div = sp.hstack(div_blocks, format="csr")

    gg = np.einsum("eid,ejd->eij", grads, grads)
    gsum = np.einsum("eii->e", gg)
    stab_local = gg * (area / (20.0 * config.nu * gsum))[:, None, None]
    stab = _scatter(tris, stab_local, n)

    return AssembledOperators(
        mesh=mesh,
        dofs=DofMap.from_mesh(mesh),
        config=config,
        mass=_vector_block(m1),
        stiffness=config.nu * _vector_block(k1),
        div=div,
        pressure_mass=m1,
        stab=stab,
        mass_omega=_vector_block(m1_omega),
        mass_obs=_vector_block(m1_obs),
    )


def _check_config(ops, config):
    if config is not None and config != ops.config:
        raise ValueError("config differs from the one used at assembly; re-assemble")


def _solve_step(ops, rhs, transpose, step):
    lu, mat = ops.lu()
    trans = "T" if transpose else "N"
    sol = lu.solve(rhs, trans=trans)
    # one unconditional refinement pass: the pressure rows are orders of
    # magnitude smaller than the momentum rows, and the raw backward error of
    # the factorization is not small enough for them
    res = rhs - (mat.T @ sol if transpose else mat @ sol)
    sol = sol + lu.solve(res, trans=trans)
    if not np.isfinite(sol).all():
        raise SolverError(f"non-finite solution at time step {step}", step=step)
    return sol


def _penalty_residual(ops, u_int, p):
    """Backward-error size of the discrete divergence-penalty equation.

    Returns |B u + C p| / | |B||u| + |C||p| | (norms over pressure dofs), the
    residual of the second block row relative to the magnitudes entering it.
    Zero fields give zero.
    """
    _, b_int, c_mat = ops.interior_blocks()
    abs_b, abs_c = ops.penalty_scale_matrices()
    res = np.linalg.norm(b_int @ u_int + c_mat @ p)
    scale = np.linalg.norm(abs_b @ np.abs(u_int) + abs_c @ np.abs(p))
    if scale == 0.0:
        return 0.0
    return res / scale


def march_forward(ops, load_at_node, u0=None, config=None):
    """Backward-Euler march of the penalized system.

    Parameters
    ----------
    ops : AssembledOperators
    load_at_node : callable
        load_at_node(m, t_m) -> full velocity load vector, requested for the
        implicit nodes m = 1..M.
    u0 : full velocity dof vector or None (rest)
    config : SolverConfig, optional cross-check against ops.config

    Returns
    -------
    TimeSeries with velocity and pressure snapshots at t_0=0 .. t_M=T.
    """
    _check_config(ops, config)
    cfg = ops.config
    dofs = ops.dofs
    t = cfg.time_nodes()
    dt_eff = cfg.T / cfg.n_steps
    nv, npress = dofs.n_velocity, dofs.n_pressure

    if u0 is None:
        u0 = np.zeros(nv)
    else:
        u0 = np.asarray(u0, dtype=float)
        if np.any(u0[dofs.dirichlet_mask] != 0.0):
            raise ValueError("u0 must vanish on Dirichlet (boundary) dofs")

    mass_int = ops.mass[dofs.interior][:, dofs.interior].tocsr()
    ni = dofs.interior.size

    snaps = np.zeros((len(t), nv))
    press = np.zeros((len(t), npress))
    snaps[0] = u0
    u_int = u0[dofs.interior].copy()
    worst = 0.0
    for m in range(1, len(t)):
        rhs = np.zeros(ni + npress)
        rhs[:ni] = mass_int @ u_int / dt_eff + load_at_node(m, t[m])[dofs.interior]
        sol = _solve_step(ops, rhs, transpose=False, step=m)
        u_int, p = sol[:ni], sol[ni:]
        worst = max(worst, _penalty_residual(ops, u_int, p))
        snaps[m, dofs.interior] = u_int
        press[m] = p
    ops.penalty_residual_observed = max(ops.penalty_residual_observed, worst)
    return TimeSeries(snapshots=snaps, t=t, pressures=press, penalty_residual_max=worst)


def forward_solve(ops, source, u0=None, config=None):
    """Solve the penalized system driven by a separated source sigma(t) f(x).

    The load vector pairs the nodal source field with the velocity mass
    matrix restricted to the tagged support elements, so the discrete source
    is exactly sigma(t) f_h(x) chi_Omega.
    """
    base = ops.mass_omega @ np.asarray(source.f, dtype=float)
    sigma = source.sigma

    def load(m, tm):
        return sigma(tm) * base

    return march_forward(ops, load, u0=u0, config=config)


def adjoint_solve(ops, residual, config=None):
    """Backward march of the penalized adjoint driven by a velocity residual.

    The residual (forward velocity minus observations, snapshots on all time
    nodes) is restricted to the observation region through the mass matrix of
    the untagged elements.  Marching runs from the terminal condition
    z(T) = 0 down to t = 0; the step from node m+1 to node m is driven by the
    residual at node m+1, which makes the scheme the exact transpose of
    `march_forward` (both reuse one LU factorization, the adjoint in
    transposed mode).  The residual at t=0 is never used.

    Returns a TimeSeries of the adjoint velocity z (pressure snapshots hold
    the adjoint pressure; its terminal entry is zero by convention).
    """
    _check_config(ops, config)
    cfg = ops.config
    dofs = ops.dofs
    t = cfg.time_nodes()
    dt_eff = cfg.T / cfg.n_steps
    nv, npress = dofs.n_velocity, dofs.n_pressure
    r = residual.snapshots if isinstance(residual, TimeSeries) else np.asarray(residual)
    if r.shape != (len(t), nv):
        raise ValueError(f"residual must have shape {(len(t), nv)}, got {r.shape}")

    mass_int = ops.mass[dofs.interior][:, dofs.interior].tocsr()
    ni = dofs.interior.size

    snaps = np.zeros((len(t), nv))
    press = np.zeros((len(t), npress))
    z_int = np.zeros(ni)
    worst = 0.0
    for m in range(len(t) - 2, -1, -1):
        rhs = np.zeros(ni + npress)
        rhs[:ni] = mass_int @ z_int / dt_eff + (ops.mass_obs @ r[m + 1])[dofs.interior]
        sol = _solve_step(ops, rhs, transpose=True, step=m)
        z_int, q = sol[:ni], sol[ni:]
        # transposed second block row: -B z + C q = 0
        worst = max(worst, _penalty_residual(ops, -z_int, q))
        snaps[m, dofs.interior] = z_int
        press[m] = q
    ops.penalty_residual_observed = max(ops.penalty_residual_observed, worst)
    return TimeSeries(snapshots=snaps, t=t, pressures=press, penalty_residual_max=worst)


def adjoint_source_integral(ops, adjoint, sigma):
    """Time quadrature of sigma(t) z(t) paired with the discrete adjoint.

    Sums dt * sigma(t_{m+1}) * z(t_m) over the M time intervals: the adjoint
    snapshot at the left node of each interval carries the multiplier of the
    forward step loaded at the right node, so this rule (and no other) turns
    the forward/adjoint pair into an exact matrix transpose.
    """
    t = adjoint.t
    dt_eff = adjoint.dt
    weights = sigma(t[1:]) * dt_eff
    return np.asarray(weights) @ adjoint.snapshots[:-1]


def assemble_load(mesh, field_fn):
    """Load vector ∫ F . phi_i for a smooth vector field F given analytically.

    Uses the degree-5 triangle rule; `field_fn` receives an (k, 2) array of
    points and must return (k, 2) values.
    """
    pts, w = physical_points(mesh)
    ne, nq = w.shape
    vals = np.asarray(field_fn(pts.reshape(-1, 2))).reshape(ne, nq, 2)
    # basis values at quadrature points are the barycentric coordinates
    contrib = np.einsum("eq,qi,eqc->eic", w, TRI_POINTS, vals)
    n = mesh.n_vertices
    load = np.zeros(2 * n)
    np.add.at(load, mesh.triangles.ravel(), contrib[:, :, 0].ravel())
    np.add.at(load[n:], mesh.triangles.ravel(), contrib[:, :, 1].ravel())
    return load


def norm_velocity(ops, u):
    """Discrete L2 norm of a velocity dof vector."""
    return float(np.sqrt(max(0.0, u @ (ops.mass @ u))))


def norm_pressure(ops, p):
    return float(np.sqrt(max(0.0, p @ (ops.pressure_mass @ p))))


def norm_omega(ops, f):
    """L2 norm over the tagged source-support region."""
    return float(np.sqrt(max(0.0, f @ (ops.mass_omega @ f))))


def inner_omega(ops, f, g):
    return float(f @ (ops.mass_omega @ g))


def spacetime_inner_obs(ops, series_a, series_b):
    """Space-time inner product over the observation region.

    Right-endpoint rule in time: sum of dt <a_m, b_m> for m = 1..M, the
    quadrature the misfit functional and the adjoint derivation share.
    """
    a, b = series_a.snapshots, series_b.snapshots
    dt_eff = series_a.dt
    total = 0.0
    for m in range(1, a.shape[0]):
        total += dt_eff * float(a[m] @ (ops.mass_obs @ b[m]))
    return total


def spacetime_norm_obs(ops, series):
    return float(np.sqrt(max(0.0, spacetime_inner_obs(ops, series, series))))


def spacetime_inner_omega(ops, series_a, series_b):
    """Space-time inner product over the tagged interior region."""
    a, b = series_a.snapshots, series_b.snapshots
    dt_eff = series_a.dt
    total = 0.0
    for m in range(1, a.shape[0]):
        total += dt_eff * float(a[m] @ (ops.mass_omega @ b[m]))
    return total


def spacetime_norm_omega(ops, series):
    return float(np.sqrt(max(0.0, spacetime_inner_omega(ops, series, series))))
