"""Structured triangulations of a rectangle with a tagged interior subregion.

The computational domain is an axis-aligned rectangle covered by a uniform
grid of squares, each split into two triangles along the lower-left to
upper-right diagonal.  A smaller axis-aligned box strictly inside the domain
marks the support region of the unknown source; triangles are tagged as
belonging to that region only when all three vertices lie in the closed box,
so integrals against its indicator function are exact element sums.
"""

from dataclasses import dataclass, replace

import numpy as np

# Default geometry used by the benchmark experiments: domain ]0,3[^2 with
# source support box [3/4, 9/4]^2.
DEFAULT_DOMAIN = ((0.0, 0.0), (3.0, 3.0))
DEFAULT_OMEGA = ((0.75, 0.75), (2.25, 2.25))


@dataclass(frozen=True)
class Mesh:
    """Immutable triangulation of a rectangle.

    Attributes
    ----------
    vertices : (n_vertices, 2) float array
        Vertex coordinates.
    triangles : (n_triangles, 3) int array
        Vertex indices per triangle, counterclockwise.
    boundary_vertex_flags : (n_vertices,) bool array
        True for vertices on the rectangle perimeter.
    h : float
        Requested target edge length.
    domain_box : ((x0, y0), (x1, y1))
        Corners of the meshed rectangle.
    omega_box : ((x0, y0), (x1, y1)) or None
        Corners of the tagged source-support box, when tagged.
    omega_tags : (n_triangles,) bool array or None
        True for triangles whose three vertices lie in the closed omega box.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex_flags: np.ndarray
    h: float
    domain_box: tuple
    omega_box: tuple | None = None
    omega_tags: np.ndarray | None = None

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def triangle_areas(self):
        """Signed areas of all triangles (positive for CCW orientation)."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def omega_vertex_mask(self):
        """Vertices carrying source degrees of freedom.

        A vertex supports the source iff it belongs to at least one
        omega-tagged triangle; nodal values elsewhere never enter the
        restricted mass matrix and are kept identically zero.
        """
        if self.omega_tags is None:
            raise ValueError("mesh has no omega tags; call tag_omega first")
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[np.unique(self.triangles[self.omega_tags])] = True
        return mask


def build_rect_mesh(box, h, omega_box=None):
    """Triangulate an axis-aligned rectangle with a uniform criss-cross grid.

    Parameters
    ----------
    box : ((x0, y0), (x1, y1))
        Rectangle corners, x0 < x1 and y0 < y1.
    h : float
        Target edge length; the grid uses round(L/h) cells per side.
    omega_box : corner pair, optional
        When given, the mesh is returned with omega tags (see `tag_omega`).

    Returns
    -------
    Mesh
    """
    (x0, y0), (x1, y1) = box
    lx, ly = x1 - x0, y1 - y0
    if lx <= 0 or ly <= 0:
        raise ValueError("box must have positive side lengths")
    if h <= 0:
        raise ValueError("h must be positive")
    if h >= min(lx, ly):
        raise ValueError(f"h={h} must be smaller than the shortest side {min(lx, ly)}")

    nx = max(1, round(lx / h))
    ny = max(1, round(ly / h))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys)  # row-major: vertex id = j*(nx+1) + i
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    # Split every cell along the lower-left to upper-right diagonal; a fixed
    # pattern keeps connectivity bit-identical across builds.
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii, jj = ii.ravel(), jj.ravel()
    a = jj * (nx + 1) + ii
    b = a + 1
    c = b + (nx + 1)
    d = a + (nx + 1)
    lower = np.column_stack([a, b, c])
    upper = np.column_stack([a, c, d])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    on_boundary = (
        np.isclose(vertices[:, 0], x0)
        | np.isclose(vertices[:, 0], x1)
        | np.isclose(vertices[:, 1], y0)
        | np.isclose(vertices[:, 1], y1)
    )

    vertices.setflags(write=False)
    triangles.setflags(write=False)
    on_boundary.setflags(write=False)
    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_vertex_flags=on_boundary,
        h=float(h),
        domain_box=(tuple(map(float, box[0])), tuple(map(float, box[1]))),
    )
    if omega_box is not None:
        tags = tag_omega(mesh, omega_box)
        mesh = replace(
            mesh,
            omega_box=(tuple(map(float, omega_box[0])), tuple(map(float, omega_box[1]))),
            omega_tags=tags,
        )
    return mesh


def tag_omega(mesh, omega_box):
    """Tag triangles contained in the closed box `omega_box`.

    A triangle is tagged iff all three vertices lie in the closed box, so the
    tagged region is a conservative polygonal approximation of the box from
    the inside.  The box must be strictly inside the meshed domain; the
    untagged complement is the observation region.

    Returns the per-triangle boolean tag array.
    """
    (ox0, oy0), (ox1, oy1) = omega_box
    (x0, y0), (x1, y1) = mesh.domain_box
    if not (x0 < ox0 < ox1 < x1 and y0 < oy0 < oy1 < y1):
        raise ValueError("omega_box must lie strictly inside the domain box")

    tol = 1e-12 * max(x1 - x0, y1 - y0)
    v = mesh.vertices
    inside = (
        (v[:, 0] >= ox0 - tol)
        & (v[:, 0] <= ox1 + tol)
        & (v[:, 1] >= oy0 - tol)
        & (v[:, 1] <= oy1 + tol)
    )
    tags = inside[mesh.triangles].all(axis=1)
    tags.setflags(write=False)
    return tags


@dataclass(frozen=True)
class DofMap:
    """Velocity/pressure degree-of-freedom bookkeeping for one mesh.

    Velocity carries two scalar unknowns per vertex after the element bubbles
    are condensed out; the x-components occupy dofs [0, n) and the
    y-components dofs [n, 2n).  Pressure has one unknown per vertex.
    """

    n_velocity: int
    n_pressure: int
    dirichlet_mask: np.ndarray  # bool per velocity dof
    interior: np.ndarray  # indices of non-Dirichlet velocity dofs

    @classmethod
    def from_mesh(cls, mesh):
        n = mesh.n_vertices
        mask = np.concatenate([mesh.boundary_vertex_flags, mesh.boundary_vertex_flags])
        mask.setflags(write=False)
        interior = np.flatnonzero(~mask)
        interior.setflags(write=False)
        return cls(n_velocity=2 * n, n_pressure=n, dirichlet_mask=mask, interior=interior)
