import numpy as np
import pytest

from stokes_source.mesh import (
    DEFAULT_DOMAIN,
    DEFAULT_OMEGA,
    DofMap,
    Mesh,
    build_rect_mesh,
    tag_omega,
)


def test_coarse_grid_counts():
    mesh = build_rect_mesh(DEFAULT_DOMAIN, 1.5)
    assert mesh.n_vertices == 9
    assert mesh.n_triangles == 8
    assert mesh.boundary_vertex_flags.sum() == 8


def test_benchmark_grid_counts():
    mesh = build_rect_mesh(DEFAULT_DOMAIN, 0.1)
    assert mesh.n_vertices == 961
    assert mesh.n_triangles == 1800


@pytest.mark.parametrize("h", [0.3, 0.1, 0.05])
def test_area_partition(h):
    mesh = build_rect_mesh(DEFAULT_DOMAIN, h)
    areas = mesh.triangle_areas()
    assert np.all(areas > 0)
    assert abs(areas.sum() - 9.0) <= 1e-12 * 9.0


def test_non_square_box():
    mesh = build_rect_mesh(((0.0, 0.0), (2.0, 1.0)), 0.5)
    assert mesh.n_vertices == 15  # 5 x 3 grid
    assert mesh.n_triangles == 16
    assert abs(mesh.triangle_areas().sum() - 2.0) <= 1e-12


def test_rejects_h_not_smaller_than_side():
    with pytest.raises(ValueError):
        build_rect_mesh(((0.0, 0.0), (3.0, 3.0)), 3.0)
    with pytest.raises(ValueError):
        build_rect_mesh(((0.0, 0.0), (3.0, 3.0)), -0.1)


def test_tagged_area_matches_enumeration():
    """Oracle: re-derive the tag set by a direct per-triangle loop."""
    mesh = build_rect_mesh(DEFAULT_DOMAIN, 0.1, omega_box=DEFAULT_OMEGA)
    (ox0, oy0), (ox1, oy1) = DEFAULT_OMEGA
    expected = np.zeros(mesh.n_triangles, dtype=bool)
    for i, tri in enumerate(mesh.triangles):
        pts = mesh.vertices[tri]
        expected[i] = all(
            ox0 <= x <= ox1 and oy0 <= y <= oy1 for x, y in pts
        )
    assert np.array_equal(mesh.omega_tags, expected)

    tagged_area = mesh.triangle_areas()[mesh.omega_tags].sum()
    box_area = (ox1 - ox0) * (oy1 - oy0)
    perimeter = 2 * ((ox1 - ox0) + (oy1 - oy0))
    assert abs(tagged_area - box_area) <= 2 * mesh.h * perimeter


def test_omega_touching_boundary_rejected():
    mesh = build_rect_mesh(DEFAULT_DOMAIN, 0.5)
    with pytest.raises(ValueError):
        tag_omega(mesh, ((0.0, 0.5), (2.0, 2.0)))
    with pytest.raises(ValueError):
        tag_omega(mesh, DEFAULT_DOMAIN)


def test_single_triangle_inside_omega():
    verts = np.array([[1.0, 1.0], [1.2, 1.0], [1.0, 1.2]])
    mesh = Mesh(
        vertices=verts,
        triangles=np.array([[0, 1, 2]]),
        boundary_vertex_flags=np.zeros(3, dtype=bool),
        h=0.2,
        domain_box=((0.0, 0.0), (3.0, 3.0)),
    )
    tags = tag_omega(mesh, ((0.5, 0.5), (2.0, 2.0)))
    assert tags.sum() == 1


def test_tagged_triangles_avoid_outer_boundary():
    mesh = build_rect_mesh(DEFAULT_DOMAIN, 0.1, omega_box=DEFAULT_OMEGA)
    tagged_vertices = np.unique(mesh.triangles[mesh.omega_tags])
    assert not mesh.boundary_vertex_flags[tagged_vertices].any()


def test_build_determinism():
    a = build_rect_mesh(DEFAULT_DOMAIN, 0.1, omega_box=DEFAULT_OMEGA)
    b = build_rect_mesh(DEFAULT_DOMAIN, 0.1, omega_box=DEFAULT_OMEGA)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)
    assert np.array_equal(a.omega_tags, b.omega_tags)


def test_dof_map_counts_and_mask():
    mesh = build_rect_mesh(DEFAULT_DOMAIN, 0.3)
    dofs = DofMap.from_mesh(mesh)
    assert dofs.n_velocity == 2 * mesh.n_vertices
    assert dofs.n_pressure == mesh.n_vertices
    n = mesh.n_vertices
    assert np.array_equal(dofs.dirichlet_mask[:n], mesh.boundary_vertex_flags)
    assert np.array_equal(dofs.dirichlet_mask[n:], mesh.boundary_vertex_flags)
    assert np.array_equal(np.flatnonzero(~dofs.dirichlet_mask), dofs.interior)


def test_omega_vertex_mask_requires_tags():
    mesh = build_rect_mesh(DEFAULT_DOMAIN, 0.5)
    with pytest.raises(ValueError):
        mesh.omega_vertex_mask()
