"""Triangle quadrature for load vectors with non-polynomial integrands."""

import numpy as np

# Degree-5 symmetric rule (7 points) in barycentric coordinates; exact for
# polynomials up to degree 5, ample for smooth forcing terms on fine meshes.
_A1 = 0.0597158717897698
_B1 = 0.4701420641051151
_A2 = 0.7974269853530873
_B2 = 0.1012865073234563

TRI_POINTS = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]
)
TRI_WEIGHTS = np.array(
    [
        0.225,
        0.1323941527885062,
        0.1323941527885062,
        0.1323941527885062,
        0.1259391805448271,
        0.1259391805448271,
        0.1259391805448271,
    ]
)


def physical_points(mesh):
    """Quadrature points mapped to every triangle.

    Returns (points, weights) with points of shape (n_triangles, n_q, 2) and
    weights of shape (n_triangles, n_q) that already include the element
    areas, so a plain weighted sum integrates over the whole mesh.
    """
    corners = mesh.vertices[mesh.triangles]  # (ne, 3, 2)
    pts = np.einsum("qk,ekd->eqd", TRI_POINTS, corners)
    areas = mesh.triangle_areas()
    w = TRI_WEIGHTS[None, :] * areas[:, None]
    return pts, w
