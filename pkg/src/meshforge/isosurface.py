"""Differentiable marching tetrahedra.

Extracts the zero level set of a per-vertex SDF on a tetrahedral grid as a
welded, consistently oriented triangle mesh, and back-propagates gradients
from mesh vertex positions to the SDF values and vertex deformations.

A crossing vertex on grid edge (i, j) sits at

    m = (v'_i * s_j - v'_j * s_i) / (s_j - s_i),

the linear zero crossing between the deformed endpoints v' = v + dv. Faces are
wound so normals point toward positive SDF (outward for s <= 0 inside).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tetgrid import GeometryField, TetGrid

__all__ = [
    "SurfaceMesh",
    "MeshGradients",
    "deformed_vertices",
    "marching_tetrahedra",
    "marching_tetrahedra_backward",
    "mesh_topology_stats",
]

DEGENERATE_AREA = 1e-12
MIN_SDF_GAP = 1e-12

# Triangle emission per sign pattern. Case bit i is set when s_i > 0; entries
# index the six tet edges (0,1) (0,2) (0,3) (1,2) (1,3) (2,3); -1 pads. Rows
# of complementary cases are reversals of each other, so negating the SDF
# flips orientation only.
TRIANGLE_TABLE = np.array(
    [
        [-1, -1, -1, -1, -1, -1],
        [1, 0, 2, -1, -1, -1],
        [4, 0, 3, -1, -1, -1],
        [1, 4, 2, 1, 3, 4],
        [3, 1, 5, -1, -1, -1],
        [2, 3, 0, 2, 5, 3],
        [1, 4, 0, 1, 5, 4],
        [4, 2, 5, -1, -1, -1],
        [4, 5, 2, -1, -1, -1],
        [4, 1, 0, 4, 5, 1],
        [3, 2, 0, 3, 5, 2],
        [1, 3, 5, -1, -1, -1],
        [4, 1, 2, 4, 3, 1],
        [3, 0, 4, -1, -1, -1],
        [2, 0, 1, -1, -1, -1],
        [-1, -1, -1, -1, -1, -1],
    ],
    dtype=np.int64,
)

NUM_TRIANGLES = np.array([0, 1, 1, 2, 1, 2, 2, 1, 1, 2, 2, 1, 2, 1, 1, 0], dtype=np.int64)

_EDGE_SLOTS = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


@dataclass(frozen=True)
class SurfaceMesh:
    """Triangle mesh extracted from a tet grid.

    ``vertex_origin[k] = (i, j)`` is the grid edge (min, max vertex index)
    that produced mesh vertex k; it routes gradients and texture queries.
    """

    vertices: np.ndarray       # (M, 3) float64
    faces: np.ndarray          # (F, 3) int64
    vertex_origin: np.ndarray  # (M, 2) int64

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]


@dataclass(frozen=True)
class MeshGradients:
    d_sdf: np.ndarray     # (V,) float64
    d_deform: np.ndarray  # (V, 3) float64


def deformed_vertices(grid: TetGrid, field: GeometryField) -> np.ndarray:
    """Grid vertices displaced by the field deformation, v' = v + dv."""
    field.check_sized(grid)
    return grid.vertices + field.deform


def _empty_mesh() -> SurfaceMesh:
    return SurfaceMesh(
        vertices=np.zeros((0, 3)),
        faces=np.zeros((0, 3), dtype=np.int64),
        vertex_origin=np.zeros((0, 2), dtype=np.int64),
    )


def _tet_parity(grid: TetGrid) -> np.ndarray:
    """+1 for positively oriented tets (canonical positions), -1 otherwise."""
    v = grid.vertices[grid.tets]
    vol = np.einsum("ij,ij->i", v[:, 1] - v[:, 0], np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]))
    return np.where(vol < 0, -1, 1)


def marching_tetrahedra(grid: TetGrid, field: GeometryField) -> SurfaceMesh:
    """Extract the SDF zero level set as a welded triangle mesh.

    Mesh vertices are shared across tets through their grid-edge key, faces
    are emitted in tet-index order, and triangles with area below
    ``DEGENERATE_AREA`` are dropped. An all-one-sign field gives an empty mesh.
    """
    field.check_sized(grid)
    if grid.num_tets == 0:
        raise ValueError("grid has no tets")
    sdf = field.sdf
    occ = sdf > 0.0
    code = (occ[grid.tets].astype(np.int64) << np.arange(4)).sum(axis=1)
    keep = (code > 0) & (code < 15)
    if not keep.any():
        return _empty_mesh()

    kept_tets = grid.tets[keep]
    kept_code = code[keep]
    parity = _tet_parity(grid)[keep]

    # unique crossing edges over kept tets, welded by (min, max) key
    edges = kept_tets[:, _EDGE_SLOTS].reshape(-1, 2)
    edges = np.sort(edges, axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    crossing = occ[uniq[:, 0]] != occ[uniq[:, 1]]
    vert_of_edge = np.full(uniq.shape[0], -1, dtype=np.int64)
    vert_of_edge[crossing] = np.arange(crossing.sum())
    origin = uniq[crossing]

    vprime = deformed_vertices(grid, field)
    si = sdf[origin[:, 0]]
    sj = sdf[origin[:, 1]]
    denom = sj - si
    denom = np.where(np.abs(denom) < MIN_SDF_GAP, np.where(denom < 0, -MIN_SDF_GAP, MIN_SDF_GAP), denom)
    verts = (vprime[origin[:, 0]] * sj[:, None] - vprime[origin[:, 1]] * si[:, None]) / denom[:, None]

    # map per-tet edge slots to mesh vertex ids, then gather table rows
    slot_to_vert = vert_of_edge[inverse].reshape(-1, 6)
    rows = TRIANGLE_TABLE[kept_code]
    ntri = NUM_TRIANGLES[kept_code]
    faces = []
    for t in (0, 1):
        sel = ntri > t
        if not sel.any():
            continue
        tri_slots = rows[sel, 3 * t : 3 * t + 3]
        tri = np.take_along_axis(slot_to_vert[sel], tri_slots, axis=1)
        flip = parity[sel] < 0
        tri[flip] = tri[flip][:, ::-1]
        order = np.nonzero(sel)[0]
        faces.append((order, t, tri))
    # deterministic order: by tet index, then first/second triangle
    all_faces = np.zeros((0, 3), dtype=np.int64)
    if faces:
        keyed = []
        for order, t, tri in faces:
            keyed.append(np.concatenate([order[:, None] * 2 + t, tri], axis=1))
        keyed = np.concatenate(keyed, axis=0)
        keyed = keyed[np.argsort(keyed[:, 0], kind="stable")]
        all_faces = keyed[:, 1:]

    # degenerate faces (collapsed by deformation) are dropped
    p = verts[all_faces]
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    all_faces = all_faces[area >= DEGENERATE_AREA]

    return SurfaceMesh(vertices=verts, faces=all_faces, vertex_origin=origin)


def marching_tetrahedra_backward(
    grid: TetGrid,
    field: GeometryField,
    mesh: SurfaceMesh,
    upstream: np.ndarray,
) -> MeshGradients:
    """Vector-Jacobian product of mesh vertex positions w.r.t. the field.

    ``upstream`` holds one 3-vector per mesh vertex. Grid vertices not on any
    crossing edge receive exactly zero gradient.
    """
    field.check_sized(grid)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != mesh.vertices.shape:
        raise ValueError(f"upstream shape {upstream.shape} != mesh vertices {mesh.vertices.shape}")
    origin = mesh.vertex_origin
    if origin.size and origin.max() >= grid.num_vertices:
        raise ValueError("mesh does not originate from this grid (vertex index out of range)")
    sdf = field.sdf
    if origin.size and not ((sdf[origin[:, 0]] > 0) != (sdf[origin[:, 1]] > 0)).all():
        raise ValueError("mesh does not match field: origin edges are not sign crossings")

    d_sdf = np.zeros(grid.num_vertices)
    d_deform = np.zeros((grid.num_vertices, 3))
    if origin.size == 0:
        return MeshGradients(d_sdf=d_sdf, d_deform=d_deform)

    vprime = deformed_vertices(grid, field)
    i, j = origin[:, 0], origin[:, 1]
    si, sj = sdf[i], sdf[j]
    denom = sj - si
    denom = np.where(np.abs(denom) < MIN_SDF_GAP, np.where(denom < 0, -MIN_SDF_GAP, MIN_SDF_GAP), denom)
    m = mesh.vertices

    # dm/dv'_i = s_j/D * I, dm/dv'_j = -s_i/D * I
    np.add.at(d_deform, i, upstream * (sj / denom)[:, None])
    np.add.at(d_deform, j, upstream * (-si / denom)[:, None])
    # dm/ds_i = (m - v'_j)/D, dm/ds_j = (v'_i - m)/D
    np.add.at(d_sdf, i, np.einsum("kd,kd->k", upstream, (m - vprime[j]) / denom[:, None]))
    np.add.at(d_sdf, j, np.einsum("kd,kd->k", upstream, (vprime[i] - m) / denom[:, None]))
    return MeshGradients(d_sdf=d_sdf, d_deform=d_deform)


def mesh_topology_stats(mesh: SurfaceMesh) -> tuple[int, int, int]:
    """(euler characteristic, boundary edge count, connected components).

    Euler characteristic uses vertices referenced by faces; boundary edges are
    those with face multiplicity 1; components join faces sharing an edge.
    """
    if mesh.num_faces == 0:
        return (0, 0, 0)
    faces = mesh.faces
    used = np.unique(faces)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=0)
    e = np.sort(e, axis=1)
    uniq, inverse, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    euler = used.size - uniq.shape[0] + faces.shape[0]
    boundary = int((counts == 1).sum())

    # union-find over faces through shared edges
    parent = np.arange(faces.shape[0])

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edge_faces = inverse.reshape(3, -1).T  # (F, 3) edge ids per face
    first_face: dict[int, int] = {}
    for f in range(faces.shape[0]):
        for eid in edge_faces[f]:
            other = first_face.setdefault(int(eid), f)
            if other != f:
                ra, rb = find(other), find(f)
                if ra != rb:
                    parent[rb] = ra
    components = len({find(f) for f in range(faces.shape[0])})
    return (int(euler), boundary, components)
