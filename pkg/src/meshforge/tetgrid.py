"""Deformable tetrahedral grids hosting per-vertex SDF and deformation fields.

The grid covers the cube [-1, 1]^3. Each lattice cell is split into six
tetrahedra sharing the cell's main body diagonal (Kuhn split); every cell uses
the same diagonal orientation, so triangulated faces of neighboring cells
coincide and the grid is conforming.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "TetGrid",
    "GeometryField",
    "build_regular_grid",
    "unique_edges",
    "surface_tets",
    "subdivide",
    "apply_residuals",
]

# Local corner ids of the six Kuhn tetrahedra of a unit cell. Corner id
# c = 4*i + 2*j + k for offsets (i, j, k); all six share corners 0 and 7.
_KUHN_TETS = tuple(
    (0, {0: 4, 1: 2, 2: 1}[p[0]], {0: 4, 1: 2, 2: 1}[p[0]] + {0: 4, 1: 2, 2: 1}[p[1]], 7)
    for p in itertools.permutations((0, 1, 2), 2)
)


@dataclass(frozen=True)
class TetGrid:
    """Tetrahedral grid: vertex positions, tets, and the unique edge set."""

    vertices: np.ndarray  # (V, 3) float64, canonical (undeformed) positions
    tets: np.ndarray      # (K, 4) int64
    edges: np.ndarray     # (E, 2) int64, each row sorted, rows lexicographic
    resolution: int       # cells per axis of the base lattice

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_tets(self) -> int:
        return self.tets.shape[0]


@dataclass(frozen=True)
class GeometryField:
    """Per-vertex SDF values in [-1, 1] and bounded deformation vectors.

    ``deform_bound`` is 1/resolution for a fresh grid and halves with each
    volume subdivision.
    """

    sdf: np.ndarray     # (V,) float64
    deform: np.ndarray  # (V, 3) float64, |component| <= deform_bound
    deform_bound: float

    def check_sized(self, grid: TetGrid) -> None:
        if self.sdf.shape != (grid.num_vertices,) or self.deform.shape != (grid.num_vertices, 3):
            raise ValueError(
                f"field sized ({self.sdf.shape}, {self.deform.shape}) does not match "
                f"grid with {grid.num_vertices} vertices"
            )


def build_regular_grid(res: int) -> TetGrid:
    """Regular grid over [-1, 1]^3 with ``res`` cells per axis, 6 tets per cell.

    Raises ValueError for res < 1. Vertex count is (res+1)^3 and tet count
    6*res^3; all tets are positively oriented.
    """
    if res < 1:
        raise ValueError(f"grid resolution must be >= 1, got {res}")
    n = res + 1
    axis = np.linspace(-1.0, 1.0, n)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    vertices = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)

    # vertex index of lattice point (i, j, k)
    def vid(i, j, k):
        return (i * n + j) * n + k

    ci, cj, ck = np.meshgrid(np.arange(res), np.arange(res), np.arange(res), indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    corner = np.empty((ci.size, 8), dtype=np.int64)
    for c in range(8):
        di, dj, dk = (c >> 2) & 1, (c >> 1) & 1, c & 1
        corner[:, c] = vid(ci + di, cj + dj, ck + dk)

    tets = np.concatenate([corner[:, list(t)] for t in _KUHN_TETS], axis=0)
    tets = _orient_positive(vertices, tets)
    return TetGrid(vertices=vertices, tets=tets, edges=_unique_edge_array(tets), resolution=res)


def _orient_positive(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Swap two indices of any tet with negative signed volume."""
    tets = tets.copy()
    v = vertices[tets]
    vol = np.einsum("ij,ij->i", v[:, 1] - v[:, 0], np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]))
    flip = vol < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
    return tets


_TET_EDGE_SLOTS = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def _unique_edge_array(tets: np.ndarray) -> np.ndarray:
    if tets.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = tets[:, _TET_EDGE_SLOTS].reshape(-1, 2)
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0)  # sorts rows lexicographically
    return e.astype(np.int64)


def unique_edges(grid: TetGrid) -> np.ndarray:
    """Unique unordered vertex-index pairs of all tet edges, rows (min, max),
    sorted lexicographically."""
    return _unique_edge_array(grid.tets)


def sdf_signs(sdf: np.ndarray) -> np.ndarray:
    """Sign convention used throughout: s <= 0 is inside (-1), s > 0 outside (+1)."""
    return np.where(np.asarray(sdf) > 0.0, 1, -1)


def surface_tets(grid: TetGrid, field: GeometryField) -> set[int]:
    """Indices of tets whose four SDF signs are not all equal."""
    field.check_sized(grid)
    occ = field.sdf[grid.tets] > 0.0
    count = occ.sum(axis=1)
    return set(np.nonzero((count > 0) & (count < 4))[0].tolist())


def apply_residuals(field: GeometryField, dsdf: np.ndarray, ddeform: np.ndarray) -> GeometryField:
    """Add residuals to the field, re-clamping to the type invariant bounds."""
    dsdf = np.asarray(dsdf, dtype=np.float64)
    ddeform = np.asarray(ddeform, dtype=np.float64)
    if dsdf.shape != field.sdf.shape or ddeform.shape != field.deform.shape:
        raise ValueError(
            f"residual shapes ({dsdf.shape}, {ddeform.shape}) do not match field "
            f"({field.sdf.shape}, {field.deform.shape})"
        )
    b = field.deform_bound
    return replace(
        field,
        sdf=np.clip(field.sdf + dsdf, -1.0, 1.0),
        deform=np.clip(field.deform + ddeform, -b, b),
    )


# ---------------------------------------------------------------------------
# Volume subdivision (red refinement of selected tets + green closure)
# ---------------------------------------------------------------------------

def subdivide(
    grid: TetGrid, field: GeometryField, selected: set[int] | list[int]
) -> tuple[TetGrid, GeometryField]:
    """Split each selected tet into 8 children through its edge midpoints.

    Midpoint vertices are welded across adjacent tets; their SDF is the mean of
    the edge endpoints and their deformation the mean re-clamped to the halved
    bound. Unselected tets that acquire split edges are bisected (red-green
    closure) so the refined grid stays conforming; tets with no split edges are
    untouched. The returned field uses the halved deformation bound.
    """
    field.check_sized(grid)
    selected = set(int(i) for i in selected)
    if selected and (min(selected) < 0 or max(selected) >= grid.num_tets):
        raise ValueError(f"selected tet index out of range [0, {grid.num_tets})")

    tets = grid.tets
    red = np.zeros(grid.num_tets, dtype=bool)
    red[list(selected)] = True

    # Fixpoint: a non-red tet whose split-edge pattern admits no green rule is
    # promoted to red, which splits more edges; iterate until stable.
    while True:
        split = _split_edge_set(tets, red)
        promote = []
        for k in np.nonzero(~red)[0]:
            local = _local_split_edges(tets[k], split)
            if not _has_green_rule(tets[k], local):
                promote.append(k)
        if not promote:
            break
        red[promote] = True

    split_edges = sorted(_split_edge_set(tets, red))
    midpoint_of = {e: grid.num_vertices + i for i, e in enumerate(split_edges)}

    new_tets: list[tuple[int, int, int, int]] = []
    for k in range(grid.num_tets):
        tet = tuple(int(i) for i in tets[k])
        if red[k]:
            new_tets.extend(_red_children(tet, midpoint_of))
        else:
            local = _local_split_edges(tets[k], set(split_edges))
            new_tets.extend(_green_children(tet, local, midpoint_of))

    mid_idx = np.array(split_edges, dtype=np.int64).reshape(-1, 2)
    if mid_idx.size:
        mid_pos = 0.5 * (grid.vertices[mid_idx[:, 0]] + grid.vertices[mid_idx[:, 1]])
        vertices = np.concatenate([grid.vertices, mid_pos], axis=0)
    else:
        vertices = grid.vertices.copy()

    tets_out = _orient_positive(vertices, np.array(new_tets, dtype=np.int64))
    out_grid = TetGrid(
        vertices=vertices,
        tets=tets_out,
        edges=_unique_edge_array(tets_out),
        resolution=grid.resolution,
    )

    bound = field.deform_bound * 0.5
    if mid_idx.size:
        mid_sdf = 0.5 * (field.sdf[mid_idx[:, 0]] + field.sdf[mid_idx[:, 1]])
        mid_def = 0.5 * (field.deform[mid_idx[:, 0]] + field.deform[mid_idx[:, 1]])
        sdf = np.concatenate([field.sdf, mid_sdf])
        deform = np.concatenate([field.deform, mid_def], axis=0)
    else:
        sdf = field.sdf.copy()
        deform = field.deform.copy()
    out_field = GeometryField(sdf=sdf, deform=np.clip(deform, -bound, bound), deform_bound=bound)
    return out_grid, out_field


def _split_edge_set(tets: np.ndarray, red: np.ndarray) -> set[tuple[int, int]]:
    if not red.any():
        return set()
    e = tets[red][:, _TET_EDGE_SLOTS].reshape(-1, 2)
    e = np.sort(e, axis=1)
    return set(map(tuple, np.unique(e, axis=0).tolist()))


def _local_split_edges(tet: np.ndarray, split: set[tuple[int, int]]) -> list[tuple[int, int]]:
    """Split edges of one tet as local vertex-slot pairs (a, b), a < b."""
    out = []
    for a, b in _TET_EDGE_SLOTS:
        key = (int(min(tet[a], tet[b])), int(max(tet[a], tet[b])))
        if key in split:
            out.append((int(a), int(b)))
    return out


def _has_green_rule(tet: np.ndarray, local: list[tuple[int, int]]) -> bool:
    n = len(local)
    if n <= 2:
        return True
    if n == 3:
        # all three on one face <=> they touch exactly 3 distinct slots
        return len({s for e in local for s in e}) == 3
    return False


def _mid(midpoint_of, tet, a, b) -> int:
    key = (min(tet[a], tet[b]), max(tet[a], tet[b]))
    return midpoint_of[key]


def _red_children(tet, midpoint_of):
    """1:8 split: four corner tets plus four from the inner octahedron."""
    a, b, c, d = tet
    m = {(i, j): _mid(midpoint_of, tet, i, j) for i, j in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))}
    children = [
        (a, m[(0, 1)], m[(0, 2)], m[(0, 3)]),
        (b, m[(0, 1)], m[(1, 2)], m[(1, 3)]),
        (c, m[(0, 2)], m[(1, 2)], m[(2, 3)]),
        (d, m[(0, 3)], m[(1, 3)], m[(2, 3)]),
    ]
    # octahedron split along the fixed diagonal m01-m23
    p, q = m[(0, 1)], m[(2, 3)]
    children += [
        (p, q, m[(0, 2)], m[(0, 3)]),
        (p, q, m[(0, 3)], m[(1, 3)]),
        (p, q, m[(1, 3)], m[(1, 2)]),
        (p, q, m[(1, 2)], m[(0, 2)]),
    ]
    return children


def _green_children(tet, local, midpoint_of):
    """Bisect a tet with 0-3 split edges so its faces match red neighbors."""
    if not local:
        return [tet]
    if len(local) == 1:
        (a, b) = local[0]
        c, d = [s for s in range(4) if s not in (a, b)]
        m = _mid(midpoint_of, tet, a, b)
        return [(tet[a], m, tet[c], tet[d]), (m, tet[b], tet[c], tet[d])]
    if len(local) == 2:
        slots0 = set(local[0])
        slots1 = set(local[1])
        shared = slots0 & slots1
        m0 = _mid(midpoint_of, tet, *local[0])
        m1 = _mid(midpoint_of, tet, *local[1])
        if not shared:  # opposite edges
            a, b = local[0]
            c, d = local[1]
            return [
                (tet[a], m0, tet[c], m1),
                (tet[a], m0, m1, tet[d]),
                (m0, tet[b], tet[c], m1),
                (m0, tet[b], m1, tet[d]),
            ]
        # adjacent edges: both lie on one face, quad diagonal chosen from
        # global indices so the two tets sharing that face agree
        b = shared.pop()
        a = (slots0 - {b}).pop()
        c = (slots1 - {b}).pop()
        d = ({0, 1, 2, 3} - {a, b, c}).pop()
        ma = m0 if a in local[0] else m1  # midpoint of edge (a, b)
        mc = m1 if ma is m0 else m0      # midpoint of edge (b, c)
        core = (ma, tet[b], mc, tet[d])
        if tet[a] < tet[c]:  # quad diagonal a-mc
            return [core, (tet[a], ma, mc, tet[d]), (tet[a], mc, tet[c], tet[d])]
        return [core, (tet[c], mc, ma, tet[d]), (tet[c], ma, tet[a], tet[d])]
    # three split edges on one face
    face = sorted({s for e in local for s in e})
    d = ({0, 1, 2, 3} - set(face)).pop()
    a, b, c = face
    mab = _mid(midpoint_of, tet, a, b)
    mbc = _mid(midpoint_of, tet, b, c)
    mca = _mid(midpoint_of, tet, a, c)
    return [
        (tet[a], mab, mca, tet[d]),
        (mab, tet[b], mbc, tet[d]),
        (mca, mbc, tet[c], tet[d]),
        (mab, mbc, mca, tet[d]),
    ]
