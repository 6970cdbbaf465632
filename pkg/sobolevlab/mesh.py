"""
Simplicial meshes of inscribed polyhedral approximations of the unit ball.

The coarse meshes are fans about the origin (hexagon in 2D, octahedron in
3D). Each refinement splits every simplex into 2^N children through its
edge midpoints; midpoints of boundary edges are pushed radially onto the
unit sphere so that every boundary vertex lies on the sphere.
"""

from dataclasses import dataclass, field
from functools import cached_property
from math import factorial
from pathlib import Path
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

from sobolevlab.errors import MeshError, UnsupportedDimensionError
from utils.logging import get_logger, log_execution_time

logger = get_logger(__name__)

SUPPORTED_DIMS = (2, 3)
SPHERE_TOL = 1e-12
DEGENERACY_TOL = 1e-14
HALVING_BAND = (0.45, 0.55)
# first refinement step whose h ratio falls in HALVING_BAND; the coarse fans
# cannot halve (2D: spoke-to-rim-midpoint edges >= 0.577, 3D: octahedron
# diagonals >= 1 against h = sqrt(2)) and in 3D the sphere projection keeps
# the next two steps near 0.58
HALVING_FROM_LEVEL = {2: 1, 3: 3}

# local edge numbering of a simplex; the 3D order is the one used by the
# tetrahedral red refinement below
LOCAL_EDGES = {
    2: np.array([[0, 1], [1, 2], [0, 2]]),
    3: np.array([[0, 1], [1, 2], [0, 2], [0, 3], [1, 3], [2, 3]]),
}


class MeshMetrics(NamedTuple):
    h: float
    sigma: float
    q0: float


def _local_facets(dim: int) -> np.ndarray:
    # facet i is opposite local vertex i
    return np.array([[j for j in range(dim + 1) if j != i] for i in range(dim + 1)])


def _simplex_measure(points: np.ndarray) -> np.ndarray:
    """k-dimensional measure of simplices given as (n, k+1, N) vertex arrays (Gram determinant)."""
    edges = points[:, 1:, :] - points[:, :1, :]
    k = edges.shape[1]
    gram = np.einsum('nik,njk->nij', edges, edges)
    return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None)) / factorial(k)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh.

    ``boundary_vertex`` defaults to the vertices of single-owner facets.
    Element orientation is normalized to positive volume on construction.
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    boundary_vertex: Optional[np.ndarray] = None
    volumes: np.ndarray = field(init=False, repr=False)
    h_T: np.ndarray = field(init=False, repr=False)
    rho_T: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim not in SUPPORTED_DIMS:
            raise UnsupportedDimensionError(f"Unsupported dimension: {self.dim}", {'dim': self.dim})

        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        elements = np.array(self.elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != self.dim:
            raise MeshError(f"vertices must have shape (n, {self.dim})", {'shape': vertices.shape})
        if elements.ndim != 2 or elements.shape[1] != self.dim + 1:
            raise MeshError(f"elements must have shape (n, {self.dim + 1})", {'shape': elements.shape})
        if elements.size and (elements.min() < 0 or elements.max() >= len(vertices)):
            raise MeshError("element refers to a missing vertex")

        jac = vertices[elements[:, 1:]] - vertices[elements[:, :1]]
        det = np.linalg.det(jac)
        flip = det < 0
        if flip.any():
            elements[flip, 0], elements[flip, 1] = elements[flip, 1].copy(), elements[flip, 0].copy()
            det = np.abs(det)
        volumes = det / factorial(self.dim)

        pts = vertices[elements]
        pair = LOCAL_EDGES[self.dim]
        edge_len = np.linalg.norm(pts[:, pair[:, 1]] - pts[:, pair[:, 0]], axis=2)
        h_T = edge_len.max(axis=1)

        degenerate = volumes <= DEGENERACY_TOL * h_T ** self.dim
        if degenerate.any():
            raise MeshError(
                f"{int(degenerate.sum())} degenerate element(s)",
                {'elements': np.nonzero(degenerate)[0][:10].tolist()}
            )

        facet_area = sum(
            _simplex_measure(pts[:, facet]) for facet in _local_facets(self.dim)
        )
        rho_T = 2.0 * self.dim * volumes / facet_area

        if self.boundary_vertex is None:
            boundary = np.zeros(len(vertices), dtype=bool)
            boundary[np.unique(self._facet_table(elements)[1])] = True
        else:
            boundary = np.asarray(self.boundary_vertex, dtype=bool)
            if boundary.shape != (len(vertices),):
                raise MeshError("boundary_vertex must have one flag per vertex")

        for name, value in (('vertices', vertices), ('elements', elements), ('boundary_vertex', boundary),
                            ('volumes', volumes), ('h_T', h_T), ('rho_T', rho_T)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    def _facet_table(self, elements: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Unique facets with their owner counts; returns (facets, boundary_facets)."""
        elements = self.elements if elements is None else elements
        local = _local_facets(self.dim)
        all_facets = np.sort(elements[:, local].reshape(-1, self.dim), axis=1)
        facets, counts = np.unique(all_facets, axis=0, return_counts=True)
        return facets, facets[counts == 1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def h(self) -> float:
        return float(self.h_T.max())

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.nonzero(~self.boundary_vertex)[0]

    def facets(self) -> np.ndarray:
        """All unique facets as sorted vertex-index tuples."""
        return self._facet_table()[0]

    def boundary_facets(self) -> np.ndarray:
        """Facets owned by exactly one element."""
        return self._facet_table()[1]

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Unique edges and the (n_elements, n_local_edges) element-to-edge map."""
        pair = LOCAL_EDGES[self.dim]
        all_edges = np.sort(self.elements[:, pair].reshape(-1, 2), axis=1)
        edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
        return edges, inverse.reshape(self.n_elements, len(pair))

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the local P1 basis, shape (n_elements, N+1, N)."""
        pts = self.vertices[self.elements]
        jac = np.transpose(pts[:, 1:] - pts[:, :1], (0, 2, 1))
        inv = np.linalg.inv(jac)
        grads = np.empty((self.n_elements, self.dim + 1, self.dim))
        grads[:, 1:, :] = inv
        grads[:, 0, :] = -inv.sum(axis=1)
        return grads


def coarse_ball_mesh(dim: int) -> Mesh:
    """Fan about the origin: hexagon (2D) or octahedron (3D)."""
    if dim == 2:
        angles = np.arange(6) * np.pi / 3
        vertices = np.vstack([[0.0, 0.0], np.column_stack([np.cos(angles), np.sin(angles)])])
        elements = [[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)]
    elif dim == 3:
        vertices = np.vstack([np.zeros(3), np.repeat(np.eye(3), 2, axis=0) * np.tile([1.0, -1.0], 3)[:, None]])
        # vertex 1 + 2i + s is (-1)^s e_i
        elements = [
            [0, 1 + sx, 3 + sy, 5 + sz]
            for sx in (0, 1) for sy in (0, 1) for sz in (0, 1)
        ]
    else:
        raise UnsupportedDimensionError(f"Unsupported dimension: {dim}", {'dim': dim})
    return Mesh(dim, vertices, np.array(elements))


def _red_children_2d(t: np.ndarray, m: np.ndarray) -> np.ndarray:
    # m columns: midpoints of (0,1), (1,2), (0,2)
    return np.vstack([
        np.column_stack([t[:, 0], m[:, 0], m[:, 2]]),
        np.column_stack([t[:, 1], m[:, 1], m[:, 0]]),
        np.column_stack([t[:, 2], m[:, 2], m[:, 1]]),
        np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
    ])


# inner octahedron split: diagonal between midpoints of two opposite edges,
# remaining four midpoints listed in cyclic order around it
_OCTAHEDRON_SPLITS = (
    ((2, 4), (0, 1, 5, 3)),
    ((1, 3), (0, 4, 5, 2)),
    ((0, 5), (1, 4, 3, 2)),
)


def _red_children_3d(t: np.ndarray, m: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    # m columns: midpoints of (0,1), (1,2), (0,2), (0,3), (1,3), (2,3)
    corners = np.vstack([
        np.column_stack([t[:, 0], m[:, 0], m[:, 2], m[:, 3]]),
        np.column_stack([t[:, 1], m[:, 0], m[:, 1], m[:, 4]]),
        np.column_stack([t[:, 2], m[:, 1], m[:, 2], m[:, 5]]),
        np.column_stack([t[:, 3], m[:, 3], m[:, 4], m[:, 5]]),
    ])
    diag_len = np.column_stack([
        np.linalg.norm(vertices[m[:, a]] - vertices[m[:, b]], axis=1)
        for (a, b), _ in _OCTAHEDRON_SPLITS
    ])
    choice = np.argmin(diag_len, axis=1)

    inner = []
    for k, ((a, b), ring) in enumerate(_OCTAHEDRON_SPLITS):
        sel = m[choice == k]
        for i in range(4):
            c, d = ring[i], ring[(i + 1) % 4]
            inner.append(np.column_stack([sel[:, a], sel[:, b], sel[:, c], sel[:, d]]))
    return np.vstack([corners] + inner)


def refine(mesh: Mesh) -> Mesh:
    """One level of red refinement with boundary midpoints projected to the sphere.

    Args:
        mesh: Mesh to refine (left untouched)

    Returns:
        New mesh with 2^N times as many elements
    """
    edges, elem_edges = mesh.edges()
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])

    # an edge is on the boundary iff it belongs to a boundary facet
    boundary_edge = np.zeros(len(edges), dtype=bool)
    bfacets = mesh.boundary_facets()
    if len(bfacets):
        if mesh.dim == 2:
            bpairs = bfacets
        else:
            bpairs = np.sort(bfacets[:, [[0, 1], [1, 2], [0, 2]]].reshape(-1, 2), axis=1)
        lookup = {tuple(e): i for i, e in enumerate(edges)}
        boundary_edge[[lookup[tuple(e)] for e in bpairs]] = True

    mid_boundary = boundary_edge & np.all(mesh.boundary_vertex[edges], axis=1)
    radii = np.linalg.norm(midpoints[mid_boundary], axis=1)
    midpoints[mid_boundary] /= radii[:, None]

    vertices = np.vstack([mesh.vertices, midpoints])
    boundary = np.concatenate([mesh.boundary_vertex, mid_boundary])
    m = elem_edges + mesh.n_vertices

    if mesh.dim == 2:
        elements = _red_children_2d(mesh.elements, m)
    else:
        elements = _red_children_3d(mesh.elements, m, vertices)

    return Mesh(mesh.dim, vertices, elements, boundary)


@log_execution_time()
def build_ball_mesh(dim: int, level: int) -> Mesh:
    """Mesh of the inscribed polyhedral ball after ``level`` refinements.

    Args:
        dim: Space dimension, 2 or 3
        level: Number of red refinements of the coarse fan (>= 0)

    Returns:
        Mesh with all boundary vertices on the unit sphere

    Raises:
        UnsupportedDimensionError: If dim is not 2 or 3
        MeshError: If level is negative
    """
    if dim not in SUPPORTED_DIMS:
        raise UnsupportedDimensionError(f"Unsupported dimension: {dim}", {'dim': dim})
    if level < 0:
        raise MeshError(f"level must be >= 0, got {level}")

    mesh = coarse_ball_mesh(dim)
    for step in range(level):
        fine = refine(mesh)
        ratio = fine.h / mesh.h
        if not HALVING_BAND[0] <= ratio <= HALVING_BAND[1]:
            log = logger.warning if step >= HALVING_FROM_LEVEL[dim] else logger.debug
            log(f"h ratio {ratio:.3f} outside {HALVING_BAND} at level {step} -> {step + 1}",
                extra={'dim': dim, 'level': step + 1})
        mesh = fine

    logger.info(
        f"Ball mesh dim={dim} level={level}: {mesh.n_vertices} vertices, "
        f"{mesh.n_elements} elements, h={mesh.h:.4g}",
        extra={'dim': dim, 'level': level}
    )
    return mesh


def mesh_metrics(mesh: Mesh) -> MeshMetrics:
    """(h, sigma, q0): max diameter, max h_T/rho_T, min h_T / max h_T."""
    h = float(mesh.h_T.max())
    sigma = float(np.max(mesh.h_T / mesh.rho_T))
    q0 = float(mesh.h_T.min() / h)
    return MeshMetrics(h, sigma, q0)


def mesh_volume(mesh: Mesh) -> float:
    return float(np.sum(mesh.volumes))


def check_sphere_invariant(mesh: Mesh, tol: float = SPHERE_TOL) -> None:
    """Boundary vertices lie on the unit sphere, all others strictly inside."""
    radii = np.linalg.norm(mesh.vertices, axis=1)
    off_sphere = np.abs(radii[mesh.boundary_vertex] - 1.0) > tol
    if off_sphere.any():
        raise MeshError(f"{int(off_sphere.sum())} boundary vertices off the unit sphere")
    outside = radii[~mesh.boundary_vertex] >= 1.0
    if outside.any():
        raise MeshError(f"{int(outside.sum())} interior vertices not inside the unit ball")


def check_conformity(mesh: Mesh) -> None:
    """Every facet has at most two owners; single-owner facets carry only boundary vertices."""
    local = _local_facets(mesh.dim)
    all_facets = np.sort(mesh.elements[:, local].reshape(-1, mesh.dim), axis=1)
    facets, counts = np.unique(all_facets, axis=0, return_counts=True)
    if (counts > 2).any():
        raise MeshError(f"{int((counts > 2).sum())} facets shared by more than two elements")
    exposed = facets[counts == 1]
    if not np.all(mesh.boundary_vertex[exposed]):
        raise MeshError("exposed facet with a non-boundary vertex (hanging node)")


def write_mesh(mesh: Mesh, path: Union[str, Path]) -> Path:
    """Write the text mesh format (17 significant digits)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        f.write(f"{mesh.dim} {mesh.n_vertices} {mesh.n_elements}\n")
        for x, flag in zip(mesh.vertices, mesh.boundary_vertex):
            f.write(' '.join(f"{c:.17g}" for c in x) + f" {int(flag)}\n")
        for t in mesh.elements:
            f.write(' '.join(str(int(i)) for i in t) + '\n')
    return path


def read_mesh(path: Union[str, Path]) -> Mesh:
    path = Path(path)
    try:
        with open(path, 'r') as f:
            dim, nv, ne = (int(v) for v in f.readline().split())
            rows = [f.readline().split() for _ in range(nv)]
            elements = [[int(v) for v in f.readline().split()] for _ in range(ne)]
    except (OSError, ValueError) as e:
        raise MeshError(f"Cannot read mesh file {path}: {e}") from e

    coords = np.array([[float(v) for v in row[:dim]] for row in rows])
    flags = np.array([row[dim] == '1' for row in rows], dtype=bool)
    return Mesh(dim, coords, np.array(elements, dtype=np.int64).reshape(ne, dim + 1), flags)
