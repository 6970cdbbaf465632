"""
P1 Lagrange functions on a Mesh.

An FeFunction stores one coefficient per mesh vertex and is extended by
zero outside the mesh. Scalar fields passed to the interpolation routines
are callables mapping an (n, N) point array to n values.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from sobolevlab.errors import FeSpaceError
from sobolevlab.mesh import Mesh
from sobolevlab.quadrature import QuadratureRule, integrate_values, physical_points
from utils.logging import get_logger

logger = get_logger(__name__)

ScalarField = Callable[[np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray], np.ndarray]

LOCATE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FeFunction:
    """P1 function given by nodal coefficients.

    With ``zero_boundary`` (the default) the coefficients at boundary
    vertices must be exactly zero, i.e. the function lies in V_h.
    """

    mesh: Mesh
    coeffs: np.ndarray
    zero_boundary: bool = True

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.shape != (self.mesh.n_vertices,):
            raise FeSpaceError(
                f"Expected {self.mesh.n_vertices} coefficients, got shape {coeffs.shape}"
            )
        if self.zero_boundary and np.any(coeffs[self.mesh.boundary_vertex] != 0.0):
            raise FeSpaceError("Coefficients at boundary vertices must be zero")
        coeffs.flags.writeable = False
        object.__setattr__(self, 'coeffs', coeffs)

    def __mul__(self, c: float) -> 'FeFunction':
        return FeFunction(self.mesh, c * self.coeffs, self.zero_boundary)

    __rmul__ = __mul__

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.array([evaluate(self, xi) for xi in x])

    @property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)


def zero_function(mesh: Mesh) -> FeFunction:
    return FeFunction(mesh, np.zeros(mesh.n_vertices))


def element_gradients(u: FeFunction) -> np.ndarray:
    """Constant gradients of u on every element, shape (n_elements, N)."""
    mesh = u.mesh
    return np.einsum('ein,ei->en', mesh.basis_gradients, u.coeffs[mesh.elements])


def element_gradient(u: FeFunction, elem: int) -> np.ndarray:
    """Constant gradient of u on one element."""
    mesh = u.mesh
    return mesh.basis_gradients[elem].T @ u.coeffs[mesh.elements[elem]]


def _vertex_values(f: ScalarField, mesh: Mesh) -> np.ndarray:
    values = np.asarray(f(mesh.vertices), dtype=float).reshape(mesh.n_vertices)
    bad = ~np.isfinite(values)
    if bad.any():
        raise FeSpaceError(
            f"Non-finite field value at {int(bad.sum())} vertices",
            {'vertices': np.nonzero(bad)[0][:10].tolist()}
        )
    return values


def interpolate(f: ScalarField, mesh: Mesh, zero_boundary: bool = True) -> FeFunction:
    """Nodal interpolant; boundary coefficients are zeroed unless ``zero_boundary`` is False."""
    values = _vertex_values(f, mesh)
    if zero_boundary:
        values[mesh.boundary_vertex] = 0.0
    return FeFunction(mesh, values, zero_boundary)


def interpolate_shifted(f: ScalarField, mesh: Mesh) -> FeFunction:
    """Interpolant of f - C with C the value of f at the first boundary vertex.

    Args:
        f: Scalar field, finite at every vertex
        mesh: Target mesh

    Returns:
        FeFunction vanishing on the boundary

    Raises:
        FeSpaceError: On non-finite vertex values or a mesh without boundary vertices
    """
    values = _vertex_values(f, mesh)
    boundary = np.nonzero(mesh.boundary_vertex)[0]
    if len(boundary) == 0:
        raise FeSpaceError("Mesh has no boundary vertices to take the shift from")

    shift = values[boundary[0]]
    spread = float(np.max(np.abs(values[boundary] - shift)))
    if spread > 1e-12 * max(1.0, abs(shift)):
        # non-radial field: boundary values differ, the first one is used
        logger.warning(f"Boundary values of shifted field vary by {spread:.3e}; using first boundary vertex")

    coeffs = values - shift
    coeffs[boundary] = 0.0
    return FeFunction(mesh, coeffs)


def barycentric(mesh: Mesh, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of point x with respect to every element, shape (n_elements, N+1)."""
    x0 = mesh.vertices[mesh.elements[:, 0]]
    lam = np.einsum('ein,en->ei', mesh.basis_gradients, x - x0)
    lam[:, 0] += 1.0
    return lam


def locate(mesh: Mesh, x: np.ndarray, tol: float = LOCATE_TOL) -> Optional[int]:
    """Index of the first element containing x, or None."""
    inside = np.all(barycentric(mesh, x) >= -tol, axis=1)
    hit = np.argmax(inside)
    return int(hit) if inside[hit] else None


def evaluate(u: FeFunction, x: np.ndarray) -> float:
    """Point value of u; zero outside the mesh."""
    x = np.asarray(x, dtype=float)
    if np.linalg.norm(x) > 1.0:
        return 0.0
    mesh = u.mesh
    elem = locate(mesh, x)
    if elem is None:
        return 0.0
    lam = barycentric(mesh, x)[elem]
    return float(lam @ u.coeffs[mesh.elements[elem]])


def values_at(u: FeFunction, rule: QuadratureRule) -> np.ndarray:
    """Values of u at the quadrature nodes of every element, shape (n_elements, n_points)."""
    return u.coeffs[u.mesh.elements] @ rule.points.T


def interpolation_error(f: ScalarField, u: FeFunction, p: float, s: int,
                        rule: QuadratureRule, grad_f: Optional[VectorField] = None,
                        per_element: bool = False) -> Union[float, np.ndarray]:
    """(sum_T ||D^s (f - u)||^p_{L^p(T)})^(1/p) for s in {0, 1}.

    With ``per_element`` the individual ||D^s(f - u)||_{L^p(T)} are returned.
    """
    mesh = u.mesh
    pts = physical_points(mesh, rule).reshape(-1, mesh.dim)
    if s == 0:
        diff = np.abs(np.asarray(f(pts)).reshape(mesh.n_elements, -1) - values_at(u, rule))
    elif s == 1:
        if grad_f is None:
            raise FeSpaceError("grad_f is required for the s=1 interpolation error")
        g = np.asarray(grad_f(pts)).reshape(mesh.n_elements, rule.n_points, mesh.dim)
        diff = np.linalg.norm(g - element_gradients(u)[:, None, :], axis=2)
    else:
        raise FeSpaceError(f"Unsupported derivative order s={s}")

    if per_element:
        return (mesh.volumes * (diff ** p @ rule.normalized_weights)) ** (1.0 / p)
    return integrate_values(diff ** p, mesh, rule) ** (1.0 / p)


def write_fe_function(u: FeFunction, path: Union[str, Path]) -> Path:
    """Header ``N n_vertices`` then one coefficient per line (17 significant digits)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        f.write(f"{u.mesh.dim} {u.mesh.n_vertices}\n")
        for c in u.coeffs:
            f.write(f"{c:.17g}\n")
    return path


def read_fe_function(path: Union[str, Path], mesh: Mesh) -> FeFunction:
    path = Path(path)
    try:
        with open(path, 'r') as f:
            dim, nv = (int(v) for v in f.readline().split())
            coeffs = np.array([float(f.readline()) for _ in range(nv)])
    except (OSError, ValueError) as e:
        raise FeSpaceError(f"Cannot read FE function file {path}: {e}") from e
    if dim != mesh.dim or nv != mesh.n_vertices:
        raise FeSpaceError(f"File {path} does not match mesh (dim {dim}, {nv} vertices)")
    return FeFunction(mesh, coeffs, zero_boundary=not np.any(coeffs[mesh.boundary_vertex]))
