"""1D linear finite elements and the mass-weighted inner product.

Everything downstream treats parameter vectors as coefficient vectors of
piecewise-linear functions on an interval mesh. The mass matrix M induces
the inner product

    <y, z>_M = y^T M z,

and adjoints are always taken with respect to it: for a matrix B mapping
coefficient vectors to coefficient vectors the adjoint is M^{-1} B^T M,
while for a basis map V (Euclidean r-vectors into the weighted space) the
adjoint is V^T M. Element integrals are evaluated in closed form; there is
no numerical quadrature anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class Mesh1D:
    """Interval mesh given by strictly increasing node coordinates."""

    node_coords: np.ndarray

    def __post_init__(self):
        coords = np.atleast_1d(np.asarray(self.node_coords, dtype=float))
        if coords.ndim != 1 or coords.size < 2:
            raise ValueError("a mesh needs at least two nodes")
        if not np.all(np.diff(coords) > 0.0):
            raise ValueError("node coordinates must be strictly increasing")
        object.__setattr__(self, "node_coords", coords)

    @classmethod
    def uniform(cls, n_nodes: int, length: float = 1.0) -> "Mesh1D":
        if n_nodes < 2:
            raise ValueError("n_nodes must be at least 2")
        if length <= 0.0:
            raise ValueError("length must be positive")
        return cls(np.linspace(0.0, length, n_nodes))

    @property
    def n_nodes(self) -> int:
        return self.node_coords.size

    @property
    def length(self) -> float:
        return float(self.node_coords[-1] - self.node_coords[0])

    @property
    def element_lengths(self) -> np.ndarray:
        return np.diff(self.node_coords)

    def nearest_node(self, x: float) -> int:
        """Index of the node closest to coordinate x."""
        return int(np.argmin(np.abs(self.node_coords - x)))


class WeightedSpace:
    """Coefficient space R^n equipped with the mass inner product.

    Holds the (dense, SPD) mass matrix M, a Cholesky factor R with
    R^T R = M used for whitening, and a cached factorization for
    applying M^{-1}.
    """

    def __init__(self, mesh: Mesh1D, mass: np.ndarray):
        self.mesh = mesh
        self.M = np.asarray(mass, dtype=float)
        if self.M.shape != (mesh.n_nodes, mesh.n_nodes):
            raise ValueError("mass matrix shape does not match the mesh")
        # upper-triangular R with R^T R = M
        self.R = scipy.linalg.cholesky(self.M, lower=False)
        self._m_cho = scipy.linalg.cho_factor(self.M, lower=False)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def inner(self, y: np.ndarray, z: np.ndarray) -> float:
        return float(y @ (self.M @ z))

    def norm(self, y: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(y, y), 0.0)))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Apply M^{-1} (converts assembled functionals to representers)."""
        return scipy.linalg.cho_solve(self._m_cho, b)

    def white_noise(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw R^{-1} n with n ~ N(0, I).

        The result has Euclidean covariance M^{-1}, i.e. identity
        covariance as an operator in the M inner product.
        """
        shape = self.n if size is None else (self.n, size)
        n = rng.standard_normal(shape)
        out = scipy.linalg.solve_triangular(self.R, n, lower=False)
        return out if size is None else out.T


def m_inner(y: np.ndarray, z: np.ndarray, space: WeightedSpace) -> float:
    """<y, z>_M = y^T M z."""
    return space.inner(y, z)


def mm_adjoint(B: np.ndarray, space: WeightedSpace) -> np.ndarray:
    """Adjoint of a map between weighted spaces: B* = M^{-1} B^T M."""
    B = np.asarray(B, dtype=float)
    if B.shape != (space.n, space.n):
        raise ValueError("mm_adjoint expects a square matrix on the space")
    return space.solve(B.T @ space.M)


def em_adjoint(V: np.ndarray, space: WeightedSpace) -> np.ndarray:
    """Adjoint of a basis map V: R^r (Euclidean) -> weighted space, V^T M."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != space.n:
        raise ValueError("basis map must have n rows")
    return V.T @ space.M


def assemble_mass(mesh: Mesh1D) -> WeightedSpace:
    """Assemble M_ij = ∫ φ_i φ_j dx for linear hat functions.

    Each element of length h contributes h/6 * [[2, 1], [1, 2]].
    """
    n = mesh.n_nodes
    h = mesh.element_lengths
    M = np.zeros((n, n))
    idx = np.arange(n - 1)
    np.add.at(M, (idx, idx), h / 3.0)
    np.add.at(M, (idx + 1, idx + 1), h / 3.0)
    np.add.at(M, (idx, idx + 1), h / 6.0)
    np.add.at(M, (idx + 1, idx), h / 6.0)
    return WeightedSpace(mesh, M)


def assemble_stiffness(mesh: Mesh1D, a: float, b: float) -> np.ndarray:
    """Assemble K_ij = ∫ [a φ_i' φ_j' + b φ_i φ_j] dx.

    a must be positive (the a = 0 limit loses the derivative term that
    makes K the precision of a well-defined smooth field); b may be zero
    for plain Laplacian stiffness.
    """
    if a <= 0.0:
        raise ValueError("diffusion coefficient a must be positive")
    if b < 0.0:
        raise ValueError("reaction coefficient b must be non-negative")
    n = mesh.n_nodes
    h = mesh.element_lengths
    K = np.zeros((n, n))
    idx = np.arange(n - 1)
    d = a / h + b * h / 3.0
    o = -a / h + b * h / 6.0
    np.add.at(K, (idx, idx), d)
    np.add.at(K, (idx + 1, idx + 1), d)
    np.add.at(K, (idx, idx + 1), o)
    np.add.at(K, (idx + 1, idx), o)
    return K


def assemble_weighted_mass(mesh: Mesh1D, coeff: np.ndarray) -> np.ndarray:
    """Assemble ∫ c φ_i φ_j dx with c the piecewise-linear interpolant of
    the nodal values `coeff` (exact cubic element integrals).

    With c ≡ 1 this reproduces the plain mass matrix.
    """
    c = np.asarray(coeff, dtype=float)
    n = mesh.n_nodes
    if c.shape != (n,):
        raise ValueError("coefficient must be a nodal vector")
    h = mesh.element_lengths
    cL, cR = c[:-1], c[1:]
    W = np.zeros((n, n))
    idx = np.arange(n - 1)
    np.add.at(W, (idx, idx), h * (3.0 * cL + cR) / 12.0)
    np.add.at(W, (idx + 1, idx + 1), h * (cL + 3.0 * cR) / 12.0)
    np.add.at(W, (idx, idx + 1), h * (cL + cR) / 12.0)
    np.add.at(W, (idx + 1, idx), h * (cL + cR) / 12.0)
    return W


def assemble_product_load(mesh: Mesh1D, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Assemble g_k = ∫ φ_k u_h v_h dx for piecewise-linear u_h, v_h.

    This is the load vector of the product of two mesh functions, again
    integrated exactly (the integrand is cubic on each element).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = mesh.n_nodes
    if u.shape != (n,) or v.shape != (n,):
        raise ValueError("u and v must be nodal vectors")
    h = mesh.element_lengths
    uL, uR = u[:-1], u[1:]
    vL, vR = v[:-1], v[1:]
    cross = uL * vR + uR * vL
    g = np.zeros(n)
    np.add.at(g, np.arange(n - 1),
              h * (3.0 * uL * vL + cross + uR * vR) / 12.0)
    np.add.at(g, np.arange(1, n),
              h * (uL * vL + cross + 3.0 * uR * vR) / 12.0)
    return g


def interpolation_matrix(mesh: Mesh1D, points: np.ndarray) -> np.ndarray:
    """Rows evaluate a mesh function at the given points (linear interp).

    Every point must lie inside the mesh interval.
    """
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    x = mesh.node_coords
    if pts.min() < x[0] - 1e-12 or pts.max() > x[-1] + 1e-12:
        raise ValueError("observation points must lie inside the mesh")
    pts = np.clip(pts, x[0], x[-1])
    B = np.zeros((pts.size, mesh.n_nodes))
    elem = np.clip(np.searchsorted(x, pts, side="right") - 1, 0, mesh.n_nodes - 2)
    t = (pts - x[elem]) / (x[elem + 1] - x[elem])
    rows = np.arange(pts.size)
    B[rows, elem] = 1.0 - t
    B[rows, elem + 1] = t
    return B
