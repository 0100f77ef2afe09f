"""Meshes and P1 finite element assembly.

Supports uniform interval meshes in 1D and the structured triangulation of
the unit square in which every grid cell is split along its lower-left to
upper-right diagonal.  All matrices are assembled for continuous piecewise
linear (P1) elements; the mass matrix is always lumped (row sums), which is
what the scheme's semi-inner product (u, v)^h requires.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, ConfigError

# A nodal field is just a vector of vertex values; no wrapper class.
NodalField = np.ndarray


@dataclass(frozen=True)
class Mesh:
    """Simplicial mesh of an interval or of the unit square.

    nodes has shape (U,) in 1D and (U, 2) in 2D; elements is an integer
    array of vertex indices, shape (E, 2) or (E, 3).  h is the largest
    element diameter.  grid_shape records the structured node grid,
    (n+1,) in 1D and (ny+1, nx+1) in 2D, so that ``field.reshape(grid_shape)``
    recovers the grid layout (node k = j*(nx+1) + i).
    """

    dimension: int
    nodes: np.ndarray
    elements: np.ndarray
    h: float
    grid_shape: tuple

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


@dataclass(frozen=True)
class LumpedMass:
    """Diagonal (lumped) mass matrix; entry k is the integral of hat k."""

    diag: np.ndarray

    def __post_init__(self):
        if np.any(self.diag <= 0.0):
            raise AssemblyError("lumped mass has nonpositive entries")

    @property
    def total(self) -> float:
        """Sum of the diagonal; equals the domain measure."""
        return float(self.diag.sum())

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.diag * v

    def solve(self, v: np.ndarray) -> np.ndarray:
        return v / self.diag

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Lumped semi-inner product (u, v)^h."""
        return float(np.dot(self.diag * u, v))


def build_interval_mesh(a: float, b: float, n_cells: int) -> Mesh:
    """Uniform mesh of [a, b] with n_cells elements."""
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise ConfigError(f"invalid interval bounds ({a}, {b})")
    if n_cells < 1:
        raise ConfigError("n_cells must be at least 1")
    nodes = np.linspace(a, b, n_cells + 1)
    idx = np.arange(n_cells)
    elements = np.column_stack([idx, idx + 1])
    return Mesh(1, nodes, elements, (b - a) / n_cells, (n_cells + 1,))


def build_friedrichs_keller(nx: int, ny: int) -> Mesh:
    """Structured triangulation of [0,1]^2: nx-by-ny cells, each split
    along the lower-left to upper-right diagonal into two triangles."""
    if nx < 1 or ny < 1:
        raise ConfigError("nx and ny must be at least 1")
    x = np.linspace(0.0, 1.0, nx + 1)
    y = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(x, y)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (jj * (nx + 1) + ii).ravel()
    n10 = n00 + 1
    n01 = n00 + (nx + 1)
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.vstack([lower, upper])
    h = float(np.hypot(1.0 / nx, 1.0 / ny))
    return Mesh(2, nodes, elements, h, (ny + 1, nx + 1))


def _element_measures(mesh: Mesh) -> np.ndarray:
    """Length (1D) or area (2D) of every element; rejects degenerate ones."""
    if mesh.dimension == 1:
        p = mesh.nodes[mesh.elements]
        meas = p[:, 1] - p[:, 0]
    else:
        p = mesh.nodes[mesh.elements]          # (E, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        meas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if np.any(meas <= 0.0):
        raise AssemblyError("degenerate (nonpositive measure) element")
    return meas


def assemble_lumped_mass(mesh: Mesh) -> LumpedMass:
    """Lumped mass: each element spreads its measure evenly on its vertices."""
    meas = _element_measures(mesh)
    n_vert = mesh.elements.shape[1]
    diag = np.zeros(mesh.n_nodes)
    np.add.at(diag, mesh.elements.ravel(),
              np.repeat(meas / n_vert, n_vert))
    return LumpedMass(diag)


def _element_stiffness(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-element stiffness matrices K (E, v, v) and element measures."""
    meas = _element_measures(mesh)
    if mesh.dimension == 1:
        k = np.array([[1.0, -1.0], [-1.0, 1.0]])
        K = k[None, :, :] / meas[:, None, None]
    else:
        p = mesh.nodes[mesh.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        # gradients of the barycentric coordinates (rows of the inverse
        # Jacobian); grad lambda_0 = -(grad lambda_1 + grad lambda_2)
        g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
        g0 = -(g1 + g2)
        G = np.stack([g0, g1, g2], axis=1)     # (E, 3, 2)
        K = np.einsum("eid,ejd->eij", G, G) * meas[:, None, None]
    return K, meas


def _scatter(mesh: Mesh, K: np.ndarray) -> sp.csr_matrix:
    n_vert = mesh.elements.shape[1]
    rows = np.repeat(mesh.elements, n_vert, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, n_vert)).ravel()
    A = sp.coo_matrix((K.ravel(), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    # element matrices are symmetric; make the assembled one exactly so
    return (A + A.T) * 0.5


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """P1 stiffness matrix S_ij = integral of grad(hat_i) . grad(hat_j)."""
    K, _ = _element_stiffness(mesh)
    return _scatter(mesh, K)


def assemble_weighted_stiffness(mesh: Mesh, coeff: NodalField) -> sp.csr_matrix:
    """Stiffness weighted by the P1 interpolant of a positive coefficient.

    Gradients are constant per element, so the interpolated coefficient
    integrates exactly to its vertex mean; the element matrix is that mean
    times the unweighted element stiffness.
    """
    coeff = np.asarray(coeff, dtype=float)
    if coeff.shape != (mesh.n_nodes,):
        raise AssemblyError("coefficient length does not match node count")
    if np.any(coeff <= 0.0) or not np.all(np.isfinite(coeff)):
        raise AssemblyError("coefficient must be positive and finite at every node")
    K, _ = _element_stiffness(mesh)
    w = coeff[mesh.elements].mean(axis=1)
    return _scatter(mesh, K * w[:, None, None])


def nodal_interpolate(mesh: Mesh, fn) -> NodalField:
    """Evaluate fn at the mesh nodes: fn(x) in 1D, fn(x, y) in 2D."""
    if mesh.dimension == 1:
        values = np.asarray(fn(mesh.nodes), dtype=float)
    else:
        values = np.asarray(fn(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float)
    values = np.broadcast_to(values, (mesh.n_nodes,)).astype(float)
    if not np.all(np.isfinite(values)):
        raise ValueError("function evaluated to non-finite values at mesh nodes")
    return values


def lumped_norm(field: NodalField, mass: LumpedMass) -> float:
    """Discrete L2 norm sqrt((v, v)^h)."""
    if field.shape != mass.diag.shape:
        raise ValueError("field and lumped mass lengths differ")
    return float(np.sqrt(np.dot(mass.diag, field * field)))
