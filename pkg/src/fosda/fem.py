"""Linear finite elements on triangle meshes.

Mass and stiffness matrices are assembled per triangle in fixed face order
and summed into CSR storage. The smoothing penalty
``D = S diag(m)^-1 S + eps M`` (``m`` the lumped mass) is only ever applied
as a sequence of sparse products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import DegenerateTriangle, DimensionMismatch
from .mesh import TriangleMesh

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_LOCAL_MASS_CHOL = np.linalg.cholesky(_LOCAL_MASS).T  # upper: R^T R = _LOCAL_MASS


def _scatter(mesh: TriangleMesh, local: np.ndarray) -> sp.csr_matrix:
    s = mesh.n_vertices
    f = mesh.faces
    rows = np.repeat(f, 3, axis=1).ravel()
    cols = np.tile(f, (1, 3)).ravel()
    a = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(s, s)).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    a.eliminate_zeros()
    return a


def _local_gradients(mesh: TriangleMesh):
    """Per-triangle area and in-plane gradients of the three hat functions.

    Gradients are computed in a local orthonormal 2D frame of each triangle.
    Returns ``area`` (f,) and ``grad`` (f, 3, 2).
    """
    v = mesh.vertices[mesh.faces]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    u = e1 / l1[:, None]
    n = np.cross(e1, e2)
    twice_area = np.linalg.norm(n, axis=1)
    w = np.cross(n / twice_area[:, None], u)
    # 2D coordinates: p0 = (0, 0), p1 = (l1, 0), p2 = (x2, y2)
    x2 = np.einsum("ij,ij->i", e2, u)
    y2 = np.einsum("ij,ij->i", e2, w)
    p = np.zeros((len(v), 3, 2))
    p[:, 1, 0] = l1
    p[:, 2, 0] = x2
    p[:, 2, 1] = y2
    grad = np.empty_like(p)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        d = p[:, k] - p[:, j]
        # opposite edge rotated counter-clockwise by 90 degrees, over 2 * area
        grad[:, i, 0] = -d[:, 1]
        grad[:, i, 1] = d[:, 0]
    grad /= twice_area[:, None, None]
    return 0.5 * twice_area, grad


def _check_degenerate(mesh: TriangleMesh, area: np.ndarray) -> None:
    e = mesh.edges
    mean_edge = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).mean()
    bad = area < 1e-12 * mean_edge**2
    if bad.any():
        raise DegenerateTriangle(f"face {int(np.flatnonzero(bad)[0])}: area below degeneracy threshold")


def assemble_mass(mesh: TriangleMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix, ``M_jk = int psi_j psi_k``."""
    area = mesh.face_areas
    return _scatter(mesh, area[:, None, None] * _LOCAL_MASS)


def assemble_stiffness(mesh: TriangleMesh) -> sp.csr_matrix:
    """P1 stiffness matrix, ``S_jk = int grad psi_j . grad psi_k``.

    Equivalent to the cotangent formula.
    """
    area, grad = _local_gradients(mesh)
    _check_degenerate(mesh, area)
    local = area[:, None, None] * np.einsum("fid,fjd->fij", grad, grad)
    return _scatter(mesh, local)


def mass_factor(mesh: TriangleMesh) -> sp.csr_matrix:
    """Sparse ``R`` of shape (3f, s) with ``R.T @ R == M``.

    Stacks the Cholesky factors of the per-triangle mass blocks, so it is as
    sparse as the mesh itself.
    """
    area = mesh.face_areas
    local = np.sqrt(area)[:, None, None] * _LOCAL_MASS_CHOL
    nf = mesh.n_faces
    rows = np.repeat(np.arange(3 * nf).reshape(nf, 3), 3, axis=1).ravel()
    cols = np.tile(mesh.faces, (1, 3)).ravel()
    r = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(3 * nf, mesh.n_vertices)).tocsr()
    r.eliminate_zeros()
    return r


def default_epsilon(mass: sp.spmatrix, stiffness: sp.spmatrix) -> float:
    """``1e-3 * trace(S) / trace(M)``."""
    return 1e-3 * float(stiffness.diagonal().sum() / mass.diagonal().sum())


@dataclass(frozen=True, eq=False)
class FemOperators:
    """Assembled operators on one mesh.

    ``mass_sqrt`` is any sparse factor with ``mass_sqrt.T @ mass_sqrt == mass``.
    """

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    lumped_mass: np.ndarray
    epsilon: float
    mass_sqrt: sp.csr_matrix = field(repr=False)

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, epsilon: float | None = None) -> "FemOperators":
        m = assemble_mass(mesh)
        s = assemble_stiffness(mesh)
        lumped = np.asarray(m.sum(axis=1)).ravel()
        eps = default_epsilon(m, s) if epsilon is None else float(epsilon)
        if eps < 0:
            raise ValueError("epsilon must be non-negative")
        return cls(m, s, lumped, eps, mass_factor(mesh))

    def with_epsilon(self, epsilon: float) -> "FemOperators":
        return FemOperators(self.mass, self.stiffness, self.lumped_mass, float(epsilon), self.mass_sqrt)


def _check(ops: FemOperators, *vecs):
    out = []
    for v in vecs:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != ops.size:
            raise DimensionMismatch(f"vector of length {v.shape[0]} on a basis of size {ops.size}")
        out.append(v)
    return out


def penalty_apply(ops: FemOperators, c) -> np.ndarray:
    """``S diag(m)^-1 S c + eps M c``, via three sparse products."""
    (c,) = _check(ops, c)
    sc = ops.stiffness @ c
    lm = ops.lumped_mass if sc.ndim == 1 else ops.lumped_mass[:, None]
    return ops.stiffness @ (sc / lm) + ops.epsilon * (ops.mass @ c)


def penalty_value(ops: FemOperators, c) -> float:
    """The roughness functional ``c^T D c`` of a coefficient vector."""
    (c,) = _check(ops, c)
    return float(c @ penalty_apply(ops, c))


def l2_inner(ops: FemOperators, a, b) -> float:
    """L2 inner product of two P1 functions, ``a^T M b``."""
    a, b = _check(ops, a, b)
    return float(a @ (ops.mass @ b))


def write_matrix_market(path, matrix: sp.spmatrix, comment: str = "") -> None:
    """Export a symmetric sparse matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(path, sp.coo_matrix(matrix), comment=comment, field="real", precision=17, symmetry="symmetric")
