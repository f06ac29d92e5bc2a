"""Laplace-Beltrami eigenpairs from the generalized problem ``S e = theta M e``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceFailure, DataError
from .fem import FemOperators


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Ascending eigenvalues and M-orthonormal eigenvectors (one per column)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    def residuals(self, ops: FemOperators) -> np.ndarray:
        e = self.eigenvectors
        r = ops.stiffness @ e - (ops.mass @ e) * self.eigenvalues
        return np.linalg.norm(r, axis=0) / np.linalg.norm(e, axis=0)


def laplace_beltrami_eigs(ops: FemOperators, k: int) -> EigenBasis:
    """The ``k`` smallest generalized eigenpairs of the stiffness/mass pencil.

    Solved densely (Cholesky reduction of M followed by a symmetric
    eigendecomposition), which is deterministic and instant for a few
    thousand vertices. Each eigenvector is signed so that its first entry
    of non-negligible magnitude is positive.
    """
    s = ops.size
    if not 1 <= k <= s:
        raise DataError(f"k must lie in [1, {s}], got {k}")
    S = ops.stiffness.toarray()
    M = ops.mass.toarray()
    theta, vecs = scipy.linalg.eigh(S, M, subset_by_index=[0, k - 1], driver="gvx")
    theta = np.where(np.abs(theta) < 1e-12 * max(1.0, abs(theta[-1])), 0.0, theta)
    for j in range(k):
        col = vecs[:, j]
        first = np.flatnonzero(np.abs(col) > 1e-8 * np.abs(col).max())[0]
        if col[first] < 0:
            vecs[:, j] = -col
    basis = EigenBasis(theta, vecs)
    res = basis.residuals(ops)
    if np.any(res > 1e-8 * (1.0 + np.abs(theta))):
        raise ConvergenceFailure(f"eigenpair residuals too large: max {res.max():.3e}")
    return basis
