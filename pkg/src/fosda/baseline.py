"""FPCA followed by two-class LDA on the principal component scores."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .classifier import _as_labels
from .errors import DataError, DimensionMismatch, RankDeficiency, SingularCovariance
from .fem import FemOperators


@dataclass(frozen=True, eq=False)
class FpcaModel:
    components: np.ndarray  # (s, k), M-orthonormal columns
    variances: np.ndarray
    mean_coeffs: np.ndarray
    rank_deficient: bool = False

    @property
    def k(self) -> int:
        return self.components.shape[1]


def fpca_fit(coeffs, ops: FemOperators, k: int) -> FpcaModel:
    """Leading ``k`` principal components in the L2(M) inner product.

    Solved through the ``n x n`` dual problem ``G = X_c M X_c' / n``. If the
    centered data have numerical rank below ``k``, only the supported
    components are returned, ``rank_deficient`` is set and a warning issued.
    """
    X = np.asarray(coeffs, dtype=float)
    n, s = X.shape
    if s != ops.size:
        raise DimensionMismatch(f"samples have {s} coefficients, operators have size {ops.size}")
    if not 1 <= k <= min(n, s):
        raise DataError(f"k must lie in [1, {min(n, s)}], got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    XcM = (ops.mass @ Xc.T).T
    G = (Xc @ XcM.T) / n
    G = 0.5 * (G + G.T)
    w, U = np.linalg.eigh(G)
    w, U = w[::-1], U[:, ::-1]
    tol = max(w[0], 0.0) * max(n, s) * np.finfo(float).eps * 10
    rank = int(np.sum(w > tol))
    deficient = rank < k
    if deficient:
        warnings.warn(f"data support only {rank} components, {k} requested", RuntimeWarning, stacklevel=2)
        if rank == 0:
            raise RankDeficiency("centered data are identically zero")
        k = rank
    w, U = w[:k], U[:, :k]
    comps = Xc.T @ U / np.sqrt(n * w)
    # re-orthonormalize in the M inner product against round-off
    gram = comps.T @ (ops.mass @ comps)
    L = np.linalg.cholesky(0.5 * (gram + gram.T))
    comps = np.linalg.solve(L, comps.T).T
    for j in range(k):
        big = np.flatnonzero(np.abs(comps[:, j]) > 1e-8 * np.abs(comps[:, j]).max())[0]
        if comps[big, j] < 0:
            comps[:, j] *= -1
    return FpcaModel(comps, w.copy(), mean, deficient)


def fpca_scores(model: FpcaModel, ops: FemOperators, coeffs) -> np.ndarray:
    X = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if X.shape[1] != model.mean_coeffs.shape[0]:
        raise DimensionMismatch(f"samples have {X.shape[1]} coefficients, model has {model.mean_coeffs.shape[0]}")
    return (X - model.mean_coeffs) @ (ops.mass @ model.components)


def fpca_reconstruction_error(model: FpcaModel, ops: FemOperators, coeffs) -> float:
    """Mean squared M-norm of the residual after projection on the components."""
    X = np.atleast_2d(np.asarray(coeffs, dtype=float))
    Xc = X - model.mean_coeffs
    R = Xc - fpca_scores(model, ops, X) @ model.components.T
    return float(np.einsum("ij,ij->", R, (ops.mass @ R.T).T) / X.shape[0])


@dataclass(frozen=True, eq=False)
class LdaModel:
    weight: np.ndarray
    intercept: float
    priors: tuple
    ridge: float


def lda_fit(scores, labels, ridge: float | None = None) -> LdaModel:
    """Fisher discriminant ``w = (S_w + ridge I)^-1 (m1 - m0)``.

    ``S_w`` is the pooled within-class covariance. The default ridge is
    ``1e-8 trace(S_w) / k``; ``ridge=0`` disables it.
    """
    Z = np.asarray(scores, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    lab = _as_labels(labels)
    if Z.shape[0] != lab.shape[0]:
        raise DimensionMismatch("scores and labels differ in length")
    n, k = Z.shape
    z0, z1 = Z[lab == 0], Z[lab == 1]
    m0, m1 = z0.mean(axis=0), z1.mean(axis=0)
    within = (z0 - m0).T @ (z0 - m0) + (z1 - m1).T @ (z1 - m1)
    within /= max(n - 2, 1)
    if ridge is None:
        ridge = 1e-8 * np.trace(within) / k
    A = within + ridge * np.eye(k)
    try:
        w = np.linalg.solve(A, m1 - m0)
    except np.linalg.LinAlgError:
        raise SingularCovariance("pooled within-class covariance is singular") from None
    if not np.all(np.isfinite(w)):
        raise SingularCovariance("pooled within-class covariance is singular")
    return LdaModel(w, float(-w @ (m0 + m1) / 2), (len(z0) / n, len(z1) / n), float(ridge))


def lda_score(model: LdaModel, z) -> np.ndarray:
    """``w'(z - (m0 + m1)/2)``; larger means the second class."""
    Z = np.asarray(z, dtype=float)
    return Z @ model.weight + model.intercept


@dataclass(frozen=True, eq=False)
class FpcaLda:
    """The full baseline pipeline."""

    fpca: FpcaModel
    lda: LdaModel

    @property
    def k(self) -> int:
        return self.fpca.k

    def score(self, ops: FemOperators, coeffs) -> np.ndarray:
        return lda_score(self.lda, fpca_scores(self.fpca, ops, coeffs))


def fit_fpca_lda(coeffs, labels, ops: FemOperators, k: int) -> FpcaLda:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fp = fpca_fit(coeffs, ops, k)
    return FpcaLda(fp, lda_fit(fpca_scores(fp, ops, coeffs), labels))
