import warnings

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from fosda.baseline import (
    fit_fpca_lda,
    fpca_fit,
    fpca_reconstruction_error,
    fpca_scores,
    lda_fit,
    lda_score,
)
from fosda.errors import DataError, DimensionMismatch
from fosda.eval import auc


def m_inner(ops, a, b):
    return a.T @ (ops.mass @ b)


def test_rank_one(ops1, rng):
    u = rng.standard_normal(ops1.size)
    u /= np.sqrt(m_inner(ops1, u, u))
    X = np.vstack([u, -u])
    with pytest.warns(RuntimeWarning):
        model = fpca_fit(X, ops1, 2)
    assert model.k == 1 and model.rank_deficient
    assert abs(m_inner(ops1, model.components[:, 0], u)) == pytest.approx(1.0, rel=1e-12)
    assert model.variances[0] == pytest.approx(1.0, rel=1e-12)


def test_components_m_orthonormal_and_variance_sum(ops2, rng):
    X = rng.standard_normal((30, ops2.size))
    model = fpca_fit(X, ops2, 29)
    np.testing.assert_allclose(m_inner(ops2, model.components, model.components), np.eye(29), atol=1e-10)
    Xc = X - X.mean(axis=0)
    total = np.einsum("ij,ij->", Xc, (ops2.mass @ Xc.T).T) / 30
    assert model.variances.sum() == pytest.approx(total, rel=1e-10)
    assert np.all(np.diff(model.variances) <= 0)


def test_span_recovery(ops2, basis2, rng):
    V = basis2.eigenvectors[:, 1:6]
    X = rng.standard_normal((50, 5)) * [5, 4, 3, 2, 1] @ V.T
    model = fpca_fit(X, ops2, 5)
    # M-orthonormal bases; compare spans in the M^{1/2} coordinates
    R = ops2.mass_sqrt
    angles = subspace_angles(R @ model.components, R @ V)
    assert angles.max() < 1e-6


def test_scores_centered_and_unit_component(ops2, rng):
    X = rng.standard_normal((20, ops2.size))
    model = fpca_fit(X, ops2, 5)
    Z = fpca_scores(model, ops2, X)
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(Z.var(axis=0), model.variances, rtol=1e-10)
    z = fpca_scores(model, ops2, model.mean_coeffs + model.components[:, 0])
    np.testing.assert_allclose(z[0], np.eye(5)[0], atol=1e-10)


def test_reconstruction_error_decreasing(ops2, rng):
    X = rng.standard_normal((25, ops2.size))
    errs = [fpca_reconstruction_error(fpca_fit(X, ops2, k), ops2, X) for k in (1, 3, 6, 12, 24)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-12 * errs[0]


def test_fpca_errors(ops1, rng):
    X = rng.standard_normal((5, ops1.size))
    with pytest.raises(DataError):
        fpca_fit(X, ops1, 0)
    with pytest.raises(DataError):
        fpca_fit(X, ops1, 6)
    with pytest.raises(DimensionMismatch):
        fpca_fit(X[:, 1:], ops1, 2)


def test_lda_one_dimensional():
    z = np.array([0.0, 1.0, 2.0, 4.0, 5.0, 6.0])
    lab = np.array([0, 0, 0, 1, 1, 1])
    model = lda_fit(z, lab, ridge=0.0)
    # pooled variance (2 + 2) / 4 = 1, mean difference 4
    assert model.weight[0] == pytest.approx(4.0)
    assert lda_score(model, np.array([[3.0]]))[0] == pytest.approx(0.0, abs=1e-12)


def test_lda_identical_means(rng):
    z = rng.standard_normal((10, 3))
    Z = np.vstack([z, z])
    model = lda_fit(Z, np.repeat([0, 1], 10))
    np.testing.assert_allclose(model.weight, 0, atol=1e-14)


def test_lda_affine_invariance(rng):
    Z = rng.standard_normal((40, 3))
    lab = np.repeat([0, 1], 20)
    Z[lab == 1] += [1.0, 0.5, 0.0]
    A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    b = rng.standard_normal(3)
    s1 = lda_score(lda_fit(Z, lab, ridge=0.0), Z)
    s2 = lda_score(lda_fit(Z @ A.T + b, lab, ridge=0.0), Z @ A.T + b)
    np.testing.assert_allclose(s1, s2, atol=1e-10)


def test_pipeline_order_invariance(ops1, rng):
    X = rng.standard_normal((30, ops1.size))
    lab = np.repeat([0, 1], 15)
    X[lab == 1] += 0.3
    perm = rng.permutation(30)
    a = fit_fpca_lda(X, lab, ops1, 5)
    b = fit_fpca_lda(X[perm], lab[perm], ops1, 5)
    np.testing.assert_allclose(a.score(ops1, X), b.score(ops1, X), atol=1e-10)


def test_pipeline_separates_rank_one_shift(ops1, rng):
    u = rng.standard_normal(ops1.size)
    lab = np.repeat([0, 1], 10)
    X = np.where(lab == 1, 1.0, -1.0)[:, None] * u + 0.01 * rng.standard_normal((20, ops1.size))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        model = fit_fpca_lda(X, lab, ops1, 1)
    assert auc(model.score(ops1, X), lab) == 1.0
