import numpy as np
import pytest

from fosda.errors import DataError
from fosda.fem import FemOperators
from fosda.mesh import TriangleMesh, icosphere, torus
from fosda.spectral import laplace_beltrami_eigs


def test_constant_mode(ops3):
    b = laplace_beltrami_eigs(ops3, 1)
    assert abs(b.eigenvalues[0]) <= 1e-8
    e = b.eigenvectors[:, 0]
    assert np.ptp(e) <= 1e-8 * np.abs(e).max()
    assert e[0] > 0


def test_sphere_clusters(basis3):
    theta = basis3.eigenvalues
    np.testing.assert_allclose(theta[1:4], 2.0, rtol=0.02)
    np.testing.assert_allclose(theta[4:9], 6.0, rtol=0.03)
    np.testing.assert_allclose(theta[9:16], 12.0, rtol=0.05)


def test_postconditions(ops3, basis3):
    e = basis3.eigenvectors
    np.testing.assert_allclose(e.T @ (ops3.mass @ e), np.eye(basis3.k), atol=1e-8)
    assert np.all(np.diff(basis3.eigenvalues) >= 0)
    assert np.all(basis3.residuals(ops3) <= 1e-8 * (1 + basis3.eigenvalues))


def test_torus_three(rng):
    ops = FemOperators.from_mesh(torus(10, 12))
    b = laplace_beltrami_eigs(ops, 3)
    np.testing.assert_allclose(b.eigenvectors.T @ (ops.mass @ b.eigenvectors), np.eye(3), atol=1e-8)
    assert np.all(np.diff(b.eigenvalues) >= 0)


def test_relabeling_invariance(rng):
    m = icosphere(2)
    m = m.with_vertices(m.vertices * (1 + 0.1 * rng.random((m.n_vertices, 1))))
    perm = rng.permutation(m.n_vertices)
    relabeled = TriangleMesh(m.vertices[perm], np.argsort(perm)[m.faces])
    a = laplace_beltrami_eigs(FemOperators.from_mesh(m), 12).eigenvalues
    b = laplace_beltrami_eigs(FemOperators.from_mesh(relabeled), 12).eigenvalues
    np.testing.assert_allclose(b[1:], a[1:], rtol=1e-8)


def test_scaling(sphere2):
    a = laplace_beltrami_eigs(FemOperators.from_mesh(sphere2), 10).eigenvalues
    b = laplace_beltrami_eigs(FemOperators.from_mesh(sphere2.with_vertices(3.0 * sphere2.vertices)), 10).eigenvalues
    np.testing.assert_allclose(b[1:], a[1:] / 9.0, rtol=1e-8)


def test_deterministic(ops2):
    a = laplace_beltrami_eigs(ops2, 20)
    b = laplace_beltrami_eigs(ops2, 20)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigenvectors, b.eigenvectors)


def test_k_out_of_range(ops1):
    with pytest.raises(DataError):
        laplace_beltrami_eigs(ops1, 0)
    with pytest.raises(DataError):
        laplace_beltrami_eigs(ops1, ops1.size + 1)
