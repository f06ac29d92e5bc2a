import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fosda.errors import DegenerateTriangle, DimensionMismatch
from fosda.fem import (
    FemOperators,
    assemble_mass,
    assemble_stiffness,
    l2_inner,
    penalty_apply,
    penalty_value,
    write_matrix_market,
)
from fosda.mesh import TriangleMesh, icosphere, torus


def test_right_triangle_mass(right_triangle):
    expected = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24
    np.testing.assert_allclose(assemble_mass(right_triangle).toarray(), expected, atol=1e-12, rtol=0)


def test_right_triangle_stiffness(right_triangle):
    expected = np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])
    np.testing.assert_allclose(assemble_stiffness(right_triangle).toarray(), expected, atol=1e-12, rtol=0)


def test_stiffness_matches_cotangent_formula(sphere2):
    # independent route: S_ij = -(cot a + cot b) / 2 over the two opposite angles
    v, f = sphere2.vertices, sphere2.faces
    s = sphere2.n_vertices
    dense = np.zeros((s, s))
    for tri in f:
        for a in range(3):
            i, j, k = tri[a], tri[(a + 1) % 3], tri[(a + 2) % 3]
            u, w = v[j] - v[i], v[k] - v[i]
            cot = u @ w / np.linalg.norm(np.cross(u, w))
            dense[j, k] -= cot / 2
            dense[k, j] -= cot / 2
    dense[np.diag_indices(s)] = -dense.sum(axis=1)
    np.testing.assert_allclose(assemble_stiffness(sphere2).toarray(), dense, atol=1e-12)


def test_mass_sum_is_area(sphere2, rng):
    m = sphere2.with_vertices(sphere2.vertices * (1 + 0.1 * rng.random((sphere2.n_vertices, 1))))
    assert assemble_mass(m).sum() == pytest.approx(m.area, rel=1e-13)


def test_sphere_area(ops3):
    assert ops3.mass.sum() == pytest.approx(4 * np.pi, rel=5e-3)
    assert l2_inner(ops3, np.ones(642), np.ones(642)) == pytest.approx(4 * np.pi, rel=5e-3)


def test_operator_invariants(ops3):
    S, M = ops3.stiffness, ops3.mass
    assert abs(S - S.T).max() <= 1e-12 * abs(S).max()
    assert abs(M - M.T).max() <= 1e-12 * abs(M).max()
    assert np.abs(S @ np.ones(S.shape[0])).max() <= 1e-10
    assert np.linalg.eigvalsh(M.toarray()).min() > 0
    assert np.linalg.eigvalsh(S.toarray()).min() > -1e-10
    assert ops3.lumped_mass.sum() == pytest.approx(M.sum(), rel=1e-12)
    assert ops3.lumped_mass.sum() == pytest.approx(ops3.mass.sum(), rel=1e-12)
    for A in (S, M):
        assert np.all(np.diff(A.indices[A.indptr[0] : A.indptr[1]]) > 0)


def test_mass_factor(ops3):
    R = ops3.mass_sqrt
    assert abs(R.T @ R - ops3.mass).max() <= 1e-15


def test_stiffness_positive_on_coordinates(ops2, sphere2):
    z = sphere2.vertices[:, 2]
    assert z @ (ops2.stiffness @ z) > 0


def test_degree_one_rayleigh_quotient(ops3, sphere3):
    for c in sphere3.vertices.T:
        q = (c @ (ops3.stiffness @ c)) / (c @ (ops3.mass @ c))
        assert q == pytest.approx(2.0, rel=0.02)


def test_permutation_equivariance(sphere1, rng):
    perm = rng.permutation(sphere1.n_vertices)
    inv = np.argsort(perm)
    relabeled = TriangleMesh(sphere1.vertices[perm], inv[sphere1.faces])
    for assemble in (assemble_mass, assemble_stiffness):
        a = assemble(sphere1).toarray()
        b = assemble(relabeled).toarray()
        np.testing.assert_allclose(b, a[np.ix_(perm, perm)], atol=1e-14)


def test_degenerate_triangle():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0.5, 1e-9, 0]], [[0, 1, 2]], validate=False)
    m2 = TriangleMesh([[0, 0, 0], [1, 0, 0], [0.5, 1e-20, 0]], [[0, 1, 2]], validate=False)
    assemble_stiffness(m)
    with pytest.raises(DegenerateTriangle):
        assemble_stiffness(m2)


def test_penalty_constant(ops1):
    one = np.ones(ops1.size)
    np.testing.assert_allclose(penalty_apply(ops1.with_epsilon(0.0), one), 0, atol=1e-10)
    np.testing.assert_allclose(penalty_apply(ops1.with_epsilon(1.0), one), ops1.mass @ one, atol=1e-12)


def test_penalty_dense_oracle(ops1, rng):
    c = rng.standard_normal(ops1.size)
    S, M = ops1.stiffness.toarray(), ops1.mass.toarray()
    dense = S @ np.diag(1 / M.sum(axis=1)) @ S @ c + ops1.epsilon * M @ c
    np.testing.assert_allclose(penalty_apply(ops1, c), dense, rtol=0, atol=1e-12 * np.abs(dense).max())


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 42, elements=st.floats(-10, 10)))
def test_penalty_psd(c):
    ops = _ops1_eps0()
    v = penalty_value(ops, c)
    assert v >= -1e-10 * max(1.0, c @ c)
    if np.ptp(c) > 1e-3:
        assert v > 0


_cache = {}


def _ops1_eps0():
    if "ops" not in _cache:
        _cache["ops"] = FemOperators.from_mesh(icosphere(1), epsilon=0.0)
    return _cache["ops"]


def test_l2_inner(right_triangle, ops1, rng):
    ops = FemOperators.from_mesh(right_triangle)
    assert l2_inner(ops, np.ones(3), np.ones(3)) == pytest.approx(0.5, abs=1e-15)
    a, b = rng.standard_normal((2, ops1.size))
    assert l2_inner(ops1, np.zeros(ops1.size), b) == 0
    assert l2_inner(ops1, a, b) == pytest.approx(l2_inner(ops1, b, a), rel=1e-13)
    assert l2_inner(ops1, a, a) > 0


def test_dimension_mismatch(ops1):
    with pytest.raises(DimensionMismatch):
        penalty_apply(ops1, np.ones(3))
    with pytest.raises(DimensionMismatch):
        l2_inner(ops1, np.ones(3), np.ones(3))


def test_default_epsilon(ops2):
    expected = 1e-3 * ops2.stiffness.diagonal().sum() / ops2.mass.diagonal().sum()
    assert ops2.epsilon == pytest.approx(expected, rel=1e-14)


def test_torus_operators():
    ops = FemOperators.from_mesh(torus(10, 12))
    assert np.abs(ops.stiffness @ np.ones(120)).max() < 1e-10
    assert ops.mass.sum() == pytest.approx(4 * np.pi**2 * 0.4, rel=0.1)


def test_matrix_market_export(tmp_path, ops1):
    p = tmp_path / "S.mtx"
    write_matrix_market(p, ops1.stiffness)
    assert p.read_text().splitlines()[0] == "%%MatrixMarket matrix coordinate real symmetric"
    import scipy.io

    back = scipy.io.mmread(p).toarray()
    np.testing.assert_allclose(back, ops1.stiffness.toarray(), rtol=1e-15, atol=0)
