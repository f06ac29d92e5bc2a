import json

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import erfi

from fosda.errors import KernelMismatch, SingularSystem
from fosda.mesh import icosphere
from fosda.rkhs import (
    GeometrySet,
    KernelSpec,
    VectorFieldRepr,
    combine,
    cross_gram,
    farthest_point_sampling,
    flow_deform,
    flow_points,
    gram_matrix,
    kernel_eval,
    mean_field,
    register_small_deformation,
    subtract,
)

SPEC = KernelSpec(0.7)


def brute_force_pairing(u, v):
    total = 0.0
    for xk, ak in zip(u.control_points, u.momenta):
        for xl, al in zip(v.control_points, v.momenta):
            d = xk - xl
            total += np.exp(-(d @ d) / u.kernel.sigma**2) * (ak @ al)
    return total


def random_field(rng, m=5, spec=SPEC):
    return VectorFieldRepr(rng.standard_normal((m, 3)), rng.standard_normal((m, 3)), spec)


def test_kernel_values(rng):
    p = rng.standard_normal(3)
    assert kernel_eval(SPEC, p, p) == 1.0
    d = rng.standard_normal(3)
    q = p + SPEC.sigma * d / np.linalg.norm(d)
    assert kernel_eval(SPEC, p, q) == pytest.approx(np.exp(-1), rel=1e-14)
    for _ in range(10):
        a, b = rng.standard_normal((2, 3))
        assert kernel_eval(SPEC, a, b) == kernel_eval(SPEC, b, a)
        assert 0 < kernel_eval(SPEC, a, b) <= 1


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(0.0)
    with pytest.raises(ValueError):
        KernelSpec(1.0, "Laplace")


def test_gram_single_point():
    a = np.array([1.0, -2.0, 0.5])
    f = VectorFieldRepr([[0.3, 0.1, 0.2]], [a], SPEC)
    np.testing.assert_allclose(gram_matrix([f]), [[a @ a]], rtol=1e-15)


def test_gram_identical_fields(rng):
    f = random_field(rng)
    G = gram_matrix([f, f])
    assert G[0, 0] == pytest.approx(G[0, 1], rel=1e-14)
    assert G[1, 1] == pytest.approx(G[0, 1], rel=1e-14)


def test_gram_brute_force(rng):
    fields = [random_field(rng) for _ in range(3)]
    G = gram_matrix(fields)
    oracle = np.array([[brute_force_pairing(u, v) for v in fields] for u in fields])
    np.testing.assert_allclose(G, oracle, atol=1e-12, rtol=0)


def test_gram_shared_points_path(rng):
    x = rng.standard_normal((6, 3))
    fields = [VectorFieldRepr(x, rng.standard_normal((6, 3)), SPEC) for _ in range(4)]
    oracle = np.array([[brute_force_pairing(u, v) for v in fields] for u in fields])
    np.testing.assert_allclose(gram_matrix(fields), oracle, atol=1e-12, rtol=0)


def test_gram_psd(rng):
    for _ in range(5):
        G = gram_matrix([random_field(rng, m=rng.integers(1, 8)) for _ in range(10)])
        assert np.abs(G - G.T).max() <= 1e-12 * np.abs(G).max()
        assert np.linalg.eigvalsh(G).min() >= -1e-10 * np.trace(G)


def test_kernel_mismatch(rng):
    with pytest.raises(KernelMismatch):
        gram_matrix([random_field(rng), random_field(rng, spec=KernelSpec(2.0))])


def test_field_algebra(rng):
    x = rng.standard_normal((4, 3))
    fields = [VectorFieldRepr(x, rng.standard_normal((4, 3)), SPEC) for _ in range(3)]
    mixed = [random_field(rng) for _ in range(3)]
    for fs in (fields, mixed):
        p = rng.standard_normal((7, 3))
        np.testing.assert_allclose(mean_field(fs)(p), np.mean([f(p) for f in fs], axis=0), atol=1e-13)
        np.testing.assert_allclose(subtract(fs[0], fs[1])(p), fs[0](p) - fs[1](p), atol=1e-13)
        w = rng.standard_normal(3)
        np.testing.assert_allclose(combine(fs, w)(p), sum(wi * f(p) for wi, f in zip(w, fs)), atol=1e-13)
        np.testing.assert_allclose(cross_gram(fs[:1], fs), gram_matrix(fs)[:1], atol=1e-12)


def test_geometry_set_json_roundtrip(rng):
    g = GeometrySet.from_fields([random_field(rng) for _ in range(3)])
    back = GeometrySet.from_json(g.to_json())
    np.testing.assert_array_equal(back.gram, g.gram)
    assert back.kernel == g.kernel
    d = json.loads(g.to_json())[0]
    assert set(d) == {"kernel", "control_points", "momenta"}
    assert d["kernel"] == {"family": "Gaussian", "sigma": 0.7}


def test_farthest_point_sampling():
    pts = icosphere(2).vertices
    idx = farthest_point_sampling(pts, 12)
    assert len(set(idx)) == 12 and idx[0] == 0
    d = np.linalg.norm(pts[idx][:, None] - pts[idx][None], axis=-1) + np.eye(12) * 9
    assert d.min() > 0.5


def test_registration_identity(rng):
    x = rng.standard_normal((10, 3))
    f = register_small_deformation(x, x, SPEC, 0.3)
    assert not np.any(f.momenta)


def test_registration_interpolates(rng):
    x = rng.standard_normal((10, 3))
    y = x + 0.1 * rng.standard_normal((10, 3))
    f = register_small_deformation(x, y, SPEC, 0.0)
    np.testing.assert_allclose(x + f(x), y, atol=1e-8)


def test_registration_single_landmark():
    d = np.array([0.2, -0.4, 1.0])
    f = register_small_deformation([[0, 0, 0]], [d], SPEC, 1.0)
    np.testing.assert_allclose(f.momenta[0], d / 2, rtol=1e-15)


def test_registration_singular():
    x = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]], dtype=float)
    with pytest.raises(SingularSystem):
        register_small_deformation(x, x + 0.1, SPEC, 0.0)


def test_registration_norm_decreases_with_lambda(rng):
    x = rng.standard_normal((20, 3))
    y = x + 0.2 * rng.standard_normal((20, 3))
    norms = [register_small_deformation(x, y, SPEC, lam).norm_squared() for lam in [1e-3, 1e-2, 0.1, 1, 10]]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_registration_subsample():
    m = icosphere(2)
    f = register_small_deformation(m.vertices, 1.1 * m.vertices, KernelSpec(0.5), 1e-3, subsample=30)
    assert f.control_points.shape == (30, 3)
    f_all = register_small_deformation(m.vertices, 1.1 * m.vertices, KernelSpec(0.5), 1e-3)
    assert f_all.control_points.shape == (162, 3)


def test_zero_flow_is_identity():
    m = icosphere(2)
    f = VectorFieldRepr(m.vertices[:5], np.zeros((5, 3)), SPEC)
    assert np.array_equal(flow_deform(m, f, 7).vertices, m.vertices)


def test_single_step_flow(rng):
    m = icosphere(1)
    f = random_field(rng).scaled(0.05)
    out = flow_deform(m, f, 1)
    np.testing.assert_array_equal(out.vertices, m.vertices + f(m.vertices))
    np.testing.assert_array_equal(out.faces, m.faces)


def analytic_single_kernel_flow(sigma, speed):
    """Distance travelled by the control point: solves (sigma sqrt(pi)/2) erfi(r/sigma) = speed."""
    target = 2 * speed / (sigma * np.sqrt(np.pi))
    return sigma * brentq(lambda u: erfi(u) - target, 0.0, 10.0, xtol=1e-15, rtol=1e-15)


def test_flow_first_order_against_analytic():
    a = np.array([0.3, 0.4, 0.0])  # |a| = 0.5
    x0 = np.array([0.1, -0.2, 0.3])
    f = VectorFieldRepr([x0], [a], SPEC)
    exact = x0 + analytic_single_kernel_flow(SPEC.sigma, 0.5) * a / 0.5
    err = {k: np.linalg.norm(flow_points([x0], f, k)[0] - exact) for k in (10, 100, 1000)}
    assert 8.0 < err[10] / err[100] < 12.0
    assert 8.0 < err[100] / err[1000] < 12.0


def test_flow_round_trip(rng):
    m = icosphere(1)
    f = random_field(rng).scaled(0.2)
    devs = []
    for steps in (4, 16, 64):
        back = flow_deform(flow_deform(m, f, steps), f.scaled(-1.0), steps)
        devs.append(np.abs(back.vertices - m.vertices).max())
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 0.05


def test_flow_rejects_zero_steps():
    with pytest.raises(ValueError):
        flow_points(np.zeros((1, 3)), VectorFieldRepr([[0, 0, 0]], [[1, 0, 0]], SPEC), 0)


def test_gram_pairwise_fallback_agrees(rng, monkeypatch):
    import fosda.rkhs as rkhs_mod

    fields = [random_field(rng) for _ in range(4)]
    pooled = gram_matrix(fields)
    monkeypatch.setattr(rkhs_mod, "_POOL_LIMIT", 0)
    np.testing.assert_allclose(gram_matrix(fields), pooled, atol=1e-12, rtol=0)
