"""Gaussian RKHS of vector fields on R^3.

A field is stored as momenta ``a_k`` attached to control points ``x_k``::

    v(p) = sum_k exp(-|p - x_k|^2 / sigma^2) a_k

so every inner product the discriminant model needs reduces to kernel sums.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DataError, DimensionMismatch, KernelMismatch, SingularSystem
from .mesh import TriangleMesh


@dataclass(frozen=True)
class KernelSpec:
    sigma: float
    family: str = "Gaussian"

    def __post_init__(self):
        if self.family != "Gaussian":
            raise DataError(f"unsupported kernel family {self.family!r}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DataError("kernel bandwidth must be positive")

    @classmethod
    def default_for(cls, mesh: TriangleMesh) -> "KernelSpec":
        """Bandwidth of 0.2 times the bounding-box diagonal of ``mesh``."""
        return cls(0.2 * mesh.bounding_box_diagonal)

    def matrix(self, p, q) -> np.ndarray:
        """Kernel matrix ``K[i, j] = k(p_i, q_j)``."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        q = np.atleast_2d(np.asarray(q, dtype=float))
        d2 = (p**2).sum(1)[:, None] + (q**2).sum(1)[None, :] - 2.0 * p @ q.T
        return np.exp(-np.maximum(d2, 0.0) / self.sigma**2)


def kernel_eval(spec: KernelSpec, p, q) -> float:
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return float(np.exp(-(d @ d) / spec.sigma**2))


@dataclass(frozen=True, eq=False)
class VectorFieldRepr:
    control_points: np.ndarray
    momenta: np.ndarray
    kernel: KernelSpec

    def __post_init__(self):
        x = np.array(self.control_points, dtype=float).reshape(-1, 3)
        a = np.array(self.momenta, dtype=float).reshape(-1, 3)
        if x.shape != a.shape:
            raise DimensionMismatch(f"{len(x)} control points but {len(a)} momenta")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(a))):
            raise DataError("vector field has non-finite entries")
        x.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "control_points", x)
        object.__setattr__(self, "momenta", a)

    def __call__(self, points) -> np.ndarray:
        """Evaluate the field at an (m, 3) array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.kernel.matrix(pts, self.control_points) @ self.momenta

    def scaled(self, c: float) -> "VectorFieldRepr":
        return VectorFieldRepr(self.control_points, c * self.momenta, self.kernel)

    def norm_squared(self) -> float:
        return float(inner(self, self))

    def to_dict(self) -> dict:
        return {
            "kernel": {"family": self.kernel.family, "sigma": self.kernel.sigma},
            "control_points": self.control_points.tolist(),
            "momenta": self.momenta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VectorFieldRepr":
        k = d["kernel"]
        return cls(d["control_points"], d["momenta"], KernelSpec(float(k["sigma"]), k.get("family", "Gaussian")))


def inner(u: VectorFieldRepr, v: VectorFieldRepr) -> float:
    """RKHS pairing ``sum_kl u.a_k^T K(u.x_k, v.x_l) v.a_l``."""
    if u.kernel != v.kernel:
        raise KernelMismatch("fields use different kernels")
    return float(np.einsum("kd,kl,ld->", u.momenta, u.kernel.matrix(u.control_points, v.control_points), v.momenta))


def _check_kernels(fields: Sequence[VectorFieldRepr]) -> KernelSpec:
    if not fields:
        raise DataError("no fields given")
    k = fields[0].kernel
    for i, f in enumerate(fields):
        if f.kernel != k:
            raise KernelMismatch(f"field {i} uses kernel {f.kernel}, expected {k}")
    return k


def _shared_points(fields: Sequence[VectorFieldRepr]) -> bool:
    x0 = fields[0].control_points
    return all(f.control_points.shape == x0.shape and np.array_equal(f.control_points, x0) for f in fields)


_POOL_LIMIT = 3000


def _pooled_momenta(fields: Sequence[VectorFieldRepr]):
    """Momenta of all fields on the union of their control points.

    Returns ``(points, momenta)`` with momenta of shape ``(n_fields, U, 3)``,
    or None if the union holds more than ``_POOL_LIMIT`` distinct points.
    """
    allpts = np.concatenate([f.control_points for f in fields])
    pts, inv = np.unique(allpts, axis=0, return_inverse=True)
    if pts.shape[0] > _POOL_LIMIT:
        return None
    inv = inv.reshape(-1)
    mom = np.zeros((len(fields), pts.shape[0], 3))
    start = 0
    for i, f in enumerate(fields):
        m = f.control_points.shape[0]
        np.add.at(mom[i], inv[start : start + m], f.momenta)
        start += m
    return pts, mom


def cross_gram(left: Sequence[VectorFieldRepr], right: Sequence[VectorFieldRepr]) -> np.ndarray:
    """Matrix of pairings ``G[i, j] = <left_i, right_j>``."""
    kernel = _check_kernels(list(left) + list(right))
    if _shared_points(list(left) + list(right)):
        K = kernel.matrix(left[0].control_points, left[0].control_points)
        A = np.stack([f.momenta for f in left])
        B = np.stack([f.momenta for f in right])
        return np.einsum("ikd,kl,jld->ij", A, K, B)
    pooled = _pooled_momenta(list(left) + list(right))
    if pooled is not None:
        pts, mom = pooled
        K = kernel.matrix(pts, pts)
        return np.einsum("ikd,kl,jld->ij", mom[: len(left)], K, mom[len(left) :])
    G = np.empty((len(left), len(right)))
    for i, u in enumerate(left):
        for j, v in enumerate(right):
            G[i, j] = inner(u, v)
    return G


def gram_matrix(fields: Sequence[VectorFieldRepr]) -> np.ndarray:
    """Symmetric Gram matrix of pairwise RKHS pairings."""
    G = cross_gram(fields, fields)
    return 0.5 * (G + G.T)


@dataclass(frozen=True, eq=False)
class GeometrySet:
    """Per-sample geometry fields together with their Gram matrix."""

    fields: tuple
    gram: np.ndarray

    @classmethod
    def from_fields(cls, fields: Sequence[VectorFieldRepr]) -> "GeometrySet":
        fields = tuple(fields)
        return cls(fields, gram_matrix(fields))

    def __len__(self) -> int:
        return len(self.fields)

    @property
    def kernel(self) -> KernelSpec:
        return self.fields[0].kernel

    def subset(self, index) -> "GeometrySet":
        index = np.asarray(index)
        return GeometrySet(tuple(self.fields[i] for i in index), self.gram[np.ix_(index, index)])

    def to_json(self) -> str:
        return json.dumps([f.to_dict() for f in self.fields])

    @classmethod
    def from_json(cls, text: str) -> "GeometrySet":
        return cls.from_fields([VectorFieldRepr.from_dict(d) for d in json.loads(text)])


def mean_field(fields: Sequence[VectorFieldRepr]) -> VectorFieldRepr:
    """Pointwise mean of fields.

    Fields sharing their control points are averaged momentum-wise; otherwise
    the control points are concatenated.
    """
    kernel = _check_kernels(fields)
    n = len(fields)
    if _shared_points(fields):
        return VectorFieldRepr(fields[0].control_points, np.mean([f.momenta for f in fields], axis=0), kernel)
    return VectorFieldRepr(
        np.concatenate([f.control_points for f in fields]), np.concatenate([f.momenta for f in fields]) / n, kernel
    )


def subtract(u: VectorFieldRepr, v: VectorFieldRepr) -> VectorFieldRepr:
    """The field ``u - v``."""
    if u.kernel != v.kernel:
        raise KernelMismatch("fields use different kernels")
    if u.control_points.shape == v.control_points.shape and np.array_equal(u.control_points, v.control_points):
        return VectorFieldRepr(u.control_points, u.momenta - v.momenta, u.kernel)
    return VectorFieldRepr(
        np.concatenate([u.control_points, v.control_points]), np.concatenate([u.momenta, -v.momenta]), u.kernel
    )


def combine(fields: Sequence[VectorFieldRepr], weights) -> VectorFieldRepr:
    """The linear combination ``sum_i w_i field_i``."""
    kernel = _check_kernels(fields)
    w = np.asarray(weights, dtype=float)
    if _shared_points(fields):
        return VectorFieldRepr(fields[0].control_points, np.einsum("i,ikd->kd", w, np.stack([f.momenta for f in fields])), kernel)
    return VectorFieldRepr(
        np.concatenate([f.control_points for f in fields]),
        np.concatenate([wi * f.momenta for wi, f in zip(w, fields)]),
        kernel,
    )


def farthest_point_sampling(points, m: int, start: int = 0) -> np.ndarray:
    """Indices of ``m`` points chosen greedily to be mutually far apart."""
    pts = np.asarray(points, dtype=float)
    if not 1 <= m <= len(pts):
        raise DataError(f"cannot sample {m} of {len(pts)} points")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(pts - pts[start], axis=1)
    for i in range(1, m):
        chosen[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(pts - pts[chosen[i]], axis=1))
    return chosen


def register_small_deformation(
    template_points, target_points, spec: KernelSpec, lam: float, subsample: int | None = None
) -> VectorFieldRepr:
    """Kernel ridge fit of the displacement from template to target landmarks.

    With ``phi_v(x) ~ x + v(x)`` the registration objective
    ``sum |x_l + v(x_l) - y_l|^2 + lam |v|^2`` restricted to control points
    drawn from the template is minimized by ``(K + lam I) A = Y - X``.
    ``subsample`` control points (default ``min(s, 500)``) are chosen by
    farthest-point sampling.
    """
    x = np.asarray(template_points, dtype=float).reshape(-1, 3)
    y = np.asarray(target_points, dtype=float).reshape(-1, 3)
    if x.shape != y.shape:
        raise DimensionMismatch(f"{len(x)} template landmarks but {len(y)} targets")
    if lam < 0:
        raise DataError("lambda must be non-negative")
    m = min(len(x), 500) if subsample is None else int(subsample)
    idx = np.arange(len(x)) if m == len(x) else farthest_point_sampling(x, m)
    ctrl = x[idx]
    disp = y[idx] - ctrl
    if not np.any(disp):
        return VectorFieldRepr(ctrl, np.zeros_like(ctrl), spec)
    if lam == 0 and len(np.unique(ctrl, axis=0)) < len(ctrl):
        raise SingularSystem("duplicated control points with lambda = 0")
    K = spec.matrix(ctrl, ctrl)
    K[np.diag_indices_from(K)] += lam
    try:
        factor = scipy.linalg.cho_factor(K)
    except np.linalg.LinAlgError:
        raise SingularSystem("kernel system is not positive definite") from None
    return VectorFieldRepr(ctrl, scipy.linalg.cho_solve(factor, disp), spec)


def flow_points(points, field: VectorFieldRepr, steps: int) -> np.ndarray:
    """Forward-Euler integration of ``dx/dt = v(x)`` over ``t in [0, 1]``."""
    if steps < 1:
        raise DataError("steps must be at least 1")
    x = np.array(points, dtype=float).reshape(-1, 3)
    if not np.any(field.momenta):
        return x
    dt = 1.0 / steps
    for _ in range(steps):
        x = x + dt * field(x)
    return x


def flow_deform(mesh: TriangleMesh, field: VectorFieldRepr, steps: int) -> TriangleMesh:
    """Move mesh vertices along the stationary flow of ``field``."""
    return mesh.with_vertices(flow_points(mesh.vertices, field, steps))
