"""Penalized least-squares discriminant analysis for functions on surfaces.

Two-class LDA is recast as regression of an auxiliary response
``y_i = -n/n1`` (class 0) or ``+n/n2`` (class 1) on the centered functional
samples. With ``X`` holding FE coefficients, ``Sigma`` the Gram matrix of the
centered geometry fields and ``D = S diag(m)^-1 S + eps M`` the smoothing
penalty, the coefficients solve

    min |y - Sigma cG - X M cF|^2 + lam1 cG' Sigma cG + lam2 cF' D cF

which is an ordinary least-squares problem in the stacked operator::

    [ Sigma            X M               ]        [ y ]
    [ 0                sqrt(lam2) L^-1/2 S ]  c  ~  [ 0 ]
    [ 0                sqrt(lam2 eps) R    ]        [ 0 ]
    [ sqrt(lam1) Sigma^1/2   0           ]        [ 0 ]

with ``L`` the lumped mass and ``R' R = M``. It is solved by LSQR without
forming the normal matrix. The geometry columns are dropped entirely when no
geometry is modeled.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from . import rkhs
from .errors import DataError, DimensionMismatch, MissingGeometry, NonPositivePenalty, SingleClassError
from .fem import FemOperators, penalty_value
from .rkhs import GeometrySet, VectorFieldRepr


class MaxIterationsWarning(RuntimeWarning):
    pass


def _as_labels(labels) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.ndim != 1:
        raise DataError("labels must be one-dimensional")
    if not np.all(np.isin(lab, (0, 1))):
        raise DataError("labels must be 0 (first class) or 1 (second class)")
    lab = lab.astype(np.int64)
    if lab.min() == lab.max():
        raise SingleClassError("both classes must be present")
    return lab


@dataclass(frozen=True, eq=False)
class LabeledFunctionalData:
    """Training sample: FE coefficient rows, 0/1 labels and optional geometry."""

    coeffs: np.ndarray
    labels: np.ndarray
    geometry: GeometrySet | None = None

    def __post_init__(self):
        X = np.array(self.coeffs, dtype=float)
        if X.ndim != 2:
            raise DimensionMismatch("coefficients must be an (n, s) matrix")
        lab = _as_labels(self.labels)
        if X.shape[0] != lab.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} coefficient rows but {lab.shape[0]} labels")
        if X.shape[0] < 2:
            raise DataError("at least two samples are required")
        if not np.all(np.isfinite(X)):
            raise DataError("coefficient rows must be finite")
        if self.geometry is not None and len(self.geometry) != X.shape[0]:
            raise DimensionMismatch(f"{len(self.geometry)} geometry fields for {X.shape[0]} samples")
        object.__setattr__(self, "coeffs", X)
        object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    def subset(self, index) -> "LabeledFunctionalData":
        index = np.asarray(index)
        geo = None if self.geometry is None else self.geometry.subset(index)
        return LabeledFunctionalData(self.coeffs[index], self.labels[index], geo)


def encode_labels(labels) -> np.ndarray:
    """Auxiliary response: ``-n/n1`` for class 0, ``+n/n2`` for class 1."""
    lab = _as_labels(labels)
    n = lab.size
    n2 = int(lab.sum())
    n1 = n - n2
    return np.where(lab == 0, -n / n1, n / n2)


def symmetric_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; eigenvalues below ``-1e-10 trace`` are an error, the rest clamped at 0."""
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    tr = abs(np.trace(a))
    if w.min() < -1e-10 * max(tr, np.finfo(float).tiny):
        raise DataError(f"Gram matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


class AugmentedOperator(LinearOperator):
    """Matrix-free action of the stacked least-squares operator.

    Unknowns are ordered ``(cG, cF)``; rows are data, differential penalty,
    shrinkage penalty and (bivariate only) geometry penalty.
    """

    def __init__(self, coeffs, ops: FemOperators, lambda2: float, gram=None, lambda1: float | None = None):
        X = np.asarray(coeffs, dtype=float)
        n, s = X.shape
        if s != ops.size:
            raise DimensionMismatch(f"samples have {s} coefficients, operators have size {ops.size}")
        if not lambda2 > 0:
            raise NonPositivePenalty("lambda2 must be positive")
        self.n, self.s = n, s
        self.XM = np.asarray((ops.mass @ X.T).T)
        self.sqrt_lam2 = float(np.sqrt(lambda2))
        self.pen_rows = sp.diags(1.0 / np.sqrt(ops.lumped_mass)) @ ops.stiffness
        self.pen_rows = self.pen_rows.tocsr()
        self.shrink = np.sqrt(lambda2 * ops.epsilon) * ops.mass_sqrt
        self.n_shrink = ops.mass_sqrt.shape[0]
        self.bivariate = gram is not None
        if self.bivariate:
            G = np.asarray(gram, dtype=float)
            if G.shape != (n, n):
                raise DimensionMismatch(f"Gram matrix of shape {G.shape} for {n} samples")
            if lambda1 is None or not lambda1 > 0:
                raise NonPositivePenalty("lambda1 must be positive when geometry is modeled")
            self.gram = G
            self.gram_sqrt = np.sqrt(lambda1) * symmetric_sqrt(G)
        self.ncols = (n if self.bivariate else 0) + s
        nrows = n + s + self.n_shrink + (n if self.bivariate else 0)
        super().__init__(dtype=np.float64, shape=(nrows, self.ncols))

    def split(self, x):
        """Split an unknown vector into ``(cG or None, cF)``."""
        x = np.asarray(x)
        if self.bivariate:
            return x[: self.n], x[self.n :]
        return None, x

    def rhs(self, y) -> np.ndarray:
        b = np.zeros(self.shape[0])
        b[: self.n] = y
        return b

    def _matvec(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        cg, cf = self.split(x)
        data = self.XM @ cf
        parts = [None, self.sqrt_lam2 * (self.pen_rows @ cf), self.shrink @ cf]
        if self.bivariate:
            data = data + self.gram @ cg
            parts.append(self.gram_sqrt @ cg)
        parts[0] = data
        return np.concatenate(parts)

    def _rmatvec(self, r):
        r = np.asarray(r, dtype=float).reshape(-1)
        n, s = self.n, self.s
        r_data = r[:n]
        r_pen = r[n : n + s]
        r_shr = r[n + s : n + s + self.n_shrink]
        cf = self.XM.T @ r_data + self.sqrt_lam2 * (self.pen_rows.T @ r_pen) + self.shrink.T @ r_shr
        if not self.bivariate:
            return cf
        r_geo = r[n + s + self.n_shrink :]
        cg = self.gram.T @ r_data + self.gram_sqrt.T @ r_geo
        return np.concatenate([cg, cf])

    def _adjoint(self):
        return LinearOperator(shape=self.shape[::-1], matvec=self._rmatvec, rmatvec=self._matvec, dtype=self.dtype)

    def to_dense(self) -> np.ndarray:
        """Materialize the operator (tests and small problems only)."""
        return np.column_stack([self._matvec(e) for e in np.eye(self.ncols)])


def build_augmented_system(data: LabeledFunctionalData, ops: FemOperators, lambda1, lambda2: float):
    """Operator and right-hand side for already-centered ``data``.

    ``lambda1`` is ignored when ``data`` carries no geometry; passing
    ``numpy.inf`` drops the geometry columns.
    """
    y = encode_labels(data.labels)
    gram = None
    if data.geometry is not None and not (lambda1 is not None and np.isinf(lambda1)):
        if lambda1 is None:
            raise DataError("lambda1 is required when geometry is present")
        gram = data.geometry.gram
    op = AugmentedOperator(data.coeffs, ops, lambda2, gram=gram, lambda1=lambda1)
    return op, op.rhs(y)


class LsqrInfo(NamedTuple):
    iterations: int
    residual: float
    normal_residual: float
    converged: bool
    reason: str


def lsqr_solve(operator, rhs, tol: float = 1e-10, max_iter: int | None = None):
    """Least-squares solution of ``operator @ x ~ rhs`` by LSQR.

    Golub-Kahan bidiagonalization; only products with the operator and its
    transpose are used. Stops when ``|r| <= tol (|b| + |A||x|)`` (compatible
    systems) or ``|A'r| <= tol |A||r|`` (least-squares optimality), where
    ``|A|`` is the running Frobenius-norm estimate.

    Returns
    -------
    x : ndarray
    info : LsqrInfo
        If ``max_iter`` is hit, ``info.converged`` is False, the last (best)
        iterate is returned and a :class:`MaxIterationsWarning` is issued.
    """
    m, n = operator.shape
    b = np.asarray(rhs, dtype=float).reshape(-1)
    if b.shape[0] != m:
        raise DimensionMismatch(f"right-hand side of length {b.shape[0]} for operator with {m} rows")
    if max_iter is None:
        max_iter = 10 * n
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, LsqrInfo(0, 0.0, 0.0, True, "zero right-hand side")

    u = b / bnorm
    v = operator.rmatvec(u)
    alpha = np.linalg.norm(v)
    if alpha == 0:
        return x, LsqrInfo(0, bnorm, 0.0, True, "right-hand side orthogonal to range")
    v = v / alpha
    w = v.copy()
    phibar, rhobar = bnorm, alpha
    anorm2 = alpha**2
    rnorm, arnorm = bnorm, alpha * bnorm

    for it in range(1, max_iter + 1):
        u = operator.matvec(v) - alpha * u
        beta = np.linalg.norm(u)
        if beta > 0:
            u = u / beta
        anorm2 += alpha**2 + beta**2
        v = operator.rmatvec(u) - beta * v
        alpha = np.linalg.norm(v)
        if alpha > 0:
            v = v / alpha

        rho = np.hypot(rhobar, beta)
        c, s = rhobar / rho, beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = s * phibar

        x = x + (phi / rho) * w
        w = v - (theta / rho) * w

        rnorm = phibar
        arnorm = phibar * alpha * abs(c)
        anorm = np.sqrt(anorm2)
        xnorm = np.linalg.norm(x)
        if rnorm <= tol * (bnorm + anorm * xnorm):
            return x, LsqrInfo(it, rnorm, arnorm, True, "residual tolerance")
        if arnorm <= tol * anorm * rnorm:
            return x, LsqrInfo(it, rnorm, arnorm, True, "normal-equation tolerance")
        if alpha == 0:
            return x, LsqrInfo(it, rnorm, arnorm, True, "exact breakdown")

    warnings.warn(f"LSQR stopped after {max_iter} iterations without converging", MaxIterationsWarning, stacklevel=2)
    return x, LsqrInfo(max_iter, rnorm, arnorm, False, "iteration limit")


class ThresholdChoice(NamedTuple):
    value: float
    degenerate: bool


def choose_threshold(scores, labels, criterion: str = "youden", q: float | None = None) -> ThresholdChoice:
    """Classification threshold for the rule ``score > t  =>  class 1``.

    ``criterion="youden"`` maximizes sensitivity + specificity - 1 and
    returns the midpoint of the first optimal interval (open ends are
    extended by the score range, or 1 if all scores tie). ``degenerate`` is
    set when no threshold beats chance. ``criterion="specificity"`` returns
    the smallest threshold with specificity at least ``q``.
    """
    sc = np.asarray(scores, dtype=float)
    lab = _as_labels(labels)
    if sc.shape != lab.shape:
        raise DimensionMismatch("scores and labels differ in length")
    neg, pos = sc[lab == 0], sc[lab == 1]

    if criterion in ("specificity", "fixed_specificity"):
        if q is None or not 0 < q <= 1:
            raise DataError("specificity level q must lie in (0, 1]")
        ordered = np.sort(neg)
        k = int(np.ceil(q * neg.size - 1e-9)) - 1
        return ThresholdChoice(float(ordered[max(k, 0)]), False)
    if criterion != "youden":
        raise DataError(f"unknown threshold criterion {criterion!r}")

    u = np.unique(sc)
    # candidate k = -1 is t < u[0]; candidate k >= 0 is t in [u[k], u[k+1])
    le_neg = np.searchsorted(np.sort(neg), u, side="right")
    le_pos = np.searchsorted(np.sort(pos), u, side="right")
    spec = np.concatenate([[0], le_neg]) / neg.size
    sens = 1.0 - np.concatenate([[0], le_pos]) / pos.size
    j = sens + spec - 1.0
    best = j.max()
    opt = np.isclose(j, best, rtol=0, atol=1e-12)
    start = int(np.argmax(opt))
    end = start
    while end + 1 < opt.size and opt[end + 1]:
        end += 1
    spread = max(u[-1] - u[0], 1.0) if u.size > 1 else 1.0
    lo = u[start - 1] if start >= 1 else u[0] - spread
    hi = u[end] if end < u.size else u[-1] + spread
    return ThresholdChoice(float(0.5 * (lo + hi)), bool(best <= 1e-12))


@dataclass(frozen=True, eq=False)
class DiscriminantModel:
    """Fitted discriminant directions and the statistics needed to score."""

    c_F: np.ndarray
    c_G: np.ndarray | None
    mean_coeffs: np.ndarray
    lambda1: float | None
    lambda2: float
    epsilon: float
    threshold: float
    solver: LsqrInfo
    train_scores: np.ndarray | None = None
    geometry: tuple | None = field(default=None, repr=False)
    mean_geometry: VectorFieldRepr | None = field(default=None, repr=False)

    @property
    def bivariate(self) -> bool:
        return self.c_G is not None

    def discriminant_field(self) -> VectorFieldRepr:
        """The geometric direction ``sum_i cG_i (v_i - vbar)`` as a field."""
        if not self.bivariate:
            raise MissingGeometry("model has no geometric component")
        return rkhs.combine(self.geometry, self.c_G)

    def predict(self, scores) -> np.ndarray:
        return (np.asarray(scores) > self.threshold).astype(np.int64)

    def to_dict(self) -> dict:
        d = {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "epsilon": self.epsilon,
            "threshold": self.threshold,
            "c_F": self.c_F.tolist(),
            "c_G": None if self.c_G is None else self.c_G.tolist(),
            "mean_coeffs": self.mean_coeffs.tolist(),
            "solver": {
                "iters": self.solver.iterations,
                "residual": self.solver.residual,
                "normal_residual": self.solver.normal_residual,
                "converged": self.solver.converged,
                "reason": self.solver.reason,
            },
            "train_scores": None if self.train_scores is None else self.train_scores.tolist(),
        }
        if self.bivariate:
            d["geometry"] = [f.to_dict() for f in self.geometry]
            d["mean_geometry"] = self.mean_geometry.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminantModel":
        sol = d.get("solver", {})
        info = LsqrInfo(
            int(sol.get("iters", 0)),
            float(sol.get("residual", np.nan)),
            float(sol.get("normal_residual", np.nan)),
            bool(sol.get("converged", True)),
            str(sol.get("reason", "")),
        )
        geo = d.get("geometry")
        return cls(
            c_F=np.asarray(d["c_F"], dtype=float),
            c_G=None if d.get("c_G") is None else np.asarray(d["c_G"], dtype=float),
            mean_coeffs=np.asarray(d["mean_coeffs"], dtype=float),
            lambda1=None if d.get("lambda1") is None else float(d["lambda1"]),
            lambda2=float(d["lambda2"]),
            epsilon=float(d["epsilon"]),
            threshold=float(d["threshold"]),
            solver=info,
            train_scores=None if d.get("train_scores") is None else np.asarray(d["train_scores"], dtype=float),
            geometry=None if geo is None else tuple(VectorFieldRepr.from_dict(g) for g in geo),
            mean_geometry=None if d.get("mean_geometry") is None else VectorFieldRepr.from_dict(d["mean_geometry"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=_json_float)

    @classmethod
    def from_json(cls, text: str) -> "DiscriminantModel":
        return cls.from_dict(json.loads(text))


def _json_float(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def center_geometry(geometry: GeometrySet):
    """Centered fields ``v_i - vbar``, their Gram matrix and ``vbar``."""
    vbar = rkhs.mean_field(geometry.fields)
    centered = tuple(rkhs.subtract(f, vbar) for f in geometry.fields)
    return GeometrySet.from_fields(centered), vbar


def fit(
    data: LabeledFunctionalData,
    ops: FemOperators,
    lambda2: float,
    lambda1: float | None = None,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> DiscriminantModel:
    """Fit the discriminant model.

    The univariate model is used when ``data`` has no geometry or
    ``lambda1`` is infinite. Sample means of coefficients (and fields) are
    stored and subtracted before solving; the threshold defaults to the
    Youden-optimal cut on the training scores.
    """
    xbar = data.coeffs.mean(axis=0)
    Xc = data.coeffs - xbar
    use_geometry = data.geometry is not None and not (lambda1 is not None and np.isinf(lambda1))
    centered, vbar = (None, None)
    if use_geometry:
        if lambda1 is None:
            raise DataError("lambda1 is required when geometry is present")
        centered, vbar = center_geometry(data.geometry)
    cdata = LabeledFunctionalData(Xc, data.labels, centered)
    op, rhs = build_augmented_system(cdata, ops, lambda1 if use_geometry else np.inf, lambda2)
    if max_iter is None:
        max_iter = 10 * (ops.size + data.n)
    x, info = lsqr_solve(op, rhs, tol=tol, max_iter=max_iter)
    c_G, c_F = op.split(x)
    train = op.XM @ c_F
    if use_geometry:
        train = train + centered.gram @ c_G
    thr = choose_threshold(train, data.labels)
    return DiscriminantModel(
        c_F=c_F,
        c_G=c_G,
        mean_coeffs=xbar,
        lambda1=float(lambda1) if use_geometry else None,
        lambda2=float(lambda2),
        epsilon=ops.epsilon,
        threshold=thr.value,
        solver=info,
        train_scores=train,
        geometry=centered.fields if use_geometry else None,
        mean_geometry=vbar,
    )


def geometry_pairings(model: DiscriminantModel, fields: Sequence[VectorFieldRepr]) -> np.ndarray:
    """Rows ``<v - vbar, v_i - vbar>`` against the centered training fields."""
    if not model.bivariate:
        raise MissingGeometry("model has no geometric component")
    centered = [rkhs.subtract(f, model.mean_geometry) for f in fields]
    return rkhs.cross_gram(centered, model.geometry)


def score_samples(model: DiscriminantModel, ops: FemOperators, coeffs, pairings=None) -> np.ndarray:
    """Scores ``(x - xbar)' M cF + pairing' cG`` for a batch of rows."""
    X = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if X.shape[1] != model.c_F.shape[0] or ops.size != model.c_F.shape[0]:
        raise DimensionMismatch(f"samples have {X.shape[1]} coefficients, model has {model.c_F.shape[0]}")
    out = (X - model.mean_coeffs) @ (ops.mass @ model.c_F)
    if model.bivariate:
        if pairings is None:
            raise MissingGeometry("bivariate model needs geometry pairings to score")
        P = np.atleast_2d(np.asarray(pairings, dtype=float))
        if P.shape != (X.shape[0], model.c_G.shape[0]):
            raise DimensionMismatch(f"pairings of shape {P.shape}, expected {(X.shape[0], model.c_G.shape[0])}")
        out = out + P @ model.c_G
    return out


def score(model: DiscriminantModel, ops: FemOperators, x_new, pairing=None) -> float:
    """Score of a single sample."""
    p = None if pairing is None else np.atleast_2d(pairing)
    return float(score_samples(model, ops, np.atleast_2d(x_new), p)[0])


def objective_value(model: DiscriminantModel, ops: FemOperators, data: LabeledFunctionalData) -> float:
    """Penalized least-squares objective (unnormalized) at the fitted coefficients."""
    y = encode_labels(data.labels)
    resid = y - model.train_scores
    val = resid @ resid + model.lambda2 * penalty_value(ops.with_epsilon(model.epsilon), model.c_F)
    if model.bivariate:
        G = rkhs.gram_matrix(model.geometry)
        val += model.lambda1 * model.c_G @ G @ model.c_G
    return float(val)


def lambda_reference(coeffs, ops: FemOperators) -> float:
    """Data-scaled reference value for ``lambda2`` grids."""
    X = np.asarray(coeffs, dtype=float)
    Xc = X - X.mean(axis=0)
    n = X.shape[0]
    data_scale = np.einsum("ij,ij->", Xc, (ops.mass @ Xc.T).T)
    return float(data_scale / (n * penalty_proxy(ops)))


def penalty_proxy(ops: FemOperators) -> float:
    """Mean diagonal of the penalty matrix ``D``."""
    S = ops.stiffness
    diag = np.asarray(S.multiply(S).multiply(1.0 / ops.lumped_mass[:, None]).sum(axis=0)).ravel()
    return float((diag + ops.epsilon * ops.mass.diagonal()).mean())
