"""Synthetic two-group functional data on a Laplace-Beltrami eigenbasis.

Group 0 samples are ``sum_j w_j v_j`` and group 1 samples
``alpha v_mu + sum_j u_j v_j`` with independent ``N(0, sigma_j^2)`` scores.
``v_1 .. v_L`` are the eigenfunctions following the constant mode.

Scores are drawn from Philox streams keyed by ``(seed, group)`` whose
counter is set from the sample index, so every sample is reproducible on
its own, independently of how many other samples are drawn or in which
order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .classifier import LabeledFunctionalData
from .errors import BasisTooSmall, DataError
from .mesh import TriangleMesh
from .rkhs import GeometrySet, KernelSpec, VectorFieldRepr, farthest_point_sampling
from .spectral import EigenBasis


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the two-group generator.

    ``sigma_exponent`` gives the score standard deviations ``j**-exponent``
    unless explicit ``sigmas`` are supplied.
    """

    n_per_group: int = 128
    alpha: float = 0.2
    n_basis: int = 40
    mean_index: int = 10
    sigma_exponent: float = 1.0
    sigmas: tuple | None = None
    seed: int = 0
    mesh_level: int = 3
    mesh_radius: float = 1.0

    def __post_init__(self):
        if self.n_per_group < 1:
            raise DataError("n_per_group must be positive")
        if not 1 <= self.mean_index <= self.n_basis:
            raise DataError("mean_index must lie in [1, n_basis]")
        if self.alpha < 0:
            raise DataError("alpha must be non-negative")
        sig = self.score_sd()
        if np.any(sig <= 0) or np.any(np.diff(sig) > 0):
            raise DataError("score standard deviations must be positive and non-increasing")

    def score_sd(self) -> np.ndarray:
        if self.sigmas is not None:
            sig = np.asarray(self.sigmas, dtype=float)
            if sig.shape != (self.n_basis,):
                raise DataError(f"need {self.n_basis} standard deviations, got {sig.shape}")
            return sig
        return np.arange(1, self.n_basis + 1, dtype=float) ** (-self.sigma_exponent)

    def to_json(self) -> str:
        d = asdict(self)
        d["sigmas"] = None if self.sigmas is None else list(self.sigmas)
        return json.dumps(d, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        d = json.loads(text)
        if d.get("sigmas") is not None:
            d["sigmas"] = tuple(d["sigmas"])
        return cls(**d)


def _key(seed: int, group: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(group)]).generate_state(2, np.uint64)


def draw_scores(seed: int, group: int, samples, n_modes: int) -> np.ndarray:
    """Standard-normal scores, row ``i`` determined by ``(seed, group, samples[i])`` only."""
    key = _key(seed, group)
    out = np.empty((len(samples), n_modes))
    for row, i in enumerate(samples):
        bitgen = np.random.Philox(key=key, counter=np.array([int(i), 0, 0, 0], dtype=np.uint64))
        out[row] = np.random.Generator(bitgen).standard_normal(n_modes)
    return out


def modes(basis: EigenBasis, n_basis: int) -> np.ndarray:
    """The non-constant eigenvectors ``v_1 .. v_L`` as columns."""
    if basis.k < n_basis + 1:
        raise BasisTooSmall(f"basis has {basis.k} eigenpairs, need {n_basis + 1} (constant mode excluded)")
    return basis.eigenvectors[:, 1 : n_basis + 1]


def generate_dataset(config: SimConfig, basis: EigenBasis, start: int = 0) -> LabeledFunctionalData:
    """Draw ``n_per_group`` samples of each group.

    Rows are ordered group 0 then group 1; labels are 0 and 1. ``start``
    offsets the sample counter, so disjoint index ranges give independent
    draws under the same seed.
    """
    V = modes(basis, config.n_basis)
    sig = config.score_sd()
    idx = range(start, start + config.n_per_group)
    w = draw_scores(config.seed, 0, idx, config.n_basis) * sig
    u = draw_scores(config.seed, 1, idx, config.n_basis) * sig
    # row-wise products keep each sample bit-identical whatever the batch size
    x1 = np.array([V @ row for row in w]).reshape(-1, V.shape[0])
    x2 = np.array([V @ row for row in u]).reshape(-1, V.shape[0]) + config.alpha * V[:, config.mean_index - 1]
    labels = np.repeat([0, 1], config.n_per_group)
    return LabeledFunctionalData(np.vstack([x1, x2]), labels)


def generate_geometry(
    n: int,
    template: TriangleMesh,
    spec: KernelSpec,
    momentum_scale: float,
    class_shift: VectorFieldRepr | None = None,
    labels=None,
    seed: int = 0,
    n_control: int | None = None,
) -> GeometrySet:
    """Random geometry fields at farthest-point control points of ``template``.

    Momenta are i.i.d. ``N(0, momentum_scale^2)``. When ``class_shift`` is
    given, its momenta (which must live on the same control points) are added
    to every sample with label 1.
    """
    if momentum_scale < 0:
        raise DataError("momentum_scale must be non-negative")
    m = n_control if n_control is not None else min(template.n_vertices, 50)
    ctrl = template.vertices[farthest_point_sampling(template.vertices, m)]
    z = draw_scores(seed, 2, range(n), 3 * m).reshape(n, m, 3) * momentum_scale
    if class_shift is not None:
        if not np.array_equal(class_shift.control_points, ctrl) and class_shift.control_points.shape != ctrl.shape:
            raise DataError("class shift must use the generator's control points")
        lab = np.zeros(n, dtype=int) if labels is None else np.asarray(labels)
        z = z + (lab == 1)[:, None, None] * class_shift.momenta
    return GeometrySet.from_fields([VectorFieldRepr(ctrl, z[i], spec) for i in range(n)])


def control_points_for(template: TriangleMesh, n_control: int | None = None) -> np.ndarray:
    """Control points used by :func:`generate_geometry` for ``template``."""
    m = n_control if n_control is not None else min(template.n_vertices, 50)
    return template.vertices[farthest_point_sampling(template.vertices, m)]


# ----------------------------------------------------------------------------
# CSV


def write_dataset_csv(path, data: LabeledFunctionalData) -> None:
    s = data.coeffs.shape[1]
    with open(path, "w") as fh:
        fh.write("label," + ",".join(f"c{j}" for j in range(s)) + "\n")
        for lab, row in zip(data.labels, data.coeffs):
            fh.write(f"{lab}," + ",".join(f"{x:.17g}" for x in row) + "\n")


def read_dataset_csv(path):
    """Return ``(coeffs, labels)``; labels are None if the column is empty."""
    arr = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=float, ndmin=2)
    labels = arr[:, 0]
    coeffs = arr[:, 1:]
    if np.all(np.isnan(labels)):
        return coeffs, None
    return coeffs, labels.astype(np.int64)
