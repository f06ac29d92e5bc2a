"""AUC, validation-set model selection and the replicated simulation harness."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import rankdata

from .baseline import fit_fpca_lda
from .classifier import LabeledFunctionalData, _as_labels, fit, geometry_pairings, lambda_reference, score_samples
from .fem import FemOperators
from .mesh import icosphere
from .simgen import SimConfig, generate_dataset
from .spectral import EigenBasis, laplace_beltrami_eigs

METHODS = ("FLDA", "FPCA_LDA")
CSV_HEADER = ("method", "alpha", "n", "replicate", "lambda1", "lambda2", "k", "auc", "seconds")


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_1 > score_0) + P(tie) / 2."""
    sc = np.asarray(scores, dtype=float)
    lab = _as_labels(labels)
    ranks = rankdata(sc)
    n1 = int(lab.sum())
    n0 = lab.size - n1
    u = ranks[lab == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n0 * n1))


def sensitivity_specificity(scores, labels, threshold: float) -> tuple[float, float]:
    sc = np.asarray(scores, dtype=float)
    lab = _as_labels(labels)
    pred = sc > threshold
    return float(pred[lab == 1].mean()), float((~pred[lab == 0]).mean())


def default_lambda_grid(reference: float, points: int = 7) -> np.ndarray:
    return reference * np.logspace(-4, 2, points)


@dataclass
class GridResult:
    method: str
    params: dict
    model: object
    validation_auc: float
    table: list = field(default_factory=list)


def grid_search(
    train: LabeledFunctionalData,
    validation: LabeledFunctionalData,
    method: str,
    ops: FemOperators,
    lambda2_grid=None,
    k_grid=(5, 10, 20, 40),
    lambda1_grid=None,
    tol: float = 1e-10,
) -> GridResult:
    """Fit every grid point on ``train``, keep the best validation AUC.

    Ties go to the larger ``lambda2`` (FLDA) or the smaller ``k`` (baseline).
    For FLDA with geometry, ``lambda1_grid`` is searched jointly; ties
    there go to the larger ``lambda1``.
    """
    table = []
    if method == "FLDA":
        if lambda2_grid is None:
            lambda2_grid = default_lambda_grid(lambda_reference(train.coeffs, ops))
        l1s = [None] if train.geometry is None or lambda1_grid is None else list(lambda1_grid)
        best = None
        for l2 in sorted(lambda2_grid):
            for l1 in sorted(l1s, key=lambda v: -math.inf if v is None else v):
                model = fit(train, ops, l2, lambda1=l1, tol=tol)
                pairs = None
                if model.bivariate:
                    pairs = geometry_pairings(model, validation.geometry.fields)
                a = auc(score_samples(model, ops, validation.coeffs, pairs), validation.labels)
                table.append({"lambda1": l1, "lambda2": float(l2), "auc": a})
                if best is None or a >= best[0]:
                    best = (a, {"lambda1": l1, "lambda2": float(l2)}, model)
        return GridResult(method, best[1], best[2], best[0], table)
    if method == "FPCA_LDA":
        best = None
        for k in sorted(k_grid, reverse=True):
            k_eff = min(int(k), train.n)
            model = fit_fpca_lda(train.coeffs, train.labels, ops, k_eff)
            a = auc(model.score(ops, validation.coeffs), validation.labels)
            table.append({"k": int(k), "auc": a})
            if best is None or a >= best[0]:
                best = (a, {"k": int(k)}, model)
        return GridResult(method, best[1], best[2], best[0], table)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Replicated two-method comparison on simulated data.

    ``n_list`` holds training sizes per group; the validation set has the
    same size and the test set ``test_size`` samples in total.
    """

    alphas: tuple = (0.2, 0.4, 0.6)
    n_list: tuple = (128, 256)
    replicates: int = 10
    test_size: int = 2000
    lambda2_factors: tuple = tuple(np.logspace(-4, 2, 7).tolist())
    k_grid: tuple = (5, 10, 20, 40)
    methods: tuple = METHODS
    base_seed: int = 0
    mesh_level: int = 3
    mesh_radius: float = 1.0
    n_basis: int = 40
    mean_index: int = 10
    sigma_exponent: float = 1.0
    epsilon: float | None = None
    tol: float = 1e-10

    def __post_init__(self):
        if not (self.alphas and self.n_list and self.lambda2_factors and self.k_grid and self.methods):
            raise ValueError("grids must be non-empty")
        if self.replicates < 1 or self.test_size < 2 or min(self.n_list) < 1:
            raise ValueError("counts must be positive")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class ResultRow:
    method: str
    alpha: float
    n: int
    replicate: int
    lambda1: float | None
    lambda2: float | None
    k: int | None
    auc: float
    seconds: float
    failed: bool = False
    error: str = ""


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


@dataclass
class ResultTable:
    rows: list

    def to_csv(self, include_time: bool = False) -> str:
        """CSV text. Wall times are left blank unless ``include_time``, so
        reruns of the same configuration are byte-identical."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(
                [r.method, _fmt(r.alpha), r.n, r.replicate, _fmt(r.lambda1), _fmt(r.lambda2), _fmt(r.k),
                 "nan" if r.failed else _fmt(r.auc), _fmt(r.seconds) if include_time else ""]
            )
        return buf.getvalue()

    def write_csv(self, path, include_time: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv(include_time))

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        rows = []
        with open(path, newline="") as fh:
            for d in csv.DictReader(fh):
                opt = lambda s, f: None if s in ("", None) else f(s)  # noqa: E731
                a = float(d["auc"])
                rows.append(
                    ResultRow(d["method"], float(d["alpha"]), int(d["n"]), int(d["replicate"]),
                              opt(d["lambda1"], float), opt(d["lambda2"], float), opt(d["k"], int), a,
                              opt(d.get("seconds"), float) or float("nan"), failed=math.isnan(a))
                )
        return cls(rows)

    def cells(self) -> dict:
        """``(method, alpha, n) -> array of successful AUCs``."""
        out: dict = {}
        for r in self.rows:
            if not r.failed:
                out.setdefault((r.method, r.alpha, r.n), []).append(r.auc)
        return {k: np.asarray(v) for k, v in out.items()}

    def mean_auc(self, method: str, alpha: float, n: int) -> float:
        return float(self.cells()[(method, alpha, n)].mean())

    def summary(self) -> list:
        out = []
        for (m, a, n), v in sorted(self.cells().items()):
            out.append({"method": m, "alpha": a, "n": n, "count": int(v.size), "mean_auc": float(v.mean()),
                        "sd_auc": float(v.std(ddof=1)) if v.size > 1 else 0.0})
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=1)


def task_seed(base_seed: int, n: int, replicate: int, split: int) -> int:
    """Seed for one data split; shared across alphas (common random numbers)."""
    return int(np.random.SeedSequence([base_seed, n, replicate, split]).generate_state(1, np.uint64)[0])


@lru_cache(maxsize=4)
def _setup(level: int, radius: float, n_basis: int, epsilon):
    ops = FemOperators.from_mesh(icosphere(level, radius), epsilon)
    basis = laplace_beltrami_eigs(ops, n_basis + 1)
    return ops, basis


def _split(config: ExperimentConfig, basis: EigenBasis, alpha: float, n_per_group: int, seed: int):
    sim = SimConfig(
        n_per_group=n_per_group, alpha=alpha, n_basis=config.n_basis, mean_index=config.mean_index,
        sigma_exponent=config.sigma_exponent, seed=seed, mesh_level=config.mesh_level, mesh_radius=config.mesh_radius,
    )
    return generate_dataset(sim, basis)


def run_task(config: ExperimentConfig, alpha: float, n: int, replicate: int) -> list:
    """All methods for one ``(alpha, n, replicate)`` cell.

    Any failure, including in data generation, yields flagged rows rather
    than an exception.
    """
    try:
        ops, basis = _setup(config.mesh_level, config.mesh_radius, config.n_basis, config.epsilon)
        train = _split(config, basis, alpha, n, task_seed(config.base_seed, n, replicate, 0))
        valid = _split(config, basis, alpha, n, task_seed(config.base_seed, n, replicate, 1))
        test = _split(config, basis, alpha, config.test_size // 2, task_seed(config.base_seed, n, replicate, 2))
        setup_error = None
    except Exception as exc:
        setup_error = exc
    rows = []
    for method in config.methods:
        t0 = time.perf_counter()
        try:
            if setup_error is not None:
                raise setup_error
            if method == "FLDA":
                grid = np.asarray(config.lambda2_factors) * lambda_reference(train.coeffs, ops)
                res = grid_search(train, valid, "FLDA", ops, lambda2_grid=grid, tol=config.tol)
                a = auc(score_samples(res.model, ops, test.coeffs), test.labels)
                row = ResultRow(method, alpha, n, replicate, None, res.params["lambda2"], None, a, 0.0)
            else:
                res = grid_search(train, valid, "FPCA_LDA", ops, k_grid=config.k_grid)
                a = auc(res.model.score(ops, test.coeffs), test.labels)
                row = ResultRow(method, alpha, n, replicate, None, None, res.params["k"], a, 0.0)
        except Exception as exc:  # flagged row, run continues
            row = ResultRow(method, alpha, n, replicate, None, None, None, float("nan"), 0.0, True,
                            "".join(traceback.format_exception_only(type(exc), exc)).strip())
        row.seconds = time.perf_counter() - t0
        rows.append(row)
    return rows


def _run_task_args(args):
    return run_task(*args)


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ResultTable:
    """Run every ``(alpha, n, replicate)`` cell, optionally in a process pool.

    Rows are assembled in (alpha, n, replicate, method) order whatever the
    scheduling, and all randomness is derived from ``config.base_seed``.
    """
    tasks = [(config, a, n, r) for a in config.alphas for n in config.n_list for r in range(config.replicates)]
    if jobs <= 1:
        results = [run_task(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task_args, tasks, chunksize=1))
    return ResultTable([row for rows in results for row in rows])


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1
