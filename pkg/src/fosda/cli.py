"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 invalid data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .classifier import (
    DiscriminantModel,
    LabeledFunctionalData,
    choose_threshold,
    fit,
    geometry_pairings,
    score_samples,
)
from .errors import DataError, FosdaError, NumericalError
from .eval import ExperimentConfig, ResultTable, auc, available_cores, run_experiment
from .fem import FemOperators
from .mesh import icosphere, load_mesh, save_mesh
from .rkhs import GeometrySet, KernelSpec, VectorFieldRepr, flow_deform
from .simgen import (
    SimConfig,
    control_points_for,
    generate_dataset,
    generate_geometry,
    read_dataset_csv,
    write_dataset_csv,
)
from .spectral import laplace_beltrami_eigs


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _write_manifest(args, inputs, outputs, seeds, t0):
    target = args.manifest or (f"{outputs[0]}.manifest.json" if outputs else None)
    if target is None:
        return
    config = {k: _jsonable(v) for k, v in vars(args).items() if k not in ("func", "manifest")}
    manifest = {
        "command": args.command,
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.isfile(p)},
        "outputs": {p: _sha256(p) for p in outputs if os.path.isfile(p)},
        "wall_time": time.perf_counter() - t0,
    }
    with open(target, "w") as fh:
        json.dump(manifest, fh, indent=1)


def _ops_for(args, mesh_path):
    mesh = load_mesh(mesh_path)
    return mesh, FemOperators.from_mesh(mesh, args.epsilon)


def _load_geometry(path):
    if path is None:
        return None
    with open(path) as fh:
        return GeometrySet.from_json(fh.read())


# ----------------------------------------------------------------------------
# commands


def cmd_icosphere(args):
    mesh = icosphere(args.level, args.radius)
    save_mesh(mesh, args.output)
    print(f"wrote {args.output}: {mesh.n_vertices} vertices, {mesh.n_faces} faces")
    return [], [args.output], {}


def cmd_mesh_info(args):
    mesh = load_mesh(args.mesh)
    info = {
        "vertices": mesh.n_vertices,
        "edges": mesh.n_edges,
        "faces": mesh.n_faces,
        "euler_characteristic": mesh.euler_characteristic,
        "closed": mesh.is_closed,
        "area": mesh.area,
        "bounding_box_diagonal": mesh.bounding_box_diagonal,
    }
    text = json.dumps(info, indent=1)
    print(text)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    return [args.mesh], [args.output] if args.output else [], {}


def cmd_eig(args):
    _, ops = _ops_for(args, args.mesh)
    basis = laplace_beltrami_eigs(ops, args.k)
    out = args.output
    if out.lower().endswith(".json"):
        with open(out, "w") as fh:
            json.dump({"eigenvalues": basis.eigenvalues.tolist(), "eigenvectors": basis.eigenvectors.T.tolist()}, fh)
        outputs = [out]
    else:
        os.makedirs(out, exist_ok=True)
        outputs = [os.path.join(out, "eigenvalues.csv")]
        with open(outputs[0], "w") as fh:
            fh.write("index,eigenvalue\n")
            fh.writelines(f"{i},{v:.17g}\n" for i, v in enumerate(basis.eigenvalues))
        for i in range(basis.k):
            p = os.path.join(out, f"eigenvector_{i:04d}.csv")
            np.savetxt(p, basis.eigenvectors[:, i], fmt="%.17g")
            outputs.append(p)
    print(f"{basis.k} eigenpairs, largest eigenvalue {basis.eigenvalues[-1]:.6g}")
    return [args.mesh], outputs, {}


def cmd_simulate(args):
    if args.mesh:
        mesh = load_mesh(args.mesh)
    else:
        mesh = icosphere(args.level, args.radius)
    ops = FemOperators.from_mesh(mesh)
    config = SimConfig(
        n_per_group=args.n, alpha=args.alpha, n_basis=args.n_basis, mean_index=args.mean_index,
        sigma_exponent=args.sigma_exponent, seed=args.seed, mesh_level=args.level, mesh_radius=args.radius,
    )
    basis = laplace_beltrami_eigs(ops, config.n_basis + 1)
    data = generate_dataset(config, basis, start=args.start)
    write_dataset_csv(args.output, data)
    outputs = [args.output]
    with open(args.output + ".json", "w") as fh:
        sidecar = json.loads(config.to_json())
        sidecar["mesh"] = args.mesh
        sidecar["start"] = args.start
        fh.write(json.dumps(sidecar, indent=1))
    outputs.append(args.output + ".json")
    if args.geometry:
        spec = KernelSpec(args.sigma) if args.sigma else KernelSpec.default_for(mesh)
        shift = None
        if args.shift_scale:
            ctrl = control_points_for(mesh, args.n_control)
            mom = np.zeros_like(ctrl)
            mom[0] = [0.0, 0.0, 1.0]
            shift = VectorFieldRepr(ctrl, mom, spec).scaled(args.shift_scale)
        geo = generate_geometry(
            data.n, mesh, spec, args.momentum_scale, class_shift=shift, labels=data.labels,
            seed=args.seed, n_control=args.n_control,
        )
        with open(args.geometry, "w") as fh:
            fh.write(geo.to_json())
        outputs.append(args.geometry)
    print(f"wrote {data.n} samples of {data.coeffs.shape[1]} coefficients to {args.output}")
    return [args.mesh] if args.mesh else [], outputs, {"seed": args.seed}


def cmd_fit(args):
    _, ops = _ops_for(args, args.mesh)
    coeffs, labels = read_dataset_csv(args.data)
    if labels is None:
        raise DataError("dataset has no labels")
    geometry = _load_geometry(args.geometry)
    data = LabeledFunctionalData(coeffs, labels, geometry)
    lambda1 = args.lambda1
    if geometry is not None and lambda1 is None:
        raise DataError("--lambda1 is required with --geometry")
    model = fit(data, ops, args.lambda2, lambda1=lambda1, tol=args.tol, max_iter=args.max_iter)
    if not model.solver.converged:
        raise NumericalError(f"LSQR did not converge in {model.solver.iterations} iterations")
    with open(args.output, "w") as fh:
        fh.write(model.to_json())
    train_auc = auc(model.train_scores, data.labels)
    print(f"fitted in {model.solver.iterations} LSQR iterations; training AUC {train_auc:.4f}")
    return [args.mesh, args.data, args.geometry], [args.output], {}


def cmd_predict(args):
    _, ops = _ops_for(args, args.mesh)
    with open(args.model) as fh:
        model = DiscriminantModel.from_json(fh.read())
    ops = ops.with_epsilon(model.epsilon)
    coeffs, labels = read_dataset_csv(args.data)
    pairs = None
    if model.bivariate:
        geo = _load_geometry(args.geometry)
        if geo is None:
            raise DataError("bivariate model needs --geometry")
        pairs = geometry_pairings(model, geo.fields)
    scores = score_samples(model, ops, coeffs, pairs)
    pred = model.predict(scores)
    with open(args.output, "w") as fh:
        fh.write("score,predicted,label\n")
        for i, (s, p) in enumerate(zip(scores, pred)):
            lab = "" if labels is None else str(labels[i])
            fh.write(f"{s:.17g},{p},{lab}\n")
    if labels is not None and 0 < labels.sum() < labels.size:
        print(f"AUC {auc(scores, labels):.4f}")
    return [args.model, args.mesh, args.data, args.geometry], [args.output], {}


def cmd_threshold(args):
    arr = np.genfromtxt(args.scores, delimiter=",", names=True, dtype=float)
    choice = choose_threshold(arr["score"], arr["label"].astype(int), args.criterion, args.q)
    out = {"threshold": choice.value, "degenerate": choice.degenerate, "criterion": args.criterion, "q": args.q}
    text = json.dumps(out)
    print(text)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    return [args.scores], [args.output] if args.output else [], {}


def cmd_experiment(args):
    config = ExperimentConfig(
        alphas=tuple(args.alpha), n_list=tuple(args.n), replicates=args.replicates, test_size=args.test_size,
        lambda2_factors=tuple(np.logspace(-4, 2, 7).tolist()) if args.lambda2_factors is None else tuple(args.lambda2_factors),
        k_grid=tuple(args.k), base_seed=args.seed, mesh_level=args.level, n_basis=args.n_basis,
        mean_index=args.mean_index, sigma_exponent=args.sigma_exponent, epsilon=args.epsilon,
    )
    jobs = args.jobs if args.jobs else available_cores()
    table = run_experiment(config, jobs=jobs)
    table.write_csv(args.output, include_time=args.timing)
    outputs = [args.output]
    summary_path = args.summary or os.path.splitext(args.output)[0] + "_summary.json"
    with open(summary_path, "w") as fh:
        fh.write(table.summary_json())
    outputs.append(summary_path)
    if args.figure:
        from .plotting import auc_boxplot

        auc_boxplot(table, args.figure)
        outputs.append(args.figure)
    for row in table.summary():
        print(f"{row['method']:9s} alpha={row['alpha']:<5g} n={row['n']:<5d} AUC {row['mean_auc']:.4f} +- {row['sd_auc']:.4f}")
    failed = [r for r in table.rows if r.failed]
    for r in failed:
        print(f"failed: {r.method} alpha={r.alpha} n={r.n} replicate={r.replicate}: {r.error}", file=sys.stderr)
    return [], outputs, {"base_seed": args.seed}


def cmd_deform(args):
    template = load_mesh(args.mesh)
    with open(args.model) as fh:
        model = DiscriminantModel.from_json(fh.read())
    if not model.bivariate:
        raise DataError("model has no geometric component to deform along")
    direction = model.discriminant_field().scaled(args.c1)
    kernel = direction.kernel
    vbar = model.mean_geometry
    field = VectorFieldRepr(
        np.concatenate([vbar.control_points, direction.control_points]),
        np.concatenate([vbar.momenta, direction.momenta]),
        kernel,
    )
    deformed = flow_deform(template, field, args.steps)
    save_mesh(deformed, args.output)
    outputs = [args.output]
    if args.field_output:
        with open(args.field_output, "w") as fh:
            json.dump(field.to_dict(), fh)
        outputs.append(args.field_output)
    print(f"wrote {args.output}")
    return [args.mesh, args.model], outputs, {}


def cmd_plot(args):
    from .plotting import auc_boxplot

    auc_boxplot(ResultTable.read_csv(args.results), args.output, title=args.title)
    print(f"wrote {args.output}")
    return [args.results], [args.output], {}


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="fosda", description="Penalized functional LDA on triangulated surfaces.", formatter_class=fmt)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help, description=help, formatter_class=fmt)
        sp.set_defaults(func=func)
        sp.add_argument("--manifest", default=None, help="run manifest path (default: <output>.manifest.json)")
        return sp

    sp = add("icosphere", cmd_icosphere, "write a subdivided icosahedron mesh as OFF")
    sp.add_argument("--level", type=int, default=3, help="subdivision level (0-7)")
    sp.add_argument("--radius", type=float, default=1.0, help="sphere radius")
    sp.add_argument("-o", "--output", required=True, help="output OFF path")

    sp = add("mesh-info", cmd_mesh_info, "print mesh statistics")
    sp.add_argument("mesh", help="OFF or OBJ mesh")
    sp.add_argument("-o", "--output", default=None, help="also write the statistics as JSON")

    sp = add("eig", cmd_eig, "Laplace-Beltrami eigenpairs of a mesh")
    sp.add_argument("mesh", help="OFF or OBJ mesh")
    sp.add_argument("-k", type=int, default=41, help="number of eigenpairs")
    sp.add_argument("--epsilon", type=float, default=None, help="unused; accepted for operator consistency")
    sp.add_argument("-o", "--output", required=True, help="JSON bundle (*.json) or directory of CSV files")

    sp = add("simulate", cmd_simulate, "generate a two-group functional dataset")
    sp.add_argument("--mesh", default=None, help="mesh file (default: icosphere of --level/--radius)")
    sp.add_argument("--level", type=int, default=3, help="icosphere level when --mesh is not given")
    sp.add_argument("--radius", type=float, default=1.0, help="icosphere radius when --mesh is not given")
    sp.add_argument("--alpha", type=float, default=0.2, help="size of the mean shift")
    sp.add_argument("--n", type=int, default=128, help="samples per group")
    sp.add_argument("--n-basis", type=int, default=40, help="number of eigenfunctions")
    sp.add_argument("--mean-index", type=int, default=10, help="eigenfunction carrying the mean shift (1-based)")
    sp.add_argument("--sigma-exponent", type=float, default=1.0, help="score sd of mode j is j**-exponent")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--start", type=int, default=0, help="first sample counter (disjoint ranges are independent)")
    sp.add_argument("--geometry", default=None, help="also write random geometry fields to this JSON file")
    sp.add_argument("--momentum-scale", type=float, default=0.01, help="sd of geometry momenta")
    sp.add_argument("--shift-scale", type=float, default=0.0, help="geometry class shift added to group 2")
    sp.add_argument("--sigma", type=float, default=None, help="kernel bandwidth (default 0.2 x bbox diagonal)")
    sp.add_argument("--n-control", type=int, default=None, help="control points per field (default min(s, 50))")
    sp.add_argument("-o", "--output", required=True, help="dataset CSV")

    sp = add("fit", cmd_fit, "fit the discriminant model")
    sp.add_argument("data", help="dataset CSV (label, coefficients)")
    sp.add_argument("--mesh", required=True, help="mesh the coefficients live on")
    sp.add_argument("--lambda2", type=float, required=True, help="smoothing penalty weight")
    sp.add_argument("--lambda1", type=float, default=None, help="geometry penalty weight (required with --geometry)")
    sp.add_argument("--geometry", default=None, help="geometry fields JSON (one per sample)")
    sp.add_argument("--epsilon", type=float, default=None, help="shrinkage weight (default 1e-3 tr S / tr M)")
    sp.add_argument("--tol", type=float, default=1e-10, help="LSQR tolerance")
    sp.add_argument("--max-iter", type=int, default=None, help="LSQR iteration limit (default 10 (s + n))")
    sp.add_argument("-o", "--output", required=True, help="model JSON")

    sp = add("predict", cmd_predict, "score samples with a fitted model")
    sp.add_argument("model", help="model JSON")
    sp.add_argument("data", help="dataset CSV (label column may be empty)")
    sp.add_argument("--mesh", required=True, help="mesh the coefficients live on")
    sp.add_argument("--geometry", default=None, help="geometry fields JSON for bivariate models")
    sp.add_argument("--epsilon", type=float, default=None, help=argparse.SUPPRESS)
    sp.add_argument("-o", "--output", required=True, help="scores CSV")

    sp = add("threshold", cmd_threshold, "choose a classification threshold from scored samples")
    sp.add_argument("scores", help="CSV with 'score' and 'label' columns (as written by predict)")
    sp.add_argument("--criterion", choices=["youden", "specificity"], default="youden", help="selection rule")
    sp.add_argument("--q", type=float, default=None, help="target specificity for --criterion specificity")
    sp.add_argument("-o", "--output", default=None, help="also write the result as JSON")

    sp = add("experiment", cmd_experiment, "replicated FLDA vs FPCA+LDA simulation study")
    sp.add_argument("--alpha", type=float, nargs="+", default=[0.2, 0.4, 0.6], help="mean-shift sizes")
    sp.add_argument("--n", type=int, nargs="+", default=[128, 256], help="training samples per group")
    sp.add_argument("--replicates", type=int, default=10, help="replicates per cell")
    sp.add_argument("--test-size", type=int, default=2000, help="test samples (both groups)")
    sp.add_argument("--lambda2-factors", type=float, nargs="+", default=None,
                    help="lambda2 grid as multiples of the data-scaled reference (default 7 points 1e-4..1e2)")
    sp.add_argument("--k", type=int, nargs="+", default=[5, 10, 20, 40], help="baseline component grid")
    sp.add_argument("--level", type=int, default=3, help="icosphere level")
    sp.add_argument("--n-basis", type=int, default=40, help="number of eigenfunctions")
    sp.add_argument("--mean-index", type=int, default=10, help="eigenfunction carrying the mean shift")
    sp.add_argument("--sigma-exponent", type=float, default=1.0, help="score sd of mode j is j**-exponent")
    sp.add_argument("--epsilon", type=float, default=None, help="shrinkage weight (default 1e-3 tr S / tr M)")
    sp.add_argument("--seed", type=int, default=0, help="base seed")
    sp.add_argument("--jobs", type=int, default=0, help="worker processes (0: available cores)")
    sp.add_argument("--timing", action="store_true", help="record wall times in the CSV (breaks byte reproducibility)")
    sp.add_argument("--summary", default=None, help="summary JSON (default <output>_summary.json)")
    sp.add_argument("--figure", default=None, help="also render AUC box plots to this file (SVG/PNG/PDF)")
    sp.add_argument("-o", "--output", required=True, help="result table CSV")

    sp = add("deform", cmd_deform, "flow a template along mean geometry + c1 x discriminant field")
    sp.add_argument("model", help="bivariate model JSON")
    sp.add_argument("--mesh", required=True, help="template mesh")
    sp.add_argument("--c1", type=float, default=1.0, help="multiple of the discriminant field")
    sp.add_argument("--steps", type=int, default=100, help="Euler steps")
    sp.add_argument("--field-output", default=None, help="also write the flowed field as JSON")
    sp.add_argument("-o", "--output", required=True, help="deformed mesh OFF")

    sp = add("plot", cmd_plot, "AUC box plots from a result table")
    sp.add_argument("results", help="result table CSV")
    sp.add_argument("--title", default=None, help="figure title")
    sp.add_argument("-o", "--output", required=True, help="figure path (SVG/PNG/PDF)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            inputs, outputs, seeds = args.func(args)
        _write_manifest(args, inputs, outputs, seeds, t0)
    except (DataError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except FosdaError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
