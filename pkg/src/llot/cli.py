"""Batch command line: ``llot {fit,predict,locate,deconvolve,cv,simulate}``.

Exit codes: 0 success, 2 bad arguments, 3 data errors, 4 solver errors,
5 cross-validation finished with failed folds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import __version__
from .data import SolverConfig
from .errors import DataError, LlotError, SolverError
from .ingest import PreprocessSpec, load_single_cell, load_spatial

log = logging.getLogger("llot")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER, EXIT_FOLDS = 0, 2, 3, 4, 5

# flag name -> SolverConfig field
SOLVER_FLAGS = {
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "iters": "outer_iterations",
    "knn": "knn_k",
    "mode": "regression_mode",
    "batch": "batch_size",
    "seed": "rng_seed",
    "tolerance": "sinkhorn_tolerance",
    "max_sinkhorn": "sinkhorn_max_iterations",
    "memory_budget": "memory_budget_gb",
}
PREPROCESS_FLAGS = {"log1p": "log_transform", "min_cells": "min_cells_per_gene", "standardize": "standardize"}


class UsageError(Exception):
    pass


def fingerprint(path) -> dict:
    p = Path(path)
    h = hashlib.blake2b(digest_size=8)
    with open(p, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return {"path": str(p), "size": p.stat().st_size, "hash": h.hexdigest()}


def run_manifest(command: str, resolved: dict, inputs: list, seed, started: float) -> dict:
    return {
        "command": command,
        "resolved_config": resolved,
        "inputs": [fingerprint(p) for p in inputs if p is not None],
        "tool_version": __version__,
        "wall_clock_seconds": time.perf_counter() - started,
        "seed": seed,
    }


def _load_toml(path):
    if path is None:
        return {}
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"--config {path}: {exc}") from None


def resolve_config(args) -> tuple[SolverConfig, PreprocessSpec]:
    """Flags override the TOML file, which overrides built-in defaults."""
    table = _load_toml(getattr(args, "config", None))
    solver_keys = {f.name for f in fields(SolverConfig)}
    pre_keys = {"log_transform", "min_cells_per_gene", "standardize"}
    unknown = set(table) - solver_keys - pre_keys - {"solver", "preprocess"}
    if unknown:
        raise UsageError(f"--config: unknown keys {sorted(unknown)}")
    flat = {**table.get("solver", {}), **table.get("preprocess", {}),
            **{k: v for k, v in table.items() if not isinstance(v, dict)}}
    solver = {k: v for k, v in flat.items() if k in solver_keys}
    pre = {k: v for k, v in flat.items() if k in pre_keys}
    for flag, name in SOLVER_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            solver[name] = value
    for flag, name in PREPROCESS_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            pre[name] = value
    try:
        return SolverConfig(**solver), PreprocessSpec(**pre)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _add_solver_flags(p, mode_flag="--mode"):
    g = p.add_argument_group("solver (lambda1 weights entropy, lambda2 the Laplacian term; "
                             "some texts use the opposite naming)")
    g.add_argument("--lambda1", type=float, help="entropy weight (default: from initial cost)")
    g.add_argument("--lambda2", type=float, help="Laplacian weight (default: from initial cost)")
    g.add_argument("--iters", type=int, help="outer iterations (default 20)")
    g.add_argument("--knn", type=int, help="neighbours in the spot graph (default 6)")
    g.add_argument("--batch", type=int, help="pairs sampled per stochastic regression")
    g.add_argument(mode_flag, dest="mode", choices=["weighted", "stochastic", "auto"],
                   help="platform-map regression (default auto)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--tolerance", type=float, help="Sinkhorn marginal tolerance")
    g.add_argument("--max-sinkhorn", dest="max_sinkhorn", type=int, help="Sinkhorn sweep limit")
    g.add_argument("--memory-budget", dest="memory_budget", type=float,
                   help="max coupling size in GiB (env LLOT_MEMORY_BUDGET_GB wins)")
    g.add_argument("--config", help="TOML file with solver/preprocess defaults")
    pre = p.add_argument_group("preprocessing")
    pre.add_argument("--log1p", dest="log1p", action="store_true", default=None)
    pre.add_argument("--no-log1p", dest="log1p", action="store_false")
    pre.add_argument("--min-cells", dest="min_cells", type=int)
    pre.add_argument("--standardize", dest="standardize", action="store_true", default=None)


def _add_inputs(p, celltypes=False):
    p.add_argument("--spatial", required=True, help="spot x gene expression CSV/TSV/MTX")
    p.add_argument("--coords", required=True, help="spot coordinates CSV (id,x,y)")
    p.add_argument("--scrna", required=True, help="cell x gene expression CSV/TSV/MTX")
    p.add_argument("--spatial-genes-as-rows", action="store_true", help="spatial file is gene x spot")
    p.add_argument("--scrna-genes-as-rows", action="store_true", help="scRNA file is gene x cell")
    if celltypes:
        p.add_argument("--celltypes", help="cell-type labels CSV (id,label)")


def _orientation(flag: bool) -> str:
    return "rows_are_genes" if flag else "rows_are_observations"


def _load_pair(args, pre: PreprocessSpec):
    spatial = load_spatial(args.spatial, args.coords, pre, _orientation(args.spatial_genes_as_rows))
    cells = load_single_cell(args.scrna, getattr(args, "celltypes", None), pre,
                             _orientation(args.scrna_genes_as_rows))
    return spatial, cells


def cmd_fit(args) -> int:
    from .model_io import save_model
    from .solver import fit

    started = time.perf_counter()
    config, pre = resolve_config(args)
    spatial, cells = _load_pair(args, pre)
    model = fit(spatial, cells, config, provenance={"preprocessing": pre.as_dict()})
    inputs = [args.spatial, args.coords, args.scrna, args.celltypes]
    resolved = {"solver": config.as_dict(), "preprocessing": pre.as_dict(),
                "lambda1": model.provenance["lambda1"], "lambda2": model.provenance["lambda2"],
                "regression_mode": model.provenance["regression_mode"]}
    run = run_manifest("fit", resolved, inputs, config.rng_seed, started)
    save_model(model, args.out, {"run": run})
    print(f"wrote model to {args.out} ({model.state.iteration} iterations, "
          f"objective {model.state.objective_trace[-1]:.6g})")
    return EXIT_OK


def _model_and_cells(args, need_types=False):
    from .model_io import load_model

    model = load_model(args.model)
    pre = PreprocessSpec(**{k: v for k, v in model.provenance.get("preprocessing", {}).items()
                            if k != "keep"})
    types = getattr(args, "celltypes", None)
    if need_types and types is None:
        raise UsageError("--celltypes is required")
    cells = None
    if getattr(args, "scrna", None) is not None:
        cells = load_single_cell(args.scrna, types, pre, _orientation(args.scrna_genes_as_rows))
        if tuple(cells.cell_ids) != tuple(model.cell_ids):
            raise DataError(f"{args.scrna}: cell ids do not match the model's")
    return model, cells, pre


def _write_sidecar(out_path: Path, manifest: dict) -> None:
    out_path.with_name(out_path.name + ".manifest.json").write_text(json.dumps(manifest, indent=1))


def cmd_predict(args) -> int:
    from .tasks import predict_genes, render_svg, write_predictions_csv

    started = time.perf_counter()
    model, cells, pre = _model_and_cells(args)
    genes = list(cells.gene_ids) if args.genes == "all" else [g for g in args.genes.split(",") if g]
    preds = predict_genes(model, cells, genes, spatial_units=args.spatial_units)
    out = Path(args.out)
    write_predictions_csv(out, model.spot_ids, preds)
    if args.svg:
        svg_dir = Path(args.svg)
        svg_dir.mkdir(parents=True, exist_ok=True)
        if model.spot_coordinates is None:
            raise DataError(f"{args.model}: model has no spot coordinates for --svg")
        for p in preds:
            render_svg(svg_dir / f"{p.gene_id}.svg", model.spot_coordinates, p.values, p.gene_id)
    _write_sidecar(out, run_manifest("predict", {"genes": genes, "spatial_units": args.spatial_units,
                                                 "preprocessing": pre.as_dict()},
                                     [Path(args.model) / "coupling.bin", args.scrna], None, started))
    print(f"wrote {len(preds)} gene prediction(s) for {len(model.spot_ids)} spots to {out}")
    return EXIT_OK


def cmd_locate(args) -> int:
    from .errors import UnknownCell
    from .tasks import infer_locations, write_posteriors_csv

    started = time.perf_counter()
    model, _, _ = _model_and_cells(args)
    wanted = list(model.cell_ids) if args.cells == "all" else [c for c in args.cells.split(",") if c]
    known = set(model.cell_ids)
    missing = [c for c in wanted if c not in known]
    if missing:
        raise UnknownCell(f"unknown cell(s): {', '.join(missing)}")
    posts = infer_locations(model, wanted, top=args.top or 7)
    out = Path(args.out)
    if args.format == "long":
        write_posteriors_csv(out, model.spot_ids, posts, top=args.top)
        target = out
    else:
        out.mkdir(parents=True, exist_ok=True)
        for post in posts:
            write_posteriors_csv(out / f"{post.cell_id}.csv", model.spot_ids, [post], top=args.top)
        target = out / "locate"
    _write_sidecar(target, run_manifest("locate", {"cells": len(wanted), "top": args.top,
                                                   "format": args.format},
                                        [Path(args.model) / "coupling.bin"], None, started))
    print(f"wrote location posteriors for {len(posts)} cell(s) to {out}")
    return EXIT_OK


def cmd_deconvolve(args) -> int:
    from .tasks import deconvolve, render_svg, write_mixtures_csv

    started = time.perf_counter()
    model, cells, _ = _model_and_cells(args, need_types=True)
    mixtures = deconvolve(model, cells)
    out = Path(args.out)
    write_mixtures_csv(out, mixtures)
    if args.svg:
        svg_dir = Path(args.svg)
        svg_dir.mkdir(parents=True, exist_ok=True)
        for label in cells.type_labels:
            render_svg(svg_dir / f"{label}.svg", model.spot_coordinates,
                       [m.proportions[label] for m in mixtures], f"proportion {label}")
    _write_sidecar(out, run_manifest("deconvolve", {"labels": list(cells.type_labels)},
                                     [Path(args.model) / "coupling.bin", args.scrna, args.celltypes],
                                     None, started))
    print(f"wrote {len(mixtures)} spot mixtures over {len(cells.type_labels)} types to {out}")
    return EXIT_OK


def cmd_cv(args) -> int:
    from .evaluation import ablation_baseline, kfold_cv, loocv

    started = time.perf_counter()
    config, pre = resolve_config(args)
    if args.cv_mode == "kfold" and args.folds is None:
        raise UsageError("--folds is required with --mode kfold")
    spatial, cells = _load_pair(args, pre)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = max(1, args.jobs)
    folds = args.folds if args.cv_mode == "kfold" else None

    def run(ablation: bool):
        if ablation:
            return ablation_baseline(spatial, cells, config, folds=folds, jobs=jobs)
        if folds is None:
            return loocv(spatial, cells, config, jobs=jobs)
        return kfold_cv(spatial, cells, folds, config, jobs=jobs)

    reports = [("report", run(False))]
    if args.ablation:
        reports.append(("ablation_report", run(True)))
    failed = False
    for stem, rep in reports:
        rep.write(out / f"{stem}.json", out / f"{stem}.csv")
        s = rep.summary()
        print(f"{rep.label}: median PCC {s['median']:.4f} over {s['genes']} genes "
              f"({s['undefined']} undefined, {s['failed_folds']} failed folds)")
        failed |= bool(rep.failed_folds)
    manifest = run_manifest("cv", {"solver": config.as_dict(), "preprocessing": pre.as_dict(),
                                   "protocol": args.cv_mode, "folds": folds, "ablation": args.ablation},
                            [args.spatial, args.coords, args.scrna], config.rng_seed, started)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return EXIT_FOLDS if failed else EXIT_OK


def cmd_simulate(args) -> int:
    from .synth import SynthSpec, write_dataset

    started = time.perf_counter()
    try:
        spec = SynthSpec(m=args.m, n=args.n, d=args.d, extra_genes=args.extra_genes,
                         cell_type_count=args.types,
                         platform_scale_range=(args.scale_low, args.scale_high),
                         platform_offset_range=(args.offset_low, args.offset_high),
                         noise_sd=args.noise, spatial_smoothness=args.smoothness,
                         rng_seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    paths = write_dataset(args.out, spec)
    # generated values are already on the model scale and may be negative
    config_path = Path(args.out) / "config.toml"
    config_path.write_text("[preprocess]\nlog_transform = false\n", encoding="utf-8")
    from dataclasses import asdict

    manifest = run_manifest("simulate", asdict(spec), [], spec.rng_seed, started)
    manifest["outputs"] = [fingerprint(p) for p in paths.values()]
    (Path(args.out) / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"wrote synthetic dataset to {args.out} (fit it with --config {config_path})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"llot {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a coupling and platform map")
    _add_inputs(p, celltypes=True)
    p.add_argument("--out", required=True, help="model directory to write")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="reconstruct spatial expression of genes")
    p.add_argument("--model", required=True)
    p.add_argument("--scrna", required=True)
    p.add_argument("--scrna-genes-as-rows", action="store_true")
    p.add_argument("--genes", required=True, help="comma-separated gene names, or 'all'")
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--svg", help="directory for per-gene SVG scatter plots")
    p.add_argument("--spatial-units", action="store_true",
                   help="map marker-gene predictions back to spatial units")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("locate", help="spot probabilities for single cells")
    p.add_argument("--model", required=True)
    p.add_argument("--cells", required=True, help="comma-separated cell ids, or 'all'")
    p.add_argument("--out", required=True, help="CSV (long format) or directory (per-cell)")
    p.add_argument("--format", choices=["long", "per-cell"], default="long")
    p.add_argument("--top", type=int, help="keep only the top-ranked spots per cell")
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("deconvolve", help="cell-type proportions per spot")
    p.add_argument("--model", required=True)
    p.add_argument("--scrna", required=True)
    p.add_argument("--scrna-genes-as-rows", action="store_true")
    p.add_argument("--celltypes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", help="directory for per-type SVG scatter plots")
    p.set_defaults(func=cmd_deconvolve)

    p = sub.add_parser("cv", help="gene-withholding cross-validation")
    _add_inputs(p)
    p.add_argument("--mode", dest="cv_mode", choices=["loocv", "kfold"], required=True)
    p.add_argument("--folds", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--ablation", action="store_true",
                   help="also score plain entropic OT (no Laplacian, frozen platform map)")
    p.add_argument("--out", required=True, help="report directory")
    _add_solver_flags(p, mode_flag="--regression-mode")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="write a synthetic dataset with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--extra-genes", type=int, default=10)
    p.add_argument("--types", type=int, default=5)
    p.add_argument("--scale-low", type=float, default=1.5)
    p.add_argument("--scale-high", type=float, default=3.0)
    p.add_argument("--offset-low", type=float, default=0.0)
    p.add_argument("--offset-high", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--smoothness", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except DataError as exc:
        print(f"llot {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"llot {args.command}: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except LlotError as exc:
        print(f"llot {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
