"""Gene-withholding cross-validation scored by Pearson correlation.

A fold withholds some shared genes, fits on the remaining ones, predicts
the withheld genes from the single-cell data through the fitted coupling
and correlates each prediction with the measured spatial expression.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import SharedGeneIndex, SingleCellDataset, SolverConfig, SpatialDataset, SpatialGraph, validate_pair
from .errors import DataError, LengthMismatch
from .graph import build_graph
from .solver import fit
from .tasks import predict_genes

log = logging.getLogger(__name__)


def pcc(predicted, observed) -> float:
    """Mean-centred Pearson correlation; ``nan`` when either side is constant."""
    p = np.asarray(predicted, dtype=float).ravel()
    o = np.asarray(observed, dtype=float).ravel()
    if p.shape != o.shape:
        raise LengthMismatch(f"lengths differ: {p.size} vs {o.size}")
    if p.size < 2:
        raise LengthMismatch("need at least two values")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(o))):
        raise DataError("pcc inputs must be finite")
    pc = p - p.mean()
    oc = o - o.mean()
    denom = math.sqrt(float(pc @ pc) * float(oc @ oc))
    if denom == 0.0:
        return math.nan
    return float(np.clip((pc @ oc) / denom, -1.0, 1.0))


@dataclass
class GeneScore:
    gene_id: str
    pcc: float
    fold: int

    @property
    def defined(self) -> bool:
        return not math.isnan(self.pcc)


@dataclass
class FoldOutcome:
    fold: int
    withheld: list
    scores: list
    seconds: float
    error: Optional[str] = None


@dataclass
class CvReport:
    protocol: str
    per_gene: list
    fold_seconds: dict
    failed_folds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    label: str = "llot"

    def pccs(self) -> np.ndarray:
        return np.array([s.pcc for s in self.per_gene if s.defined])

    @property
    def undefined_count(self) -> int:
        return sum(not s.defined for s in self.per_gene)

    @property
    def median(self) -> float:
        v = self.pccs()
        return float(np.median(v)) if v.size else math.nan

    def summary(self) -> dict:
        v = self.pccs()
        q1, med, q3 = (np.percentile(v, [25, 50, 75]).tolist() if v.size else [math.nan] * 3)
        return {
            "median": med,
            "q1": q1,
            "q3": q3,
            "genes": len(self.per_gene),
            "undefined": self.undefined_count,
            "failed_folds": len(self.failed_folds),
        }

    def scores_by_gene(self) -> dict:
        return {s.gene_id: s.pcc for s in self.per_gene}

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "protocol": self.protocol,
            "summary": self.summary(),
            "per_gene": [
                {"gene_id": s.gene_id, "pcc": None if not s.defined else s.pcc, "fold": s.fold}
                for s in self.per_gene
            ],
            "fold_seconds": {str(k): v for k, v in self.fold_seconds.items()},
            "failed_folds": {str(k): v for k, v in self.failed_folds.items()},
            "config": self.config,
        }

    def write(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")
        if csv_path is not None:
            with open(Path(csv_path), "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["gene_id", "pcc", "fold"])
                for s in self.per_gene:
                    w.writerow([s.gene_id, "" if not s.defined else repr(s.pcc), s.fold])


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed % 2**64, fold]).generate_state(1, np.uint64)[0])


def partition_genes(gene_ids: Sequence[str], folds: int, seed: int) -> list[list[str]]:
    """Seeded shuffle of ``gene_ids`` split into ``folds`` near-equal groups."""
    genes = list(gene_ids)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(genes) < folds:
        raise ValueError(f"{len(genes)} shared genes cannot fill {folds} folds")
    order = np.random.default_rng(seed).permutation(len(genes))
    return [[genes[k] for k in part] for part in np.array_split(order, folds)]


def run_fold(spatial: SpatialDataset, cells: SingleCellDataset, shared: SharedGeneIndex,
             graph: SpatialGraph, withheld: Sequence[str], fold: int,
             config: SolverConfig) -> FoldOutcome:
    start = time.perf_counter()
    try:
        train = shared.without(withheld)
        model = fit(spatial, cells, config.replace(rng_seed=fold_seed(config.rng_seed, fold)),
                    shared=train, graph=graph)
        preds = predict_genes(model, cells, list(withheld))
        scores = [
            GeneScore(p.gene_id, pcc(p.values, spatial.expression[:, spatial.gene_column(p.gene_id)]), fold)
            for p in preds
        ]
        return FoldOutcome(fold, list(withheld), scores, time.perf_counter() - start)
    except Exception as exc:  # a failed fold is reported, not fatal
        log.warning("fold %d failed: %s", fold, exc)
        log.debug("%s", traceback.format_exc())
        return FoldOutcome(fold, list(withheld), [], time.perf_counter() - start,
                           f"{type(exc).__name__}: {exc}")


def _run_fold_args(args):
    return run_fold(*args)


def cross_validate(spatial: SpatialDataset, cells: SingleCellDataset, groups: Sequence[Sequence[str]],
                   config: SolverConfig, protocol: str, jobs: int = 1, label: str = "llot",
                   graph: Optional[SpatialGraph] = None) -> CvReport:
    shared = validate_pair(spatial, cells)
    graph = build_graph(spatial.coordinates, config.knn_k) if graph is None else graph
    tasks = [(spatial, cells, shared, graph, list(g), k, config) for k, g in enumerate(groups)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_fold_args, tasks))
    else:
        outcomes = [run_fold(*t) for t in tasks]
    outcomes.sort(key=lambda o: o.fold)
    per_gene, seconds, failed = [], {}, {}
    for o in outcomes:
        seconds[o.fold] = o.seconds
        if o.error is not None:
            failed[o.fold] = {"withheld": o.withheld, "error": o.error}
        per_gene.extend(o.scores)
    return CvReport(protocol=protocol, per_gene=per_gene, fold_seconds=seconds,
                    failed_folds=failed, config=config.as_dict(), label=label)


def loocv(spatial: SpatialDataset, cells: SingleCellDataset, config: SolverConfig = SolverConfig(),
          jobs: int = 1, label: str = "llot") -> CvReport:
    """Withhold each shared gene in turn (``d`` fits)."""
    shared = validate_pair(spatial, cells)
    if shared.count < 2:
        raise DataError("leave-one-out needs at least 2 shared genes")
    return cross_validate(spatial, cells, [[g] for g in shared.gene_ids], config, "loocv", jobs, label)


def kfold_cv(spatial: SpatialDataset, cells: SingleCellDataset, folds: int,
             config: SolverConfig = SolverConfig(), seed: Optional[int] = None,
             jobs: int = 1, label: str = "llot") -> CvReport:
    """Withhold seeded, near-equal groups of shared genes in turn."""
    shared = validate_pair(spatial, cells)
    groups = partition_genes(shared.gene_ids, folds, config.rng_seed if seed is None else seed)
    return cross_validate(spatial, cells, groups, config, f"kfold-{folds}", jobs, label)


def ablation_config(config: SolverConfig) -> SolverConfig:
    """Plain entropic OT: no Laplacian term, platform map frozen at its initializer."""
    return config.replace(lambda2=0.0, learn_map=False)


def ablation_baseline(spatial: SpatialDataset, cells: SingleCellDataset,
                      config: SolverConfig = SolverConfig(), folds: Optional[int] = None,
                      seed: Optional[int] = None, jobs: int = 1) -> CvReport:
    cfg = ablation_config(config)
    if folds is None:
        return loocv(spatial, cells, cfg, jobs, label="ablation")
    return kfold_cv(spatial, cells, folds, cfg, seed, jobs, label="ablation")
