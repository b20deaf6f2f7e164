"""Readers and writers for expression matrices, coordinates and labels.

CSV files use a comma separator; files ending in ``.tsv`` use tabs. The
first header field is ignored. A MatrixMarket ``.mtx`` expression file is
read together with sidecar ``<stem>.rows.txt`` / ``<stem>.cols.txt`` ID
files (one ID per line).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import io as spio

from .data import SingleCellDataset, SpatialDataset, normalize_gene
from .errors import (
    AllGenesFiltered,
    DataError,
    DuplicateId,
    MissingCell,
    MissingSpot,
    ParseError,
    RaggedRows,
)

log = logging.getLogger(__name__)

ORIENTATIONS = ("rows_are_observations", "rows_are_genes")


def _delimiter(path: Path) -> str:
    return "\t" if path.suffix.lower() == ".tsv" else ","


def _read_table(path) -> tuple[list[str], list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=_delimiter(path)) if r]
    if not rows:
        raise ParseError(path, 1, 1, "empty file")
    header = [h.strip() for h in rows[0][1:]]
    ids, body = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header) + 1:
            raise RaggedRows(
                f"{path}:{lineno}: expected {len(header) + 1} fields, found {len(row)}"
            )
        ids.append(row[0].strip())
        body.append(row[1:])
    return header, ids, body


def _parse_numbers(path, body: list[list[str]]) -> np.ndarray:
    try:
        out = np.array(body, dtype=np.float64).reshape(len(body), -1)
    except ValueError:
        pass
    else:
        if np.all(np.isfinite(out)):
            return out
    # slow path only to locate the offending cell
    out = np.empty((len(body), len(body[0]) if body else 0), dtype=np.float64)
    for r, row in enumerate(body):
        for c, text in enumerate(row):
            try:
                value = float(text)
            except ValueError:
                raise ParseError(path, r + 2, c + 2, f"not a number: {text!r}") from None
            if not math.isfinite(value):
                raise ParseError(path, r + 2, c + 2, f"non-finite value: {text!r}")
            out[r, c] = value
    return out


def _check_unique(ids: Sequence[str], path, what: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise DuplicateId(f"{path}: duplicate {what} id {i!r}")
        seen.add(i)


def read_expression_csv(path, orientation: str = "rows_are_observations"):
    """Read an expression table as ``(matrix, row_ids, col_ids)``.

    The returned matrix is always observations x genes; with
    ``orientation="rows_are_genes"`` the file is transposed on load and
    ``row_ids`` are the observation IDs from the header.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    path = Path(path)
    if path.suffix.lower() == ".mtx":
        return read_expression_mtx(path, orientation)
    header, ids, body = _read_table(path)
    matrix = _parse_numbers(path, body)
    _check_unique(ids, path, "row")
    _check_unique(header, path, "column")
    if orientation == "rows_are_genes":
        return matrix.T.copy(), header, ids
    return matrix, ids, header


def read_expression_mtx(path, orientation: str = "rows_are_observations"):
    path = Path(path)
    stem = path.with_suffix("")
    row_file, col_file = Path(f"{stem}.rows.txt"), Path(f"{stem}.cols.txt")
    for f in (row_file, col_file):
        if not f.exists():
            raise DataError(f"{path}: missing sidecar id file {f}")
    matrix = spio.mmread(str(path))
    matrix = np.asarray(matrix.todense() if hasattr(matrix, "todense") else matrix, dtype=float)
    rows = [line.strip() for line in row_file.read_text(encoding="utf-8").splitlines() if line.strip()]
    cols = [line.strip() for line in col_file.read_text(encoding="utf-8").splitlines() if line.strip()]
    if matrix.shape != (len(rows), len(cols)):
        raise DataError(
            f"{path}: matrix is {matrix.shape} but sidecars list {len(rows)} rows, {len(cols)} columns"
        )
    if not np.all(np.isfinite(matrix)):
        raise DataError(f"{path}: non-finite values")
    _check_unique(rows, row_file, "row")
    _check_unique(cols, col_file, "column")
    if orientation == "rows_are_genes":
        return matrix.T.copy(), cols, rows
    return matrix, rows, cols


def write_expression_csv(path, matrix, row_ids, col_ids, index_label: str = "id") -> None:
    path = Path(path)
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=_delimiter(path))
        w.writerow([index_label, *col_ids])
        for rid, row in zip(row_ids, matrix):
            w.writerow([rid, *(repr(float(v)) for v in row)])


def read_coordinates_csv(path, spot_ids: Optional[Sequence[str]] = None) -> np.ndarray:
    """Read an ``id,x,y`` file, reordered to ``spot_ids`` when given.

    Extra coordinate rows are dropped with a warning; a spot with no
    coordinate row raises ``MissingSpot``.
    """
    header, ids, body = _read_table(path)
    if len(header) != 2:
        raise ParseError(path, 1, 1, "coordinate file must have columns id,x,y")
    coords = _parse_numbers(path, body)
    _check_unique(ids, path, "spot")
    if spot_ids is None:
        return coords
    lookup = {sid: k for k, sid in enumerate(ids)}
    missing = [s for s in spot_ids if s not in lookup]
    if missing:
        raise MissingSpot(f"{path}: no coordinates for spot(s) {', '.join(missing[:5])}")
    extra = len(ids) - len(set(spot_ids) & set(ids))
    if extra:
        log.warning("%s: dropping %d coordinate rows with no matching spot", path, extra)
    return coords[[lookup[s] for s in spot_ids]]


def write_coordinates_csv(path, coords, spot_ids) -> None:
    write_expression_csv(path, coords, spot_ids, ["x", "y"])


def read_cell_types(path, cell_ids: Optional[Sequence[str]] = None) -> list[str]:
    header, ids, body = _read_table(path)
    if len(header) != 1:
        raise ParseError(path, 1, 1, "cell-type file must have columns id,label")
    _check_unique(ids, path, "cell")
    labels = {i: row[0].strip() for i, row in zip(ids, body)}
    if cell_ids is None:
        return [labels[i] for i in ids]
    missing = [c for c in cell_ids if c not in labels]
    if missing:
        raise MissingCell(f"{path}: no label for cell(s) {', '.join(missing[:5])}")
    return [labels[c] for c in cell_ids]


def write_cell_types(path, cell_ids, labels) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=_delimiter(path))
        w.writerow(["id", "label"])
        w.writerows(zip(cell_ids, labels))


@dataclass(frozen=True)
class PreprocessSpec:
    log_transform: bool = True
    min_cells_per_gene: int = 0
    standardize: bool = False
    keep: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict:
        return {
            "log_transform": self.log_transform,
            "min_cells_per_gene": self.min_cells_per_gene,
            "standardize": self.standardize,
            "keep": list(self.keep),
        }


@dataclass
class PreprocessResult:
    matrix: np.ndarray
    kept: list[int]
    dropped: list[int]


def preprocess(matrix, spec: PreprocessSpec, gene_ids: Optional[Sequence[str]] = None) -> PreprocessResult:
    """Filter genes, then ``log1p``, then per-gene z-score (sample sd).

    Genes named in ``spec.keep`` survive filtering regardless of counts.
    """
    x = np.array(matrix, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("cannot preprocess a matrix with non-finite entries")
    keep_names = {normalize_gene(g) for g in spec.keep}
    protected = np.zeros(x.shape[1], dtype=bool)
    if gene_ids is not None and keep_names:
        protected = np.array([normalize_gene(g) in keep_names for g in gene_ids])
    expressed = (x != 0).sum(axis=0)
    mask = (expressed >= spec.min_cells_per_gene) | protected
    if not mask.any():
        raise AllGenesFiltered("no gene passes the min_cells_per_gene filter")
    kept = np.flatnonzero(mask).tolist()
    dropped = np.flatnonzero(~mask).tolist()
    x = x[:, mask]
    if spec.log_transform:
        if np.any(x <= -1):
            raise DataError("log1p transform needs values greater than -1")
        x = np.log1p(x)
    if spec.standardize:
        if x.shape[0] < 2:
            raise DataError("standardize needs at least 2 observations")
        mu = x.mean(axis=0)
        sd = x.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        x = (x - mu) / sd
    return PreprocessResult(matrix=x, kept=kept, dropped=dropped)


def _apply(matrix, gene_ids, spec, keep):
    spec = PreprocessSpec(spec.log_transform, spec.min_cells_per_gene, spec.standardize, tuple(keep))
    res = preprocess(matrix, spec, gene_ids)
    if res.dropped:
        log.info("dropped %d genes: %s", len(res.dropped), [gene_ids[k] for k in res.dropped[:10]])
    return res.matrix, [gene_ids[k] for k in res.kept]


def load_spatial(expression_path, coords_path, spec: Optional[PreprocessSpec] = None,
                 orientation: str = "rows_are_observations", keep: Iterable[str] = ()) -> SpatialDataset:
    matrix, spots, genes = read_expression_csv(expression_path, orientation)
    coords = read_coordinates_csv(coords_path, spots)
    if spec is not None:
        matrix, genes = _apply(matrix, genes, spec, keep)
    return SpatialDataset(matrix, coords, genes, spots)


def load_single_cell(expression_path, types_path=None, spec: Optional[PreprocessSpec] = None,
                     orientation: str = "rows_are_observations", keep: Iterable[str] = ()) -> SingleCellDataset:
    matrix, cells, genes = read_expression_csv(expression_path, orientation)
    labels = read_cell_types(types_path, cells) if types_path is not None else None
    if spec is not None:
        matrix, genes = _apply(matrix, genes, spec, keep)
    return SingleCellDataset(matrix, genes, cells, labels)
