"""Downstream uses of a fitted coupling.

* gene reconstruction: each spot's value is the coupling-weighted mean of
  the single-cell expression over its row;
* cell location: a cell's column of the coupling, normalized;
* deconvolution: the row mass falling on each cell type, normalized.
"""

from __future__ import annotations

import csv
import html
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import SingleCellDataset, normalize_gene
from .errors import MissingCellTypes, UnknownCell, UnknownGene

TOP_SPOTS = 7


@dataclass(frozen=True)
class GenePrediction:
    gene_id: str
    values: np.ndarray
    row_mass: np.ndarray
    units: str = "single-cell"


@dataclass(frozen=True)
class LocationPosterior:
    cell_id: str
    probabilities: np.ndarray
    top_spots: tuple


@dataclass(frozen=True)
class SpotMixture:
    spot_id: str
    proportions: dict


def _weights(model) -> np.ndarray:
    return np.asarray(getattr(model, "coupling", model), dtype=float)


def _gene_columns(cells: SingleCellDataset, gene_ids: Sequence[str]) -> list[int]:
    lookup = {normalize_gene(g): k for k, g in enumerate(cells.gene_ids)}
    missing = [g for g in gene_ids if normalize_gene(g) not in lookup]
    if missing:
        raise UnknownGene(f"gene(s) not in the single-cell data: {', '.join(missing)}")
    return [lookup[normalize_gene(g)] for g in gene_ids]


def row_average(weights, values) -> np.ndarray:
    """``(P @ values) / P.sum(axis=1)``, the shared kernel of every task."""
    p = np.asarray(weights, dtype=float)
    mass = p.sum(axis=1)
    return (p @ np.asarray(values, dtype=float)) / (mass[:, None] if np.ndim(values) == 2 else mass)


def predict_genes(model, cells: SingleCellDataset, gene_ids: Sequence[str],
                  spatial_units: bool = False) -> list[GenePrediction]:
    """Predict several genes with one pass over the coupling.

    With ``spatial_units`` the prediction of a shared (marker) gene is
    pulled back through the platform map as ``(value - b) / a``.
    """
    p = _weights(model)
    cols = _gene_columns(cells, gene_ids)
    mass = p.sum(axis=1)
    values = (p @ cells.expression[:, cols]) / mass[:, None]
    out = []
    shared = None
    if spatial_units:
        index = model.shared_gene_index
        shared = {g: k for k, g in enumerate(index.gene_ids)}
    for k, gene in enumerate(gene_ids):
        v = values[:, k].copy()
        units = "single-cell"
        if spatial_units:
            key = normalize_gene(gene)
            if key not in shared:
                raise UnknownGene(f"{gene!r} is not a shared gene; only marker genes map back")
            pm = model.platform_map
            v = (v - pm.offset[shared[key]]) / pm.scale[shared[key]]
            units = "spatial"
        out.append(GenePrediction(gene, v, mass, units))
    return out


def predict_gene(model, cells: SingleCellDataset, gene_id: str,
                 spatial_units: bool = False) -> GenePrediction:
    return predict_genes(model, cells, [gene_id], spatial_units)[0]


def _cell_index(model, cell_id) -> int:
    ids = getattr(model, "cell_ids", None)
    if isinstance(cell_id, (int, np.integer)) and ids is None:
        return int(cell_id)
    try:
        return list(ids).index(cell_id)
    except ValueError:
        raise UnknownCell(f"unknown cell {cell_id!r}") from None


def infer_location(model, cell_id, top: int = TOP_SPOTS) -> LocationPosterior:
    p = _weights(model)
    j = _cell_index(model, cell_id)
    col = p[:, j]
    probs = col / col.sum()
    order = np.lexsort((np.arange(probs.size), -probs))[:top]
    return LocationPosterior(str(cell_id), probs, tuple((int(i), float(probs[i])) for i in order))


def infer_locations(model, cell_ids: Optional[Iterable] = None, top: int = TOP_SPOTS):
    ids = model.cell_ids if cell_ids is None else cell_ids
    return [infer_location(model, c, top) for c in ids]


def type_indicators(cells: SingleCellDataset) -> tuple[tuple[str, ...], np.ndarray]:
    if cells.cell_types is None:
        raise MissingCellTypes("the single-cell dataset has no cell-type labels")
    labels = cells.type_labels
    pos = {t: k for k, t in enumerate(labels)}
    onehot = np.zeros((cells.n, len(labels)))
    onehot[np.arange(cells.n), [pos[t] for t in cells.cell_types]] = 1.0
    return labels, onehot


def deconvolve(model, cells: SingleCellDataset, spot_ids: Optional[Sequence[str]] = None) -> list[SpotMixture]:
    labels, onehot = type_indicators(cells)
    props = row_average(_weights(model), onehot)
    ids = spot_ids if spot_ids is not None else getattr(model, "spot_ids", range(props.shape[0]))
    return [
        SpotMixture(str(sid), {t: float(props[i, k]) for k, t in enumerate(labels)})
        for i, sid in enumerate(ids)
    ]


def write_predictions_csv(path, spot_ids, predictions: Sequence[GenePrediction]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["spot_id", *(p.gene_id for p in predictions)])
        for i, sid in enumerate(spot_ids):
            w.writerow([sid, *(repr(float(p.values[i])) for p in predictions)])


def write_posteriors_csv(path, spot_ids, posteriors: Sequence[LocationPosterior],
                         top: Optional[int] = None) -> None:
    """Long format ``cell_id,spot_id,probability,rank``; ``top`` keeps the best ranks."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "spot_id", "probability", "rank"])
        for post in posteriors:
            probs = post.probabilities
            order = np.lexsort((np.arange(probs.size), -probs))
            if top is not None:
                order = order[:top]
            for rank, i in enumerate(order, start=1):
                w.writerow([post.cell_id, spot_ids[i], repr(float(probs[i])), rank])


def write_mixtures_csv(path, mixtures: Sequence[SpotMixture]) -> None:
    labels = list(mixtures[0].proportions) if mixtures else []
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["spot_id", *labels])
        for mix in mixtures:
            w.writerow([mix.spot_id, *(repr(mix.proportions[t]) for t in labels)])


def _color(t: float) -> str:
    # blue -> white -> red
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        s = t / 0.5
        r, g, b = int(59 + s * 196), int(76 + s * 179), int(192 + s * 63)
    else:
        s = (t - 0.5) / 0.5
        r, g, b = 255, int(255 - s * 191), int(255 - s * 191)
    return f"#{r:02x}{g:02x}{b:02x}"


def render_svg(path, coordinates, values, title: str = "", size: int = 480) -> None:
    """Scatter of per-spot values at their coordinates, colored by value."""
    xy = np.asarray(coordinates, dtype=float)
    v = np.asarray(values, dtype=float)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    pad = 20
    inner = size - 2 * pad
    scaled = pad + (xy - lo) / span * inner
    vmin, vmax = float(v.min()), float(v.max())
    t = (v - vmin) / (vmax - vmin) if vmax > vmin else np.full_like(v, 0.5)
    radius = max(1.5, 0.45 * inner / np.sqrt(max(len(v), 1)))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}">',
        f'<text x="{pad}" y="14" font-family="sans-serif" font-size="12">'
        f"{html.escape(title)} [{vmin:.3g}, {vmax:.3g}]</text>",
    ]
    for (x, y), tv in zip(scaled, t):
        # svg y grows downward
        parts.append(
            f'<circle cx="{x:.2f}" cy="{size + 20 - y:.2f}" r="{radius:.2f}" fill="{_color(tv)}"/>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")
