"""Paired synthetic spatial / single-cell data with known ground truth.

Spots sit on a jittered grid in the unit square. Each cell type owns a
smooth random field over the square (a sum of Gaussian bumps with the
requested length-scale); a softmax over types turns the fields into local
type proportions. Cells are placed uniformly at random, draw a type from
the proportions at their location and express their type's archetype plus
Gaussian noise. A spot expresses the proportion-weighted archetype mix,
pulled back through the inverse of the true platform map, plus noise.

Values live directly on the model scale (no exponentiation or clipping),
so they can be negative.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import SingleCellDataset, SpatialDataset
from .ingest import write_cell_types, write_coordinates_csv, write_expression_csv

BUMPS_PER_TYPE = 8
TYPE_SHARPNESS = 3.0
ARCHETYPE_BASE = (0.0, 1.0)
ARCHETYPE_SPREAD = 1.5


@dataclass(frozen=True)
class SynthSpec:
    m: int = 200
    n: int = 200
    d: int = 20
    extra_genes: int = 10
    cell_type_count: int = 5
    platform_scale_range: tuple = (1.5, 3.0)
    platform_offset_range: tuple = (0.0, 1.0)
    noise_sd: float = 0.1
    spatial_smoothness: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("m", "n", "d"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        if self.extra_genes < 0:
            raise ValueError("extra_genes must be >= 0")
        if self.cell_type_count < 1:
            raise ValueError("cell_type_count must be >= 1")
        lo, hi = self.platform_scale_range
        if not 0 < lo <= hi:
            raise ValueError("platform_scale_range must satisfy 0 < low <= high")
        lo, hi = self.platform_offset_range
        if not lo <= hi:
            raise ValueError("platform_offset_range must satisfy low <= high")
        if self.noise_sd < 0 or self.spatial_smoothness < 0:
            raise ValueError("noise_sd and spatial_smoothness must be nonnegative")


@dataclass
class SynthTruth:
    scale: np.ndarray
    offset: np.ndarray
    shared_genes: list
    extra_genes: list
    cell_types: list
    type_labels: list
    cell_locations: np.ndarray
    cell_nearest_spot: np.ndarray
    spot_type_proportions: np.ndarray
    spot_expression_cell_units: np.ndarray
    archetypes: np.ndarray

    def to_json(self) -> dict:
        return {
            "scale": self.scale.tolist(),
            "offset": self.offset.tolist(),
            "shared_genes": self.shared_genes,
            "extra_genes": self.extra_genes,
            "cell_types": self.cell_types,
            "type_labels": self.type_labels,
            "cell_locations": self.cell_locations.tolist(),
            "cell_nearest_spot": self.cell_nearest_spot.tolist(),
            "spot_type_proportions": self.spot_type_proportions.tolist(),
            "spot_expression_cell_units": self.spot_expression_cell_units.tolist(),
            "archetypes": self.archetypes.tolist(),
        }


class _TypeField:
    def __init__(self, rng, types: int, length_scale: float):
        self.length_scale = length_scale
        self.types = types
        self.centers = rng.random((types, BUMPS_PER_TYPE, 2))
        self.heights = rng.standard_normal((types, BUMPS_PER_TYPE))
        self._rng = rng

    def proportions(self, points: np.ndarray) -> np.ndarray:
        if self.types == 1:
            return np.ones((points.shape[0], 1))
        if self.length_scale == 0:
            # no spatial structure: independent draws per location
            raw = self._rng.standard_normal((points.shape[0], self.types))
        else:
            diff = points[:, None, None, :] - self.centers[None, :, :, :]
            sq = (diff ** 2).sum(axis=-1)
            raw = (self.heights[None] * np.exp(-sq / (2 * self.length_scale ** 2))).sum(axis=-1)
            sd = raw.std()
            raw = raw / sd if sd > 0 else raw
        z = TYPE_SHARPNESS * raw
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def _grid(rng, m: int) -> np.ndarray:
    side = math.ceil(math.sqrt(m))
    k = np.arange(m)
    base = np.column_stack([(k % side + 0.5) / side, (k // side + 0.5) / side])
    return base + rng.uniform(-0.25, 0.25, size=(m, 2)) / side


def generate(spec: SynthSpec):
    """Return ``(spatial, cells, truth)`` for ``spec``; deterministic in the seed."""
    rng = np.random.default_rng(spec.rng_seed)
    genes = spec.d + spec.extra_genes
    shared_names = [f"G{k:03d}" for k in range(spec.d)]
    extra_names = [f"X{k:03d}" for k in range(spec.extra_genes)]
    labels = [f"T{k}" for k in range(spec.cell_type_count)]

    coords = _grid(rng, spec.m)
    base = rng.uniform(*ARCHETYPE_BASE, size=genes)
    archetypes = base[None, :] + ARCHETYPE_SPREAD * rng.standard_normal((spec.cell_type_count, genes))
    field = _TypeField(rng, spec.cell_type_count, spec.spatial_smoothness)
    scale = rng.uniform(*spec.platform_scale_range, size=spec.d)
    offset = rng.uniform(*spec.platform_offset_range, size=spec.d)

    cell_loc = rng.random((spec.n, 2))
    cell_probs = field.proportions(cell_loc)
    cum = np.cumsum(cell_probs, axis=1)
    draws = rng.random(spec.n)[:, None]
    cell_type = np.minimum((draws > cum).sum(axis=1), spec.cell_type_count - 1)
    y = archetypes[cell_type] + spec.noise_sd * rng.standard_normal((spec.n, genes))

    spot_props = field.proportions(coords)
    y_agg = spot_props @ archetypes
    x = (y_agg[:, : spec.d] - offset) / scale + spec.noise_sd * rng.standard_normal((spec.m, spec.d))

    nearest = ((cell_loc[:, None, :] - coords[None, :, :]) ** 2).sum(axis=-1).argmin(axis=1)
    spot_ids = [f"s{i:04d}" for i in range(spec.m)]
    cell_ids = [f"c{j:04d}" for j in range(spec.n)]
    spatial = SpatialDataset(x, coords, shared_names, spot_ids)
    cells = SingleCellDataset(y, shared_names + extra_names, cell_ids,
                              [labels[t] for t in cell_type])
    truth = SynthTruth(
        scale=scale,
        offset=offset,
        shared_genes=shared_names,
        extra_genes=extra_names,
        cell_types=[labels[t] for t in cell_type],
        type_labels=labels,
        cell_locations=cell_loc,
        cell_nearest_spot=nearest,
        spot_type_proportions=spot_props,
        spot_expression_cell_units=y_agg,
        archetypes=archetypes,
    )
    return spatial, cells, truth


def write_dataset(directory, spec: SynthSpec) -> dict:
    """Write the generated pair in the standard input formats plus ``truth.json``."""
    spatial, cells, truth = generate(spec)
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "spatial": out / "spatial.csv",
        "coords": out / "coords.csv",
        "scrna": out / "scrna.csv",
        "celltypes": out / "celltypes.csv",
        "truth": out / "truth.json",
    }
    write_expression_csv(paths["spatial"], spatial.expression, spatial.spot_ids, spatial.gene_ids)
    write_coordinates_csv(paths["coords"], spatial.coordinates, spatial.spot_ids)
    write_expression_csv(paths["scrna"], cells.expression, cells.cell_ids, cells.gene_ids)
    write_cell_types(paths["celltypes"], cells.cell_ids, cells.cell_types)
    payload = {"spec": asdict(spec), **truth.to_json()}
    paths["truth"].write_text(json.dumps(payload, indent=1), encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}
