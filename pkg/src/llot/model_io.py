"""On-disk layout of a fitted model.

A model directory holds

* ``coupling.bin``: 8-byte magic ``LLOTCPL1``, little-endian ``u32 m``,
  ``u32 n``, then ``m * n`` little-endian float64 values in row-major order;
* ``platform_map.csv``: ``gene,a,b`` per shared gene;
* ``graph_edges.csv``: undirected spot graph edges by spot ID;
* ``manifest.json``: everything else needed to rebuild the model.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .data import Coupling, PlatformMap, SharedGeneIndex, SpatialGraph
from .errors import CorruptModel
from .graph import laplacian, read_edges_csv, write_edges_csv
from .solver import FitModel, FitState

MAGIC = b"LLOTCPL1"
HEADER = struct.Struct("<8sII")
FORMAT_VERSION = 1


def write_coupling_bin(path, weights) -> None:
    w = np.ascontiguousarray(weights, dtype="<f8")
    m, n = w.shape
    with open(Path(path), "wb") as fh:
        fh.write(HEADER.pack(MAGIC, m, n))
        fh.write(w.tobytes(order="C"))


def read_coupling_bin(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise CorruptModel(f"{path}: missing")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise CorruptModel(f"{path}: truncated header")
    magic, m, n = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptModel(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if len(raw) != HEADER.size + 8 * m * n:
        raise CorruptModel(f"{path}: expected {m}x{n} values, file size {len(raw)} bytes")
    return np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(m, n).astype(np.float64)


def save_model(model: FitModel, directory, extra_manifest: dict | None = None) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    state = model.state
    write_coupling_bin(out / "coupling.bin", state.coupling.weights)
    with open(out / "platform_map.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["gene", "a", "b"])
        for g, a, b in zip(model.shared_gene_index.gene_ids, state.platform_map.scale,
                           state.platform_map.offset):
            w.writerow([g, repr(float(a)), repr(float(b))])
    write_edges_csv(out / "graph_edges.csv", model.spatial_graph, model.spot_ids)
    idx = model.shared_gene_index
    manifest = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "iteration": state.iteration,
        "objective_trace": list(state.objective_trace),
        "config_fingerprint": state.config_fingerprint,
        "graph_k": model.spatial_graph.k,
        "shared_genes": {
            "gene_ids": list(idx.gene_ids),
            "spatial_columns": list(idx.spatial_columns),
            "cell_columns": list(idx.cell_columns),
        },
        "spot_ids": list(model.spot_ids),
        "cell_ids": list(model.cell_ids),
        "spot_coordinates": None if model.spot_coordinates is None
        else np.asarray(model.spot_coordinates).tolist(),
        "row_marginal": state.coupling.row_marginal.tolist(),
        "col_marginal": state.coupling.col_marginal.tolist(),
        "marginal_tol": state.coupling.tol,
        "provenance": model.provenance,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, default=_json_default)
    return out


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def load_model(directory) -> FitModel:
    d = Path(directory)
    if not d.is_dir():
        raise CorruptModel(f"{d}: model directory not found")
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptModel(f"{d / 'manifest.json'}: {exc}") from None
    weights = read_coupling_bin(d / "coupling.bin")
    spot_ids = tuple(manifest["spot_ids"])
    cell_ids = tuple(manifest["cell_ids"])
    if weights.shape != (len(spot_ids), len(cell_ids)):
        raise CorruptModel(f"{d / 'coupling.bin'}: shape {weights.shape} disagrees with manifest")
    genes, scale, offset = [], [], []
    with open(d / "platform_map.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for rec in reader:
            if rec:
                genes.append(rec[0])
                scale.append(float(rec[1]))
                offset.append(float(rec[2]))
    sg = manifest["shared_genes"]
    if genes != sg["gene_ids"]:
        raise CorruptModel(f"{d / 'platform_map.csv'}: genes disagree with manifest")
    shared = SharedGeneIndex(tuple(sg["gene_ids"]), tuple(sg["spatial_columns"]),
                             tuple(sg["cell_columns"]))
    conn = read_edges_csv(d / "graph_edges.csv", len(spot_ids), spot_ids)
    graph = SpatialGraph(connectivity=conn, laplacian=laplacian(conn), k=manifest["graph_k"])
    coupling = Coupling(weights, np.array(manifest["row_marginal"]),
                        np.array(manifest["col_marginal"]), tol=manifest["marginal_tol"])
    state = FitState(
        coupling=coupling,
        platform_map=PlatformMap(np.array(scale), np.array(offset)),
        iteration=manifest["iteration"],
        objective_trace=tuple(manifest["objective_trace"]),
        config_fingerprint=manifest["config_fingerprint"],
    )
    coords = manifest.get("spot_coordinates")
    return FitModel(
        state=state,
        shared_gene_index=shared,
        spatial_graph=graph,
        spot_ids=spot_ids,
        cell_ids=cell_ids,
        spot_coordinates=None if coords is None else np.array(coords, dtype=float),
        provenance=manifest.get("provenance", {}),
    )
