import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llot.data import (
    Coupling,
    PlatformMap,
    SingleCellDataset,
    SolverConfig,
    SpatialDataset,
    validate_pair,
)
from llot.errors import DataError, DuplicateGene, DuplicateId, EmptyIntersection


def spatial_with(genes):
    m = 3
    return SpatialDataset(np.ones((m, len(genes))), np.arange(2 * m).reshape(m, 2), genes,
                          [f"s{i}" for i in range(m)])


def cells_with(genes):
    n = 2
    return SingleCellDataset(np.ones((n, len(genes))), genes, [f"c{j}" for j in range(n)])


def test_shared_genes_normalized_and_sorted():
    idx = validate_pair(spatial_with(["ftz", "eve"]), cells_with(["EVE", "ftz", "gk"]))
    assert idx.count == 2
    assert idx.gene_ids == ("EVE", "FTZ")
    assert idx.spatial_columns == (1, 0)
    assert idx.cell_columns == (0, 1)


def test_shared_genes_full_overlap_84():
    genes = [f"gene{k}" for k in range(84)]
    idx = validate_pair(spatial_with(genes), cells_with(list(reversed(genes))))
    assert idx.count == 84


def test_disjoint_genes_raise():
    with pytest.raises(EmptyIntersection):
        validate_pair(spatial_with(["a"]), cells_with(["b"]))


def test_genes_colliding_after_normalization():
    with pytest.raises(DuplicateGene):
        spatial_with(["eve", " EVE"])


@settings(max_examples=50, deadline=None)
@given(st.permutations(["a", "b", "c", "d", "e"]), st.permutations(["C", "A", "x", "E"]))
def test_shared_index_independent_of_column_order(left, right):
    idx = validate_pair(spatial_with(list(left)), cells_with(list(right)))
    assert idx.gene_ids == ("A", "C", "E")


def test_spatial_dataset_shape_checks():
    with pytest.raises(DataError):
        SpatialDataset(np.ones((3, 2)), np.ones((2, 2)), ["a", "b"], ["s1", "s2", "s3"])
    with pytest.raises(DataError):
        SpatialDataset(np.ones((1, 2)), np.ones((1, 2)), ["a", "b"], ["s1"])
    with pytest.raises(DataError):
        SpatialDataset([[np.nan, 1]] * 2, np.ones((2, 2)), ["a", "b"], ["s1", "s2"])
    with pytest.raises(DuplicateId):
        SpatialDataset(np.ones((2, 1)), np.ones((2, 2)), ["a"], ["s1", "s1"])


def test_cell_types_length_checked():
    with pytest.raises(DataError):
        SingleCellDataset(np.ones((2, 1)), ["a"], ["c1", "c2"], ["A"])
    ds = SingleCellDataset(np.ones((3, 1)), ["a"], ["c1", "c2", "c3"], ["B", "A", "B"])
    assert ds.type_labels == ("A", "B")


def test_datasets_are_read_only():
    ds = spatial_with(["a"])
    with pytest.raises(ValueError):
        ds.expression[0, 0] = 5.0


def test_coupling_defaults_uniform_and_checks_marginals():
    c = Coupling.uniform(3, 4)
    np.testing.assert_allclose(c.row_marginal, 1 / 3)
    np.testing.assert_allclose(c.col_marginal, 1 / 4)
    assert c.marginal_residual() < 1e-15
    bad = np.full((2, 2), 0.25)
    bad[0, 0] += 1e-5
    with pytest.raises(DataError):
        Coupling(bad)
    with pytest.raises(DataError):
        Coupling([[0.5, -0.0001], [0.0001, 0.5]])


def test_coupling_accepts_within_tolerance():
    w = np.full((2, 2), 0.25)
    w[0, 0] += 5e-7
    Coupling(w)


def test_coupling_nonuniform_marginals():
    w = np.array([[0.6, 0.1], [0.1, 0.2]])
    c = Coupling(w, [0.7, 0.3], [0.7, 0.3])
    assert c.marginal_residual() < 1e-12


def test_platform_map_positivity():
    with pytest.raises(DataError):
        PlatformMap([1.0, 0.0], [0.0, 0.0])
    with pytest.raises(DataError):
        PlatformMap([1.0], [0.0, 1.0])
    pm = PlatformMap.identity(3)
    np.testing.assert_array_equal(pm.apply(np.eye(3)), np.eye(3))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"lambda1": 0.0},
        {"lambda2": -1.0},
        {"outer_iterations": -1},
        {"knn_k": 0},
        {"regression_mode": "fast"},
        {"regression_mode": "stochastic", "batch_size": 1},
        {"step_scale": 1.5},
    ],
)
def test_solver_config_rejects(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_solver_config_weighted_allows_any_batch():
    SolverConfig(regression_mode="weighted", batch_size=1)
