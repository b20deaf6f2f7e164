import warnings

import numpy as np
import pytest

from llot.data import SingleCellDataset, SpatialDataset
from llot.synth import SynthSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture(scope="session")
def small_pair():
    spatial, cells, truth = generate(SynthSpec(m=40, n=50, d=6, extra_genes=3, rng_seed=11))
    return spatial, cells, truth


@pytest.fixture
def tiny_pair():
    spatial = SpatialDataset(
        expression=[[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]],
        coordinates=[[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]],
        gene_ids=["g1", "g2"],
        spot_ids=["s1", "s2", "s3"],
    )
    cells = SingleCellDataset(
        expression=[[0.1, 1.2, 3.0], [0.9, 0.1, 1.0], [0.4, 0.6, 2.0], [0.2, 0.8, 0.0]],
        gene_ids=["G1", "G2", "G3"],
        cell_ids=["c1", "c2", "c3", "c4"],
        cell_types=["A", "B", "A", "B"],
    )
    return spatial, cells


@pytest.fixture(autouse=True)
def _quiet_solver_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=UserWarning)
        yield
