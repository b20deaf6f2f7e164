import math

import numpy as np
import pytest

from llot.errors import (
    AllGenesFiltered,
    DuplicateId,
    MissingCell,
    MissingSpot,
    ParseError,
    RaggedRows,
)
from llot.ingest import (
    PreprocessSpec,
    load_single_cell,
    load_spatial,
    preprocess,
    read_cell_types,
    read_coordinates_csv,
    read_expression_csv,
    write_expression_csv,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_read_expression_rows_are_observations(tmp_path):
    f = write(tmp_path / "x.csv", "id,g1,g2\ns1,0,1.5\ns2,2,0\ns3,1,1\n")
    mat, rows, cols = read_expression_csv(f)
    np.testing.assert_array_equal(mat, [[0, 1.5], [2, 0], [1, 1]])
    assert rows == ["s1", "s2", "s3"]
    assert cols == ["g1", "g2"]


def test_read_expression_transposed(tmp_path):
    f = write(tmp_path / "x.csv", "gene,s1,s2,s3\ng1,0,2,1\ng2,1.5,0,1\n")
    mat, rows, cols = read_expression_csv(f, "rows_are_genes")
    np.testing.assert_array_equal(mat, [[0, 1.5], [2, 0], [1, 1]])
    assert rows == ["s1", "s2", "s3"]
    assert cols == ["g1", "g2"]


def test_read_expression_tsv(tmp_path):
    f = write(tmp_path / "x.tsv", "id\tg1\ns1\t3\ns2\t4\n")
    mat, _, _ = read_expression_csv(f)
    np.testing.assert_array_equal(mat, [[3], [4]])


def test_ragged_rows(tmp_path):
    f = write(tmp_path / "x.csv", "id,g1,g2\ns1,0,1\ns2,2\n")
    with pytest.raises(RaggedRows):
        read_expression_csv(f)


def test_parse_error_reports_position(tmp_path):
    f = write(tmp_path / "x.csv", "id,g1,g2\ns1,0,1\ns2,2,abc\n")
    with pytest.raises(ParseError) as err:
        read_expression_csv(f)
    assert err.value.line == 3 and err.value.column == 3


def test_non_finite_rejected(tmp_path):
    f = write(tmp_path / "x.csv", "id,g1\ns1,inf\ns2,1\n")
    with pytest.raises(ParseError):
        read_expression_csv(f)


def test_duplicate_observation(tmp_path):
    f = write(tmp_path / "x.csv", "id,g1\ns1,0\ns1,1\n")
    with pytest.raises(DuplicateId):
        read_expression_csv(f)


def test_roundtrip(tmp_path, rng):
    mat = rng.standard_normal((5, 4))
    rows, cols = [f"r{i}" for i in range(5)], [f"g{k}" for k in range(4)]
    write_expression_csv(tmp_path / "m.csv", mat, rows, cols)
    back, r2, c2 = read_expression_csv(tmp_path / "m.csv")
    np.testing.assert_allclose(back, mat, atol=1e-12, rtol=0)
    assert r2 == rows and c2 == cols


def test_mtx_with_sidecars(tmp_path):
    from scipy import io as spio
    from scipy import sparse

    mat = np.array([[0, 1.5], [2, 0], [1, 1]])
    spio.mmwrite(str(tmp_path / "x.mtx"), sparse.coo_matrix(mat))
    write(tmp_path / "x.rows.txt", "s1\ns2\ns3\n")
    write(tmp_path / "x.cols.txt", "g1\ng2\n")
    back, rows, cols = read_expression_csv(tmp_path / "x.mtx")
    np.testing.assert_array_equal(back, mat)
    assert rows == ["s1", "s2", "s3"] and cols == ["g1", "g2"]


def test_coordinates_join_reorders(tmp_path):
    f = write(tmp_path / "c.csv", "id,x,y\ns1,0,0\ns2,1,0\n")
    np.testing.assert_array_equal(read_coordinates_csv(f, ["s2", "s1"]), [[1, 0], [0, 0]])


def test_coordinates_missing_spot(tmp_path):
    f = write(tmp_path / "c.csv", "id,x,y\ns1,0,0\ns2,1,0\n")
    with pytest.raises(MissingSpot):
        read_coordinates_csv(f, ["s1", "s2", "s3"])


def test_coordinates_duplicate(tmp_path):
    f = write(tmp_path / "c.csv", "id,x,y\ns1,0,0\ns1,1,0\n")
    with pytest.raises(DuplicateId):
        read_coordinates_csv(f, ["s1"])


def test_coordinates_extra_rows_dropped(tmp_path, caplog):
    f = write(tmp_path / "c.csv", "id,x,y\ns1,0,0\ns2,1,0\ns9,5,5\n")
    with caplog.at_level("WARNING"):
        out = read_coordinates_csv(f, ["s1", "s2"])
    assert out.shape == (2, 2)
    assert "dropping 1" in caplog.text


def test_cell_types_join(tmp_path):
    f = write(tmp_path / "t.csv", "id,label\nc1,A\nc2,B\n")
    assert read_cell_types(f, ["c2", "c1"]) == ["B", "A"]


def test_cell_types_missing(tmp_path):
    f = write(tmp_path / "t.csv", "id,label\nc1,A\n")
    with pytest.raises(MissingCell):
        read_cell_types(f, ["c1", "c9"])


def test_cell_types_eleven_labels(tmp_path):
    n = 1207
    lines = ["id,label"] + [f"c{j},type{j % 11}" for j in range(n)]
    f = write(tmp_path / "t.csv", "\n".join(lines) + "\n")
    labels = read_cell_types(f, [f"c{j}" for j in range(n)])
    assert len(set(labels)) == 11


def test_log_transform():
    out = preprocess([[0.0, math.e - 1]], PreprocessSpec(log_transform=True)).matrix
    np.testing.assert_allclose(out, [[0.0, 1.0]], atol=1e-15)


def test_min_cells_filter_and_keep_list():
    mat = [[1.0, 0.0, 2.0], [3.0, 0.0, 0.0], [1.0, 5.0, 0.0]]
    res = preprocess(mat, PreprocessSpec(log_transform=False, min_cells_per_gene=2))
    assert res.kept == [0] and res.dropped == [1, 2]
    res = preprocess(mat, PreprocessSpec(log_transform=False, min_cells_per_gene=2, keep=("g3",)),
                     gene_ids=["g1", "g2", "g3"])
    assert res.kept == [0, 2]


def test_all_filtered():
    with pytest.raises(AllGenesFiltered):
        preprocess([[0.0], [0.0]], PreprocessSpec(min_cells_per_gene=1))


def test_standardize_uses_sample_sd():
    out = preprocess([[1.0], [3.0]], PreprocessSpec(log_transform=False, standardize=True)).matrix
    np.testing.assert_allclose(out.ravel(), [-1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-12)


def test_preprocess_row_permutation_equivariant(rng):
    mat = rng.random((6, 4)) * 5
    spec = PreprocessSpec(log_transform=True, standardize=True)
    perm = rng.permutation(6)
    a = preprocess(mat, spec).matrix
    b = preprocess(mat[perm], spec).matrix
    np.testing.assert_allclose(a[perm], b, atol=1e-12)


def test_loaders(tmp_path):
    write(tmp_path / "x.csv", "id,g1,g2\ns1,0,1\ns2,2,0\n")
    write(tmp_path / "c.csv", "id,x,y\ns2,1,0\ns1,0,0\n")
    write(tmp_path / "y.csv", "id,G1,G2\nc1,0,1\nc2,1,1\n")
    write(tmp_path / "t.csv", "id,label\nc2,B\nc1,A\n")
    spatial = load_spatial(tmp_path / "x.csv", tmp_path / "c.csv", PreprocessSpec(log_transform=False))
    np.testing.assert_array_equal(spatial.coordinates, [[0, 0], [1, 0]])
    cells = load_single_cell(tmp_path / "y.csv", tmp_path / "t.csv")
    assert cells.cell_types == ("A", "B")
