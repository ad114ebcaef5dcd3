import math

import numpy as np
import pytest

from app.core.errors import InputValidationError, NumericalError
from app.models.models import CooccurrenceTable, SppmiMatrix
from app.services.embedding_ingest import embedding_builder


def write_triplets(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_read_triplets_sums_duplicates(tmp_path):
    path = write_triplets(tmp_path / "pairs.tsv", ["a\tb\t2", "b\tc\t1", "a\tb\t3"])
    table = embedding_builder.read_triplets(path)
    assert table.vocabulary == ["a", "b", "c"]
    dense = table.to_dense()
    assert dense[0, 1] == 5.0
    assert dense[1, 2] == 1.0
    assert table.total == 6.0


def test_read_triplets_symmetrize(tmp_path):
    path = write_triplets(tmp_path / "pairs.tsv", ["a\tb\t2", "a\ta\t1"])
    dense = embedding_builder.read_triplets(path, symmetrize=True).to_dense()
    np.testing.assert_array_equal(dense, [[1.0, 2.0], [2.0, 0.0]])


@pytest.mark.parametrize("bad", ["a\tb", "a\tb\tx", "a\tb\t-1", "a\tb\t1.5", "a\tb\t1\textra"])
def test_read_triplets_reports_malformed_line(tmp_path, bad):
    path = write_triplets(tmp_path / "pairs.tsv", ["a\tb\t1", bad])
    with pytest.raises(InputValidationError, match="line 2"):
        embedding_builder.read_triplets(path)


def test_cooccurrence_table_rejects_empty():
    with pytest.raises(InputValidationError):
        CooccurrenceTable(vocabulary=["a"], rows=[0], cols=[0], counts=[0.0])


def test_sppmi_hand_computed_entries():
    # #(a,b)=4, #(a,c)=2, #(b,a)=3, #(c,c)=1; |D| = 10
    table = CooccurrenceTable(
        vocabulary=["a", "b", "c"], rows=[0, 0, 1, 2], cols=[1, 2, 0, 2], counts=[4, 2, 3, 1],
    )
    sppmi = embedding_builder.build_sppmi(table, k=1, alpha=1.0)
    # строки: a=6, b=3, c=1; столбцы: a=3, b=4, c=3
    expected = np.zeros((3, 3))
    expected[0, 1] = max(math.log(4 * 10 / (6 * 4)), 0.0)
    expected[0, 2] = max(math.log(2 * 10 / (6 * 3)), 0.0)
    expected[1, 0] = max(math.log(3 * 10 / (3 * 3)), 0.0)
    expected[2, 2] = max(math.log(1 * 10 / (1 * 3)), 0.0)
    np.testing.assert_allclose(sppmi.matrix, expected, atol=1e-12)
    assert sppmi.empty_items == []


def test_sppmi_shift_and_smoothing():
    table = CooccurrenceTable(vocabulary=["a", "b"], rows=[0, 1], cols=[1, 0], counts=[50, 50])
    smoothed = embedding_builder.build_sppmi(table, k=1, alpha=0.75)
    # log(50) − log(50) − 0.75(log 50 − log 100)
    assert smoothed.matrix[0, 1] == pytest.approx(0.75 * math.log(2.0), abs=1e-12)
    shifted = embedding_builder.build_sppmi(table, k=10, alpha=0.75)
    assert shifted.matrix[0, 1] == 0.0


def test_sppmi_defaults():
    table = CooccurrenceTable(vocabulary=["a", "b"], rows=[0, 1], cols=[1, 0], counts=[5, 5])
    sppmi = embedding_builder.build_sppmi(table)
    assert sppmi.k == 10
    assert sppmi.alpha == 0.75


def test_sppmi_validates_parameters():
    table = CooccurrenceTable(vocabulary=["a"], rows=[0], cols=[0], counts=[1])
    with pytest.raises(InputValidationError):
        embedding_builder.build_sppmi(table, k=0)
    with pytest.raises(InputValidationError):
        embedding_builder.build_sppmi(table, alpha=0.0)


def ring_table(size: int) -> CooccurrenceTable:
    rows, cols, counts = [], [], []
    for i in range(size):
        for step, count in ((1, 40), (2, 10)):
            j = (i + step) % size
            rows += [i, j]
            cols += [j, i]
            counts += [count, count]
    return CooccurrenceTable([f"w{i}" for i in range(size)], rows, cols, counts)


def test_embed_symmetric_rows_are_unit():
    sppmi = embedding_builder.build_sppmi(ring_table(12), k=1, alpha=1.0)
    assert np.allclose(sppmi.matrix, sppmi.matrix.T)
    embedding = embedding_builder.embed(sppmi, 4)
    assert embedding.symmetric
    assert embedding.vectors.shape == (12, 4)
    np.testing.assert_allclose(np.linalg.norm(embedding.vectors, axis=1), 1.0, atol=1e-12)
    assert embedding.excluded == []


def test_embed_excludes_items_with_empty_marginal(tmp_path):
    lines = [f"w{i}\tw{(i + 1) % 8}\t30" for i in range(8)] + [f"w{i}\tw{(i + 3) % 8}\t5" for i in range(8)]
    lines.append("w0\tlonely\t30")
    path = write_triplets(tmp_path / "pairs.tsv", lines)
    embedding = embedding_builder.build(path, dim=3, k=1, alpha=1.0)
    assert not embedding.symmetric
    assert {"item": "lonely", "reason": "empty marginal"} in embedding.excluded
    assert "lonely" not in embedding.items
    np.testing.assert_allclose(np.linalg.norm(embedding.vectors, axis=1), 1.0, atol=1e-12)


def test_embed_rank_shortfall():
    sppmi = embedding_builder.build_sppmi(ring_table(6), k=1, alpha=1.0)
    with pytest.raises(NumericalError, match="effective rank"):
        embedding_builder.embed(sppmi, 7)


def test_embed_identity_gives_orthogonal_rows():
    sppmi = SppmiMatrix(matrix=np.eye(5), k=1, alpha=1.0, vocabulary=[f"w{i}" for i in range(5)], empty_items=[])
    embedding = embedding_builder.embed(sppmi, 5)
    cosines = embedding.vectors @ embedding.vectors.T
    np.testing.assert_allclose(cosines, np.eye(5), atol=1e-10)


def test_embed_two_communities_separate():
    rng = np.random.default_rng(5)
    rows, cols, counts = [], [], []
    for start in (0, 10):
        for i in range(start, start + 10):
            for j in range(start, start + 10):
                if i != j:
                    rows.append(i)
                    cols.append(j)
                    counts.append(int(rng.integers(5, 30)))
    table = CooccurrenceTable([f"w{i}" for i in range(20)], rows, cols, counts)
    embedding = embedding_builder.embed(embedding_builder.build_sppmi(table, k=1, alpha=1.0), 6)
    cosines = embedding.vectors @ embedding.vectors.T
    community = np.arange(20) // 10
    same = community[:, None] == community[None, :]
    off_diagonal = ~np.eye(20, dtype=bool)
    assert np.median(cosines[same & off_diagonal]) > np.median(cosines[~same])


def test_sppmi_reconstruction_error_nonincreasing():
    sppmi = embedding_builder.build_sppmi(ring_table(10), k=1, alpha=1.0)
    u, s, vt = np.linalg.svd(sppmi.matrix)
    errors = [np.linalg.norm(sppmi.matrix - (u[:, :p] * s[:p]) @ vt[:p]) for p in range(1, 11)]
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
