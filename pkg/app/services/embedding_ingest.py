import csv
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix

from app.core.config import settings
from app.core.errors import InputValidationError, NumericalError
from app.models.models import CooccurrenceTable, Embedding, SppmiMatrix
from app.services import linalg_core

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Порог симметричности матрицы SPPMI
SYMMETRY_TOL = 1e-12


class EmbeddingBuilder:
    """
    Построение нормированных эмбеддингов из таблицы совместной встречаемости
    (SPPMI + усечённое SVD)
    """

    def read_triplets(self, path: Union[str, Path], symmetrize: bool = False) -> CooccurrenceTable:
        """
        Читает файл троек item_i<TAB>item_j<TAB>count

        Args:
            path: Путь к файлу (UTF-8)
            symmetrize: Добавить обратные пары (j, i) для i != j

        Returns:
            CooccurrenceTable; повторяющиеся пары суммируются
        """
        try:
            df = pd.read_csv(
                path,
                sep="\t",
                header=None,
                names=["item_i", "item_j", "count", "extra"],
                dtype=str,
                keep_default_na=False,
                skip_blank_lines=False,
                quoting=csv.QUOTE_NONE,
                encoding="utf-8",
            ).fillna("")
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise InputValidationError(f"malformed triplet file {path}: {e}")
        except (OSError, UnicodeDecodeError) as e:
            raise InputValidationError(f"cannot read triplet file {path}: {e}")

        blank = (df["item_i"] == "") & (df["item_j"] == "") & (df["count"] == "") & (df["extra"] == "")
        df = df.loc[~blank]
        counts = pd.to_numeric(df["count"], errors="coerce")
        bad = (df["item_i"] == "") | (df["item_j"] == "") | (df["extra"] != "") | counts.isna()
        bad |= (counts < 0) | (counts != counts.round())
        if bad.any():
            line = int(bad.idxmax()) + 1
            raise InputValidationError(f"malformed triplet at line {line} of {path}: expected item_i<TAB>item_j<TAB>count")

        items_i = df["item_i"].to_numpy()
        items_j = df["item_j"].to_numpy()
        values = counts.to_numpy(dtype=float)
        if symmetrize:
            off = items_i != items_j
            items_i, items_j = np.concatenate([items_i, items_j[off]]), np.concatenate([items_j, items_i[off]])
            values = np.concatenate([values, values[off]])

        vocabulary = list(pd.unique(np.ravel(np.column_stack([items_i, items_j]))))
        index = {item: k for k, item in enumerate(vocabulary)}
        rows = np.array([index[item] for item in items_i], dtype=np.int64)
        cols = np.array([index[item] for item in items_j], dtype=np.int64)
        logger.info(f"Read {len(df)} triplets over {len(vocabulary)} items from {path}")
        return CooccurrenceTable(vocabulary=vocabulary, rows=rows, cols=cols, counts=values)

    def build_sppmi(
        self,
        table: CooccurrenceTable,
        k: int = settings.SPPMI_K,
        alpha: float = settings.SPPMI_ALPHA,
    ) -> SppmiMatrix:
        """
        M_{w,c} = max(log #(w,c) − log(Σ_c' #(w,c') · (Σ_w' #(w',c)/|D|)^alpha) − log k, 0)

        Args:
            table: Таблица встречаемости
            k: Сдвиг (k >= 1)
            alpha: Сглаживание (0 < alpha <= 1)

        Returns:
            SppmiMatrix; элементы с нулевым счётчиком равны 0
        """
        if k < 1:
            raise InputValidationError("k must be at least 1")
        if not (0.0 < alpha <= 1.0):
            raise InputValidationError("alpha must lie in (0,1]")
        counts = coo_matrix((table.counts, (table.rows, table.cols)), shape=(table.size, table.size)).toarray()
        total = counts.sum()
        row_sums = counts.sum(axis=1)
        col_sums = counts.sum(axis=0)

        matrix = np.zeros_like(counts)
        nz = counts > 0
        w_idx, c_idx = np.nonzero(nz)
        pmi = (
            np.log(counts[nz])
            - np.log(row_sums[w_idx])
            - alpha * (np.log(col_sums[c_idx]) - np.log(total))
        )
        matrix[nz] = np.maximum(pmi - np.log(k), 0.0)

        empty = np.flatnonzero((row_sums == 0) | (col_sums == 0))
        if empty.size:
            logger.warning(f"{empty.size} items have an empty marginal: {[table.vocabulary[i] for i in empty[:10]]}")
        return SppmiMatrix(
            matrix=matrix,
            k=int(k),
            alpha=float(alpha),
            vocabulary=list(table.vocabulary),
            empty_items=[int(i) for i in empty],
        )

    def embed(self, sppmi: SppmiMatrix, p: int) -> Embedding:
        """
        Усечённое SVD ранга p и нормировка строк

        Симметричная M даёт U_p √Σ_p, несимметричная - U_p √Σ_p + V_p √Σ_p.
        Строки, ставшие нулевыми, исключаются и попадают в манифест.
        """
        if p < 1:
            raise InputValidationError("embedding dimension must be positive")
        m = sppmi.matrix
        result = linalg_core.svd(m)
        s = result.singular_values
        rank = int(np.sum(s > settings.PINV_REL_TOL * s[0])) if s.size and s[0] > 0 else 0
        if rank < p:
            logger.error(f"SPPMI effective rank {rank} is below requested dimension {p}")
            raise NumericalError(f"SPPMI matrix has effective rank {rank}, smaller than requested dimension {p}")

        root = np.sqrt(s[:p])
        symmetric = bool(np.max(np.abs(m - m.T)) < SYMMETRY_TOL)
        vectors = result.u[:, :p] * root
        if not symmetric:
            vectors = vectors + result.vt[:p].T * root

        norms = np.linalg.norm(vectors, axis=1)
        scale = norms.max() if norms.size else 0.0
        reasons: Dict[int, str] = {i: "empty marginal" for i in sppmi.empty_items}
        for i in np.flatnonzero(norms <= 1e-10 * max(scale, 1.0)):
            reasons.setdefault(int(i), "zero embedding row")
        keep = np.array([i for i in range(m.shape[0]) if i not in reasons], dtype=np.int64)
        if reasons:
            logger.warning(f"Excluding {len(reasons)} items from the embedding")

        excluded: List[Dict[str, str]] = [
            {"item": sppmi.vocabulary[i], "reason": reasons[i]} for i in sorted(reasons)
        ]
        return Embedding(
            vectors=linalg_core.row_normalize(vectors[keep]) if keep.size else np.zeros((0, p)),
            items=[sppmi.vocabulary[i] for i in keep],
            excluded=excluded,
            symmetric=symmetric,
        )

    def build(
        self,
        path: Union[str, Path],
        dim: int,
        k: int = settings.SPPMI_K,
        alpha: float = settings.SPPMI_ALPHA,
        symmetrize: bool = False,
    ) -> Embedding:
        table = self.read_triplets(path, symmetrize=symmetrize)
        return self.embed(self.build_sppmi(table, k=k, alpha=alpha), dim)


# Создаем экземпляр построителя эмбеддингов
embedding_builder = EmbeddingBuilder()
