from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.sparse import csr_matrix

from app.core.errors import InputValidationError

# Плотная матрица вещественных чисел (строки в порядке row-major)
DenseMatrix = NDArray[np.float64]
# n×p матрица, строки которой - единичные векторы
SphericalMatrix = NDArray[np.float64]
# p×p матрица W с W Wᵀ = I
OrthogonalMatrix = NDArray[np.float64]


@dataclass
class SvdResult:
    """Тонкое SVD: a = u · diag(singular_values) · vt"""
    u: DenseMatrix
    singular_values: NDArray[np.float64]
    vt: DenseMatrix

    def reconstruct(self) -> DenseMatrix:
        return (self.u * self.singular_values) @ self.vt


# ---------------------------------------------------------------------------
# vMF
# ---------------------------------------------------------------------------

@dataclass
class VmfParams:
    """
    Параметры распределения фон Мизеса - Фишера

    Args:
        mu: Единичный вектор среднего направления
        kappa: Концентрация (kappa >= 0)
        p: Размерность (по умолчанию len(mu))
    """
    mu: NDArray[np.float64]
    kappa: float
    p: int = 0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        if self.p == 0:
            self.p = int(self.mu.shape[0])
        if self.p != self.mu.shape[0]:
            raise InputValidationError(f"mu has dimension {self.mu.shape[0]}, expected p={self.p}")
        if self.p < 2:
            raise InputValidationError("p must be at least 2")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise InputValidationError(f"kappa must be finite and non-negative, got {self.kappa}")
        norm = float(np.linalg.norm(self.mu))
        if abs(norm - 1.0) > 1e-12:
            raise InputValidationError(f"mu must be a unit vector, got norm {norm!r}")


@dataclass(frozen=True)
class VmfMoments:
    """gamma - длина среднего результирующего вектора, eta = 1 − gamma²"""
    gamma: float
    eta: float


@dataclass
class GroupSumTailReport:
    """Сравнение частоты превышения максимума групповых сумм ||eps||² с оценкой хвоста"""
    n_groups: int
    n_max: int
    n_min: int
    threshold: float
    bound: float
    exceedance_frequency: float
    trials: int

    @property
    def holds(self) -> bool:
        return self.exceedance_frequency <= self.bound


# ---------------------------------------------------------------------------
# Разбиение на группы и матрицы отображения
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupPartition:
    """
    Упорядоченное разбиение индексов строк 0..n-1 на K смежных групп

    Args:
        sizes: Размеры групп n_k в порядке следования
        labels: Идентификаторы групп (по умолчанию "0".."K-1")
    """
    sizes: Tuple[int, ...]
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise InputValidationError("partition must contain at least one group")
        if min(sizes) < 1:
            raise InputValidationError("group sizes must be positive")
        labels = tuple(str(label) for label in self.labels) if self.labels else tuple(str(k) for k in range(len(sizes)))
        if len(labels) != len(sizes):
            raise InputValidationError("number of labels does not match number of groups")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_sizes(cls, sizes: Iterable[int], labels: Optional[Sequence[Any]] = None) -> "GroupPartition":
        return cls(tuple(sizes), tuple(labels) if labels is not None else ())

    @classmethod
    def from_labels(cls, row_labels: Sequence[Any]) -> "GroupPartition":
        """
        Строит разбиение по метке группы каждой строки

        Метки обязаны идти смежными блоками; иначе - ошибка с просьбой
        переупорядочить строки.
        """
        sizes: List[int] = []
        labels: List[str] = []
        seen = set()
        for i, raw in enumerate(row_labels):
            label = str(raw)
            if labels and labels[-1] == label:
                sizes[-1] += 1
                continue
            if label in seen:
                raise InputValidationError(
                    f"group '{label}' is not contiguous (row {i}); reorder rows so that each group forms one block"
                )
            seen.add(label)
            labels.append(label)
            sizes.append(1)
        return cls(tuple(sizes), tuple(labels))

    @property
    def n(self) -> int:
        return int(sum(self.sizes))

    @property
    def K(self) -> int:
        return len(self.sizes)

    @property
    def n_max(self) -> int:
        return max(self.sizes)

    @property
    def n_min(self) -> int:
        return min(self.sizes)

    @cached_property
    def starts(self) -> NDArray[np.int64]:
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)

    @cached_property
    def group_index(self) -> NDArray[np.int64]:
        return np.repeat(np.arange(self.K), self.sizes)

    def slice(self, k: int) -> slice:
        return slice(int(self.starts[k]), int(self.starts[k + 1]))

    def slices(self) -> List[slice]:
        return [self.slice(k) for k in range(self.K)]

    def group_of(self, i: int) -> int:
        return int(self.group_index[i])

    def merge_adjacent(self, firsts: Iterable[int]) -> "GroupPartition":
        """Сливает группу k с группой k+1 для каждого k из firsts (пары не пересекаются)"""
        firsts = sorted(set(int(k) for k in firsts))
        sizes: List[int] = []
        labels: List[str] = []
        k = 0
        merge = set(firsts)
        while k < self.K:
            if k in merge and k + 1 < self.K:
                sizes.append(self.sizes[k] + self.sizes[k + 1])
                labels.append(f"{self.labels[k]}+{self.labels[k + 1]}")
                k += 2
            else:
                sizes.append(self.sizes[k])
                labels.append(self.labels[k])
                k += 1
        return GroupPartition(tuple(sizes), tuple(labels))


@dataclass
class BlockMatrix:
    """Блочно-диагональная матрица с плотными блоками n_k×n_k (например, OLS-оценка Π̃)"""
    partition: GroupPartition
    blocks: List[DenseMatrix]

    def __post_init__(self):
        if len(self.blocks) != self.partition.K:
            raise InputValidationError("number of blocks does not match number of groups")
        for k, block in enumerate(self.blocks):
            n_k = self.partition.sizes[k]
            if block.shape != (n_k, n_k):
                raise InputValidationError(f"block {k} has shape {block.shape}, expected ({n_k}, {n_k})")

    def row(self, i: int) -> NDArray[np.float64]:
        """Строка i, ограниченная своим блоком"""
        k = self.partition.group_of(i)
        return self.blocks[k][i - int(self.partition.starts[k])]

    def apply(self, x: DenseMatrix) -> DenseMatrix:
        return np.vstack([block @ x[sl] for block, sl in zip(self.blocks, self.partition.slices())])

    def to_dense(self) -> DenseMatrix:
        n = self.partition.n
        out = np.zeros((n, n))
        for block, sl in zip(self.blocks, self.partition.slices()):
            out[sl, sl] = block
        return out


class RowTag(str, Enum):
    IDENTITY = "identity"
    PERMUTED = "permuted"
    WEIGHTED = "weighted"
    UNMAPPED = "unmapped"


@dataclass
class BlockMappingMatrix:
    """
    Блочно-диагональная матрица отображения Π с тегом у каждой строки

    Строки-индикаторы (identity/permuted) хранят только целевой индекс,
    взвешенные строки - плотный вектор весов по своей группе,
    unmapped-строки нулевые.
    """
    partition: GroupPartition
    tags: NDArray[np.str_]
    targets: NDArray[np.int64]
    weights: Dict[int, NDArray[np.float64]] = field(default_factory=dict)

    def __post_init__(self):
        n = self.partition.n
        self.tags = np.asarray(self.tags, dtype="<U8")
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.tags.shape != (n,) or self.targets.shape != (n,):
            raise InputValidationError(f"mapping must have {n} rows")
        allowed = {tag.value for tag in RowTag}
        unknown = set(np.unique(self.tags)) - allowed
        if unknown:
            raise InputValidationError(f"unknown row tags: {sorted(unknown)}")
        group = self.partition.group_index
        indicator = self.indicator_mask
        rows = np.flatnonzero(indicator)
        if rows.size:
            tg = self.targets[rows]
            if tg.min() < 0 or tg.max() >= n or np.any(group[tg] != group[rows]):
                raise InputValidationError("indicator targets must lie inside the row's own group")
        for i in np.flatnonzero(self.tags == RowTag.WEIGHTED.value):
            w = self.weights.get(int(i))
            n_k = self.partition.sizes[group[i]]
            if w is None or np.asarray(w).shape != (n_k,):
                raise InputValidationError(f"weighted row {i} needs a weight vector of length {n_k}")

    @classmethod
    def identity(cls, partition: GroupPartition) -> "BlockMappingMatrix":
        n = partition.n
        return cls(partition, np.full(n, RowTag.IDENTITY.value), np.arange(n))

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def indicator_mask(self) -> NDArray[np.bool_]:
        return (self.tags == RowTag.IDENTITY.value) | (self.tags == RowTag.PERMUTED.value)

    def tag_mask(self, tag: RowTag) -> NDArray[np.bool_]:
        return self.tags == tag.value

    def counts(self) -> Dict[str, int]:
        counts = {tag.value: int(np.sum(self.tags == tag.value)) for tag in RowTag}
        counts["matched"] = counts[RowTag.IDENTITY.value]
        counts["mismatched"] = self.n - counts["matched"]
        counts["one_to_many"] = counts[RowTag.WEIGHTED.value]
        return counts

    def apply(self, x: DenseMatrix) -> DenseMatrix:
        """Π X без построения плотной n×n матрицы"""
        out = np.zeros((self.n, x.shape[1]))
        rows = np.flatnonzero(self.indicator_mask)
        out[rows] = x[self.targets[rows]]
        for i, w in self.weights.items():
            if self.tags[i] == RowTag.WEIGHTED.value:
                out[i] = w @ x[self.partition.slice(self.partition.group_of(i))]
        return out

    def row_dense(self, i: int) -> NDArray[np.float64]:
        out = np.zeros(self.n)
        tag = self.tags[i]
        if tag in (RowTag.IDENTITY.value, RowTag.PERMUTED.value):
            out[self.targets[i]] = 1.0
        elif tag == RowTag.WEIGHTED.value:
            out[self.partition.slice(self.partition.group_of(i))] = self.weights[int(i)]
        return out

    def row_norms(self) -> NDArray[np.float64]:
        norms = self.indicator_mask.astype(float)
        for i, w in self.weights.items():
            if self.tags[i] == RowTag.WEIGHTED.value:
                norms[i] = float(np.linalg.norm(w))
        return norms

    def triplets(self) -> Tuple[NDArray[np.int64], NDArray[np.int64], NDArray[np.float64]]:
        """Ненулевые элементы (row, col, value), отсортированные по (row, col)"""
        rows: List[int] = []
        cols: List[int] = []
        vals: List[float] = []
        for i in range(self.n):
            tag = self.tags[i]
            if tag in (RowTag.IDENTITY.value, RowTag.PERMUTED.value):
                rows.append(i)
                cols.append(int(self.targets[i]))
                vals.append(1.0)
            elif tag == RowTag.WEIGHTED.value:
                start = int(self.partition.starts[self.partition.group_of(i)])
                w = self.weights[i]
                for j in np.flatnonzero(w):
                    rows.append(i)
                    cols.append(start + int(j))
                    vals.append(float(w[j]))
        return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64), np.asarray(vals, dtype=float)

    def to_sparse(self) -> csr_matrix:
        rows, cols, vals = self.triplets()
        return csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    @classmethod
    def from_triplets(
        cls,
        partition: GroupPartition,
        rows: Sequence[int],
        cols: Sequence[int],
        vals: Sequence[float],
    ) -> "BlockMappingMatrix":
        """
        Восстанавливает матрицу отображения из ненулевых элементов

        Теги выводятся из содержимого строки: единственная 1.0 на диагонали -
        identity, единственная 1.0 вне диагонали - permuted, пустая строка -
        unmapped, всё остальное - weighted.
        """
        n = partition.n
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
            raise InputValidationError(f"mapping entries must index a {n}×{n} matrix")
        group = partition.group_index
        outside = np.flatnonzero(group[rows] != group[cols])
        if outside.size:
            i = int(rows[outside[0]])
            raise InputValidationError(f"row {i} has entries outside its group block")
        tags = np.full(n, RowTag.UNMAPPED.value, dtype="<U8")
        targets = np.full(n, -1, dtype=np.int64)
        weights: Dict[int, NDArray[np.float64]] = {}
        keep = vals != 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        bounds = np.searchsorted(rows, np.arange(n + 1))
        for i in range(n):
            lo, hi = bounds[i], bounds[i + 1]
            if hi == lo:
                continue
            if hi - lo == 1 and vals[lo] == 1.0:
                targets[i] = cols[lo]
                tags[i] = RowTag.IDENTITY.value if cols[lo] == i else RowTag.PERMUTED.value
                continue
            k = int(group[i])
            start = int(partition.starts[k])
            w = np.zeros(partition.sizes[k])
            np.add.at(w, cols[lo:hi] - start, vals[lo:hi])
            weights[i] = w
            tags[i] = RowTag.WEIGHTED.value
        return cls(partition, tags, targets, weights)

    def structure_equal(self, other: "BlockMappingMatrix") -> bool:
        return bool(np.array_equal(self.tags, other.tags) and np.array_equal(self.targets, other.targets))

    def max_weight_change(self, other: "BlockMappingMatrix") -> float:
        change = 0.0
        for i, w in self.weights.items():
            v = other.weights.get(i)
            if v is None or v.shape != w.shape:
                return float("inf")
            change = max(change, float(np.max(np.abs(w - v))))
        return change


# ---------------------------------------------------------------------------
# Эмбеддинги
# ---------------------------------------------------------------------------

@dataclass
class CooccurrenceTable:
    """Таблица совместной встречаемости в виде троек (item_i, item_j, count)"""
    vocabulary: List[str]
    rows: NDArray[np.int64]
    cols: NDArray[np.int64]
    counts: NDArray[np.float64]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=float)
        if not (self.rows.shape == self.cols.shape == self.counts.shape):
            raise InputValidationError("triplet arrays must have equal length")
        if np.any(self.counts < 0) or np.any(self.counts != np.round(self.counts)):
            raise InputValidationError("co-occurrence counts must be non-negative integers")
        if self.total <= 0:
            raise InputValidationError("co-occurrence table is empty (|D| = 0)")

    @property
    def size(self) -> int:
        return len(self.vocabulary)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def to_dense(self) -> DenseMatrix:
        out = np.zeros((self.size, self.size))
        np.add.at(out, (self.rows, self.cols), self.counts)
        return out


@dataclass
class SppmiMatrix:
    matrix: DenseMatrix
    k: int
    alpha: float
    vocabulary: List[str]
    empty_items: List[int] = field(default_factory=list)


@dataclass
class Embedding:
    """Нормированные эмбеддинги и манифест исключённых элементов"""
    vectors: SphericalMatrix
    items: List[str]
    excluded: List[Dict[str, str]] = field(default_factory=list)
    symmetric: bool = True


# ---------------------------------------------------------------------------
# Симуляции и отчёты
# ---------------------------------------------------------------------------

@dataclass
class GroundTruth:
    x: SphericalMatrix
    y: SphericalMatrix
    w_true: OrthogonalMatrix
    pi_true: BlockMappingMatrix
    partition: GroupPartition
    components: NDArray[np.int64]
    n_mis: int
    redistributed: int = 0
    config: Any = None


@dataclass
class MtBaselineResult:
    """OLS-выравнивание и глобальное сопоставление по косинусу без групп"""
    w_ols: DenseMatrix
    w_ols_refined: DenseMatrix
    pi_perm: BlockMappingMatrix
    orthogonality_defect: float


@dataclass
class FitReport:
    """
    Результат трёхшагового оценивания: Ŵ⁽¹⁾, Π̂⁽²⁾, Ŵ⁽²⁾ и диагностика
    """
    w1: OrthogonalMatrix
    pi_hat: BlockMappingMatrix
    w2: OrthogonalMatrix
    lambda_selected: float
    cv_table: Optional[pd.DataFrame]
    losses: Dict[str, float]
    sigma_p_x: float
    sigma_p_xty: float
    gamma_hat: float
    eta_hat: float
    refine_rows: NDArray[np.int64]
    refinement: str
    iterations: List[Dict[str, Any]] = field(default_factory=list)
    feasibility: Dict[str, Any] = field(default_factory=dict)
    runtime_seconds: float = 0.0

    @property
    def counts(self) -> Dict[str, int]:
        return self.pi_hat.counts()

    def summary(self) -> Dict[str, Any]:
        """Сводка для report.json"""
        return {
            "lambda_selected": self.lambda_selected,
            "counts": self.counts,
            "losses": dict(self.losses),
            "sigma_p_x": self.sigma_p_x,
            "sigma_p_xty": self.sigma_p_xty,
            "gamma_hat": self.gamma_hat,
            "eta_hat": self.eta_hat,
            "refinement": self.refinement,
            "n_refine_rows": int(self.refine_rows.size),
            "iterations": list(self.iterations),
            "feasibility": dict(self.feasibility),
            "cv_table": self.cv_table.to_dict(orient="records") if self.cv_table is not None else [],
            "runtime_seconds": self.runtime_seconds,
        }


@dataclass
class SweepTable:
    """Записи по каждой ячейке (метод × значение оси × повтор) и сводка по сетке"""
    axis: str
    records: pd.DataFrame
    summary: pd.DataFrame
