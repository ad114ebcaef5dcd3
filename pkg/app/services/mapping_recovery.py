import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold

from app.core.config import settings
from app.core.errors import InputValidationError, ModelAssumptionError, RankDeficiencyError
from app.models.models import BlockMappingMatrix, BlockMatrix, DenseMatrix, GroupPartition, RowTag
from app.schemas.schemas import LAMBDA_UPPER, ThresholdConfig, default_lambda_grid
from app.services import linalg_core

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Порог нормы ‖Π̃_i X‖, ниже которого строка считается несопоставимой
UNMAPPABLE_NORM = 1e-12


def _solve_block(y_k: DenseMatrix, z_k: DenseMatrix, group_id: object = None) -> DenseMatrix:
    # Π̃ᵏ = Y_k Z_kᵀ (Z_k Z_kᵀ)^{-1}
    n_k = y_k.shape[0]
    s = linalg_core.singular_values(z_k)
    sigma_min = float(s[-1]) if s.size >= n_k else 0.0
    if s.size < n_k or s[0] == 0.0 or sigma_min ** 2 <= settings.PINV_REL_TOL * s[0] ** 2:
        raise RankDeficiencyError(
            f"Gram matrix of group {group_id} is singular: sigma_nk(X_Gk)={sigma_min:.3e}",
            singular_values=s,
        )
    gram = z_k @ z_k.T
    return (y_k @ z_k.T) @ linalg_core.pseudo_inverse(gram)


def ols_block(y_k: DenseMatrix, x_k: DenseMatrix, w_hat: DenseMatrix, group_id: object = None) -> DenseMatrix:
    """
    OLS-оценка блока отображения для одной группы

    Args:
        y_k: Строки Y группы (n_k×p)
        x_k: Строки X группы (n_k×p)
        w_hat: Текущая оценка W
        group_id: Идентификатор группы для сообщений об ошибках

    Returns:
        Матрица n_k×n_k
    """
    y_k = np.asarray(y_k, dtype=float)
    x_k = np.asarray(x_k, dtype=float)
    n_k, p = x_k.shape
    if n_k >= p:
        raise ModelAssumptionError(
            f"group {group_id} has n_k={n_k} >= p={p}; the model requires p > max_k n_k",
            group_id=group_id,
        )
    return _solve_block(y_k, x_k @ w_hat, group_id)


def ols_mapping(y: DenseMatrix, x: DenseMatrix, w_hat: DenseMatrix, partition: GroupPartition) -> BlockMatrix:
    """Π̃ по всем группам, блоки в порядке групп"""
    if x.shape[0] != partition.n or y.shape != x.shape:
        raise InputValidationError(f"x and y must have {partition.n} rows matching the partition")
    blocks = [
        ols_block(y[sl], x[sl], w_hat, group_id=partition.labels[k])
        for k, sl in enumerate(partition.slices())
    ]
    return BlockMatrix(partition, blocks)


def _block_betas(block: DenseMatrix) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(block, axis=1)
    j_star = np.argmax(block, axis=1)
    top = block[np.arange(block.shape[0]), j_star]
    beta = np.ones(block.shape[0])
    nonzero = norms > 0.0
    beta[nonzero] = 1.0 - top[nonzero] / norms[nonzero]
    j_star[~nonzero] = 0
    return beta, j_star


def beta_of_row(pi_row: np.ndarray) -> Tuple[float, int]:
    """
    β = 1 − max_j cos(row, e_j) и j* = argmax (наименьший индекс при равенстве)

    Нулевая строка даёт (1.0, 0) и предупреждение.
    """
    row = np.asarray(pi_row, dtype=float).ravel()
    if not np.any(row):
        logger.warning("Zero mapping row: beta set to 1")
        return 1.0, 0
    beta, j_star = _block_betas(row[None, :])
    return float(beta[0]), int(j_star[0])


def threshold_scales(
    pi_tilde: BlockMatrix,
    mode: str = "fixed",
    eta_k: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """
    Множители порога по строкам для адаптивных режимов

    Сырые множители нормируются к среднему 1; если все они нулевые,
    возвращаются нули.
    """
    partition = pi_tilde.partition
    if mode == "fixed":
        return np.ones(partition.n)
    if mode == "group-size":
        raw = np.log(np.asarray(partition.sizes, dtype=float))[partition.group_index]
    elif mode == "prior-fraction":
        if eta_k is None or len(eta_k) != partition.K:
            raise InputValidationError(f"prior-fraction mode needs eta_k for all {partition.K} groups")
        raw = np.asarray(eta_k, dtype=float)[partition.group_index]
    elif mode == "flatness":
        raw = np.zeros(partition.n)
        for block, sl in zip(pi_tilde.blocks, partition.slices()):
            top = block.max(axis=1)
            positive = top > 0
            flat = np.zeros(block.shape[0])
            flat[positive] = np.linalg.norm(block[positive] / top[positive, None] - 1.0, axis=1)
            raw[sl] = flat
    else:
        raise InputValidationError(f"unknown threshold mode '{mode}'")
    mean = float(raw.mean())
    if mean <= 0.0:
        return np.zeros(partition.n)
    return raw / mean


def _apply_thresholds(pi_tilde: BlockMatrix, x: DenseMatrix, thresholds: np.ndarray) -> BlockMappingMatrix:
    partition = pi_tilde.partition
    n = partition.n
    tags = np.full(n, RowTag.WEIGHTED.value, dtype="<U8")
    targets = np.full(n, -1, dtype=np.int64)
    weights: Dict[int, np.ndarray] = {}
    unmappable: List[int] = []
    for block, sl in zip(pi_tilde.blocks, partition.slices()):
        start = sl.start
        beta, j_star = _block_betas(block)
        indicator = beta <= thresholds[sl]
        translated = np.linalg.norm(block @ x[sl], axis=1)
        for local in range(block.shape[0]):
            i = start + local
            if indicator[local]:
                targets[i] = start + j_star[local]
                tags[i] = RowTag.IDENTITY.value if targets[i] == i else RowTag.PERMUTED.value
            elif translated[local] < UNMAPPABLE_NORM:
                tags[i] = RowTag.UNMAPPED.value
                unmappable.append(i)
            else:
                weights[i] = block[local] / translated[local]
    if unmappable:
        logger.warning(f"{len(unmappable)} rows have near-zero translated norm and are left unmapped: {unmappable[:10]}")
    return BlockMappingMatrix(partition, tags, targets, weights)


def hard_threshold(pi_tilde: BlockMatrix, x: DenseMatrix, config: ThresholdConfig) -> BlockMappingMatrix:
    """
    Жёсткий порог: индикатор I_{j*} при β ≤ λ, иначе строка, нормированная
    так, что ‖Π̂_i X‖ = 1

    Args:
        pi_tilde: OLS-оценка Π̃
        x: Матрица X
        config: Настройки порога (lambda_ должна быть задана)

    Returns:
        BlockMappingMatrix
    """
    if config.lambda_ is None:
        raise InputValidationError("hard_threshold needs a concrete lambda")
    if config.mode != "fixed":
        return adaptive_threshold(pi_tilde, x, config.lambda_, config.mode, config.eta_k)
    return _apply_thresholds(pi_tilde, x, np.full(pi_tilde.partition.n, config.lambda_))


def adaptive_threshold(
    pi_tilde: BlockMatrix,
    x: DenseMatrix,
    base_lambda: float,
    mode: str,
    priors: Optional[Sequence[float]] = None,
) -> BlockMappingMatrix:
    """Порог λ_i = base_lambda · scale_i, средний порог равен base_lambda"""
    scales = threshold_scales(pi_tilde, mode, priors)
    return _apply_thresholds(pi_tilde, x, base_lambda * scales)


def classify_rows(pi_hat: BlockMappingMatrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Returns:
        (S - строки-совпадения, D - остальные строки, Ĉ - взвешенные строки)
    """
    matched = pi_hat.tag_mask(RowTag.IDENTITY)
    return (
        np.flatnonzero(matched),
        np.flatnonzero(~matched),
        np.flatnonzero(pi_hat.tag_mask(RowTag.WEIGHTED)),
    )


def row_norm_feasibility(pi: BlockMappingMatrix, x: DenseMatrix) -> pd.DataFrame:
    """
    Проверка 1/√n_k ≤ ‖Π_i‖ ≤ 1/σ_{n_k}(X_Gk) для сопоставленных строк
    """
    partition = pi.partition
    sigma = np.array([linalg_core.smallest_singular_value(x[sl]) for sl in partition.slices()])
    rows = np.flatnonzero(~pi.tag_mask(RowTag.UNMAPPED))
    groups = partition.group_index[rows]
    norms = pi.row_norms()[rows]
    lower = 1.0 / np.sqrt(np.asarray(partition.sizes, dtype=float)[groups])
    with np.errstate(divide="ignore"):
        upper = np.where(sigma[groups] > 0, 1.0 / sigma[groups], np.inf)
    slack = 1e-8
    return pd.DataFrame({
        "row": rows,
        "group": [partition.labels[k] for k in groups],
        "tag": pi.tags[rows],
        "norm": norms,
        "lower": lower,
        "upper": upper,
        "feasible": (norms >= lower - slack) & (norms <= upper + slack),
    })


def feasibility_summary(table: pd.DataFrame) -> Dict[str, object]:
    violations = table.loc[~table["feasible"], "row"]
    return {
        "rows_checked": int(len(table)),
        "violations": int(violations.size),
        "violating_rows": [int(i) for i in violations.head(20)],
    }


def _fold_predictions(
    y: DenseMatrix,
    x: DenseMatrix,
    z: DenseMatrix,
    partition: GroupPartition,
    train: np.ndarray,
    valid: np.ndarray,
    mode: str,
    eta_k: Optional[Sequence[float]],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n = partition.n
    beta = np.ones(n)
    err_indicator = np.zeros(n)
    err_weighted = np.zeros(n)
    blocks = []
    for k, sl in enumerate(partition.slices()):
        block = _solve_block(y[sl][:, train], z[sl][:, train], partition.labels[k])
        blocks.append(block)
        b, j_star = _block_betas(block)
        beta[sl] = b
        y_valid = y[sl][:, valid]
        z_valid = z[sl][:, valid]
        err_indicator[sl] = np.sum((y_valid - z_valid[j_star]) ** 2, axis=1)
        translated = np.linalg.norm(block @ x[sl], axis=1)
        safe = np.where(translated < UNMAPPABLE_NORM, np.inf, translated)
        prediction = (block / safe[:, None]) @ z_valid
        err_weighted[sl] = np.sum((y_valid - prediction) ** 2, axis=1)
    scales = threshold_scales(BlockMatrix(partition, blocks), mode, eta_k)
    return beta, scales, err_indicator, err_weighted


def select_lambda(
    y: DenseMatrix,
    x: DenseMatrix,
    w_hat: DenseMatrix,
    partition: GroupPartition,
    grid: Optional[Sequence[float]] = None,
    folds: int = settings.CV_FOLDS,
    seed: int = 0,
    mode: str = "fixed",
    eta_k: Optional[Sequence[float]] = None,
    threads: int = 0,
) -> Tuple[float, pd.DataFrame]:
    """
    Выбор λ кросс-валидацией по координатным столбцам Y и X

    Ŵ фиксирована во всех фолдах. Π̃ оценивается на обучающих столбцах,
    ошибка Σ ‖Y_cv − Π̂ X_cv Ŵ‖² считается на отложенных.

    Args:
        y, x: Данные n×p
        w_hat: Оценка W
        partition: Разбиение на группы
        grid: Сетка λ (по умолчанию из настроек)
        folds: Число фолдов
        seed: Seed разбиения столбцов
        mode: Режим порога (fixed или адаптивный)
        eta_k: Априорные доли для prior-fraction
        threads: Ограничение числа потоков

    Returns:
        (выбранное λ, таблица CV по сетке)
    """
    if grid is None:
        grid = default_lambda_grid()
    grid = np.sort(np.asarray(list(grid), dtype=float))
    if grid.size == 0 or np.any(grid <= 0.0) or np.any(grid >= LAMBDA_UPPER):
        raise InputValidationError(f"lambda grid must be nonempty and inside (0, {LAMBDA_UPPER:.5f})")
    if folds < 2:
        raise InputValidationError("folds must be at least 2")
    p = x.shape[1]
    if folds > p:
        raise InputValidationError(f"cannot split p={p} columns into {folds} folds")

    splits = list(KFold(n_splits=folds, shuffle=True, random_state=seed).split(np.arange(p)))
    smallest_train = min(train.size for train, _ in splits)
    if smallest_train < partition.n_max:
        k = int(np.argmax(partition.sizes))
        raise ModelAssumptionError(
            f"a fold keeps {smallest_train} training columns, fewer than n_k={partition.n_max} of group {partition.labels[k]}",
            group_id=partition.labels[k],
        )

    z = x @ w_hat
    logger.info(f"Selecting lambda over {grid.size} values with {folds} column folds")
    with ThreadPoolExecutor(max_workers=settings.max_workers(threads)) as executor:
        fold_results = list(executor.map(
            lambda split: _fold_predictions(y, x, z, partition, split[0], split[1], mode, eta_k),
            splits,
        ))

    records = []
    for lam in grid:
        record = {"lambda": float(lam)}
        total = 0.0
        indicator_rows = 0
        for f, (beta, scales, err_ind, err_wtd) in enumerate(fold_results):
            indicator = beta <= lam * scales
            loss = float(np.sum(np.where(indicator, err_ind, err_wtd)))
            record[f"fold_{f}"] = loss
            total += loss
            indicator_rows += int(indicator.sum())
        record["cv_loss"] = total
        record["indicator_fraction"] = indicator_rows / (len(fold_results) * partition.n)
        records.append(record)
    table = pd.DataFrame.from_records(records)
    table = table[["lambda", "cv_loss", "indicator_fraction"] + [f"fold_{f}" for f in range(folds)]]

    best = int(np.argmin(table["cv_loss"].to_numpy()))
    selected = float(table["lambda"].iloc[best])
    logger.info(f"Selected lambda={selected:.4f} (cv_loss={table['cv_loss'].iloc[best]:.6g})")
    return selected, table
