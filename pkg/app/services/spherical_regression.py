import logging
from typing import Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import InputValidationError, ModelAssumptionError, RankDeficiencyError
from app.models.models import DenseMatrix, OrthogonalMatrix, SphericalMatrix
from app.services import linalg_core

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


def _check_pair(x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 2 or x.shape != y.shape:
        raise InputValidationError(f"x and y must have the same n×p shape, got {x.shape} and {y.shape}")


def procrustes_fit(x: SphericalMatrix, y: SphericalMatrix) -> OrthogonalMatrix:
    """
    Решение argmin_{W Wᵀ = I} ‖Y − XW‖_F² - полярный множитель XᵀY

    Args:
        x: Предикторы n×p
        y: Отклики n×p

    Returns:
        Ортогональная матрица p×p
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_pair(x, y)
    n, p = x.shape
    if n <= p:
        raise ModelAssumptionError(f"procrustes fit needs n > p, got n={n}, p={p}")
    try:
        return linalg_core.polar_factor(x.T @ y)
    except RankDeficiencyError as e:
        logger.error(f"XᵀY is rank deficient: sigma_p(XᵀY)={e.sigma_min:.3e}")
        raise RankDeficiencyError(
            f"XᵀY is rank deficient, sigma_p(XᵀY)={e.sigma_min:.3e}",
            singular_values=e.singular_values,
        )


def procrustes_fit_subset(x: SphericalMatrix, y: SphericalMatrix, rows: Sequence[int]) -> OrthogonalMatrix:
    """Procrustes по подмножеству строк (оценённому множеству совпадений)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_pair(x, y)
    rows = np.unique(np.asarray(rows, dtype=np.int64))
    if rows.size and (rows[0] < 0 or rows[-1] >= x.shape[0]):
        raise InputValidationError("row indices out of range")
    p = x.shape[1]
    if rows.size <= p:
        raise ModelAssumptionError(f"subset fit needs more than p={p} rows, got {rows.size}")
    return procrustes_fit(x[rows], y[rows])


def frobenius_loss(x: DenseMatrix, y: DenseMatrix, w: DenseMatrix) -> float:
    """‖Y − XW‖_F²"""
    residual = np.asarray(y) - np.asarray(x) @ np.asarray(w)
    return float(np.sum(residual * residual))


def inner_product_objective(x: DenseMatrix, y: DenseMatrix, w: DenseMatrix) -> float:
    """Σ_i Y_iᵀ Wᵀ X_i"""
    return float(np.sum(np.asarray(y) * (np.asarray(x) @ np.asarray(w))))


def cosine_objective(x: DenseMatrix, y: DenseMatrix, w: DenseMatrix) -> float:
    """Σ_i cos(Y_i, Wᵀ X_i)"""
    xw = np.asarray(x) @ np.asarray(w)
    y = np.asarray(y)
    denom = np.linalg.norm(xw, axis=1) * np.linalg.norm(y, axis=1)
    if np.any(denom == 0.0):
        raise InputValidationError("cosine objective is undefined for zero rows")
    return float(np.sum(np.clip(np.sum(xw * y, axis=1) / denom, -1.0, 1.0)))


def w_mse(w_hat: DenseMatrix, w_true: DenseMatrix) -> float:
    """‖Ŵ − W‖_F²"""
    diff = np.asarray(w_hat) - np.asarray(w_true)
    return float(np.sum(diff * diff))
