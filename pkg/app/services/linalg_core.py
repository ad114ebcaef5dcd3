import logging
from typing import Optional

import numpy as np

from app.core.config import settings
from app.core.errors import InputValidationError, NumericalError, RankDeficiencyError
from app.models.models import DenseMatrix, OrthogonalMatrix, SphericalMatrix, SvdResult

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


def _check_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InputValidationError(f"{name} contains non-finite entries")
    return a


def svd(a: DenseMatrix) -> SvdResult:
    """
    Тонкое SVD с воспроизводимыми знаками

    Знаки выбираются так, чтобы наибольший по модулю элемент каждого
    левого сингулярного вектора был положительным.

    Args:
        a: Матрица m×n с конечными элементами

    Returns:
        SvdResult (u: m×r, singular_values: r, vt: r×n), r = min(m, n)
    """
    a = _check_finite(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as e:
        logger.error(f"SVD did not converge for {a.shape} matrix: {e}")
        raise NumericalError(f"SVD did not converge: {e}")
    if u.size:
        pivot = np.argmax(np.abs(u), axis=0)
        signs = np.sign(u[pivot, np.arange(u.shape[1])])
        signs[signs == 0] = 1.0
        u = u * signs
        vt = vt * signs[:, None]
    return SvdResult(u=u, singular_values=s, vt=vt)


def singular_values(a: DenseMatrix) -> np.ndarray:
    a = _check_finite(a)
    try:
        return np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"SVD did not converge: {e}")


def smallest_singular_value(a: DenseMatrix) -> float:
    """σ_min(a) - последний из min(m, n) сингулярных чисел"""
    s = singular_values(a)
    return float(s[-1]) if s.size else 0.0


def polar_factor(a: DenseMatrix) -> OrthogonalMatrix:
    """
    Ортогональный множитель полярного разложения U(a) = a (aᵀa)^{-1/2}

    Args:
        a: Квадратная невырожденная матрица p×p

    Returns:
        Ортогональная матрица u·vt
    """
    a = _check_finite(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputValidationError(f"polar factor needs a square matrix, got shape {a.shape}")
    result = svd(a)
    s = result.singular_values
    if s.size == 0 or s[0] == 0.0 or s[-1] < settings.SINGULAR_REL_TOL * s[0]:
        raise RankDeficiencyError(
            f"matrix is rank deficient: sigma_p={s[-1] if s.size else 0.0:.3e}, "
            f"sigma_1={s[0] if s.size else 0.0:.3e}",
            singular_values=s,
        )
    return result.u @ result.vt


def pseudo_inverse(a: DenseMatrix, rel_tol: Optional[float] = None) -> DenseMatrix:
    """
    Псевдообратная Мура - Пенроуза

    Сингулярные числа ниже rel_tol·σ_1 считаются нулевыми.
    """
    rel_tol = settings.PINV_REL_TOL if rel_tol is None else rel_tol
    if rel_tol < 0:
        raise InputValidationError("rel_tol must be non-negative")
    a = _check_finite(a)
    result = svd(a)
    s = result.singular_values
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > rel_tol * s[0]
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (result.vt.T * inv) @ result.u.T


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise InputValidationError("cosine is undefined for a zero-norm vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def row_normalize(a: DenseMatrix) -> SphericalMatrix:
    """
    Делит каждую строку на её евклидову норму

    Raises:
        InputValidationError: если есть нулевая строка (с её индексом)
    """
    a = _check_finite(a)
    norms = np.linalg.norm(a, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise InputValidationError(f"row {int(zero[0])} has zero norm and cannot be normalized")
    return a / norms[:, None]


def check_spherical(a: np.ndarray, name: str = "matrix", tol: float = 1e-10) -> SphericalMatrix:
    """Проверяет, что все строки единичной длины (с допуском tol)"""
    a = _check_finite(a, name)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 2:
        raise InputValidationError(f"{name} must be an n×p matrix with n >= 1 and p >= 2, got shape {a.shape}")
    deviation = np.abs(np.linalg.norm(a, axis=1) - 1.0)
    worst = int(np.argmax(deviation))
    if deviation[worst] > tol:
        raise InputValidationError(
            f"{name} row {worst} has norm deviating from 1 by {deviation[worst]:.3e} (tolerance {tol:g})"
        )
    return a


def orthogonality_defect(w: DenseMatrix) -> float:
    """‖W Wᵀ − I‖_F"""
    w = np.asarray(w, dtype=float)
    return float(np.linalg.norm(w @ w.T - np.eye(w.shape[0])))
