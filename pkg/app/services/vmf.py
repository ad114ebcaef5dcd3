import logging
import math
from typing import Dict, Iterable, Sequence, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, ive, logsumexp

from app.core.config import settings
from app.core.errors import InputValidationError, NumericalError
from app.models.models import GroupSumTailReport, SphericalMatrix, VmfMoments, VmfParams

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Ниже этого значения масштабированная функция Бесселя считается потерявшей точность
_IVE_UNDERFLOW = 1e-280
_CF_MAX_TERMS = 200000
_SERIES_MAX_TERMS = 20000


# ---------------------------------------------------------------------------
# Генераторы случайных чисел
# ---------------------------------------------------------------------------

def make_rng(seed: Union[int, np.random.SeedSequence]) -> np.random.Generator:
    """Счётчиковый генератор Philox с явным seed"""
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(sequence))


def spawn_rngs(seed: int, names: Sequence[str]) -> Dict[str, np.random.Generator]:
    """
    Независимые именованные подпотоки от одного seed

    Поток с заданным именем зависит только от seed и позиции имени в names.
    """
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {name: make_rng(child) for name, child in zip(names, children)}


# ---------------------------------------------------------------------------
# Функции Бесселя
# ---------------------------------------------------------------------------

def bessel_ratio(nu: float, x: float) -> float:
    """
    Отношение I_{nu+1}(x) / I_nu(x)

    Основной путь - отношение экспоненциально масштабированных ive; если они
    теряют точность (большой порядок при малом аргументе), используется
    цепная дробь Гаусса, вычисляемая модифицированным методом Ленца.
    """
    if x <= 0:
        raise InputValidationError(f"bessel ratio needs x > 0, got {x}")
    num = float(ive(nu + 1.0, x))
    den = float(ive(nu, x))
    if np.isfinite(num) and np.isfinite(den) and den > _IVE_UNDERFLOW and num > _IVE_UNDERFLOW:
        return num / den
    return _bessel_ratio_cf(nu, x)


def _bessel_ratio_cf(nu: float, x: float) -> float:
    # I_{nu+1}/I_nu = 1 / (b_1 + 1/(b_2 + 1/(b_3 + ...))), b_k = 2(nu+k)/x
    tiny = 1e-300
    f = 2.0 * (nu + 1.0) / x
    c = f
    d = 0.0
    for k in range(2, _CF_MAX_TERMS):
        b = 2.0 * (nu + k) / x
        d = b + d
        d = tiny if d == 0.0 else d
        c = b + 1.0 / c
        c = tiny if c == 0.0 else c
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-15:
            return 1.0 / f
    logger.error(f"Continued fraction for I_{nu + 1}/I_{nu} at x={x} did not converge")
    raise NumericalError(f"Bessel ratio continued fraction did not converge (nu={nu}, x={x})")


def log_bessel_iv(nu: float, x: float) -> float:
    """
    log I_nu(x) без переполнения

    Args:
        nu: Порядок (nu >= 0)
        x: Аргумент (x >= 0)
    """
    if x < 0:
        raise InputValidationError(f"log_bessel_iv needs x >= 0, got {x}")
    if x == 0.0:
        return 0.0 if nu == 0 else -math.inf
    scaled = float(ive(nu, x))
    if np.isfinite(scaled) and scaled > _IVE_UNDERFLOW:
        return math.log(scaled) + x
    # Степенной ряд в логарифмической шкале
    q = 2.0 * math.log(x / 2.0)
    m = np.arange(1, _SERIES_MAX_TERMS, dtype=float)
    log_terms = np.concatenate([[0.0], np.cumsum(q - np.log(m) - np.log(nu + m))])
    return nu * math.log(x / 2.0) - float(gammaln(nu + 1.0)) + float(logsumexp(log_terms))


# ---------------------------------------------------------------------------
# Плотность и моменты
# ---------------------------------------------------------------------------

def log_normalizer(kappa: float, p: int) -> float:
    """
    log C_p(kappa)

    При kappa = 0 - логарифм обратной площади сферы S^{p-1}.
    """
    if kappa < 0:
        raise InputValidationError("kappa must be non-negative")
    if kappa == 0.0:
        return -(math.log(2.0) + 0.5 * p * math.log(math.pi) - float(gammaln(0.5 * p)))
    nu = 0.5 * p - 1.0
    return nu * math.log(kappa) - 0.5 * p * math.log(2.0 * math.pi) - log_bessel_iv(nu, kappa)


def log_density(params: VmfParams, y: np.ndarray) -> Union[float, np.ndarray]:
    """
    Логарифм плотности vMF в точке y (вектор) или в каждой строке y (матрица)
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != params.p:
        raise InputValidationError(f"y has dimension {y.shape[-1]}, expected {params.p}")
    norms = np.linalg.norm(y, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-10):
        raise InputValidationError("y must be unit-length within 1e-10")
    values = log_normalizer(params.kappa, params.p) + params.kappa * (y @ params.mu)
    return float(values) if np.ndim(values) == 0 else values


def gamma_kp(kappa: float, p: int) -> VmfMoments:
    """
    Средняя результирующая длина gamma = I_{p/2}(kappa) / I_{p/2-1}(kappa)

    Returns:
        VmfMoments(gamma, eta = 1 - gamma²)
    """
    if not kappa > 0:
        raise InputValidationError(f"gamma_kp needs kappa > 0, got {kappa}")
    if p < 2:
        raise InputValidationError("p must be at least 2")
    gamma = bessel_ratio(0.5 * p - 1.0, float(kappa))
    return VmfMoments(gamma=gamma, eta=1.0 - gamma * gamma)


# ---------------------------------------------------------------------------
# Сэмплирование
# ---------------------------------------------------------------------------

def sample_projection(kappa: float, p: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Проекции t = muᵀZ для count независимых vMF-точек (отбор Вуда)

    Плотность t пропорциональна exp(kappa t)(1 - t²)^{(p-3)/2} на [-1, 1].
    """
    if count < 0:
        raise InputValidationError("count must be non-negative")
    dim = p - 1
    if kappa == 0.0:
        return 2.0 * rng.beta(dim / 2.0, dim / 2.0, size=count) - 1.0
    b = dim / (math.sqrt(4.0 * kappa ** 2 + dim ** 2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    # log(1 - x0²) = log(4b) - 2 log(1 + b)
    c = kappa * x0 + dim * (math.log(4.0 * b) - 2.0 * math.log1p(b))

    accepted = []
    remaining = count
    while remaining > 0:
        batch = max(64, int(remaining * 1.3))
        z = rng.beta(dim / 2.0, dim / 2.0, size=batch)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=batch)
        ok = kappa * w + dim * np.log1p(-x0 * w) - c >= np.log(u)
        taken = w[ok][:remaining]
        accepted.append(taken)
        remaining -= taken.size
    return np.concatenate(accepted) if accepted else np.empty(0)


def sample_rows(means: np.ndarray, kappa: float, rng: np.random.Generator) -> SphericalMatrix:
    """
    Одна vMF-точка на каждую строку means (единичные направления среднего)
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    n, p = means.shape
    t = sample_projection(kappa, p, n, rng)
    v = rng.standard_normal((n, p))
    v -= np.sum(v * means, axis=1, keepdims=True) * means
    v_norm = np.linalg.norm(v, axis=1, keepdims=True)
    v_norm[v_norm == 0.0] = 1.0
    out = v / v_norm * np.sqrt(np.clip(1.0 - t ** 2, 0.0, None))[:, None] + t[:, None] * means
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def sample(params: VmfParams, count: int, seed: int) -> SphericalMatrix:
    """
    count независимых точек vMF(mu, kappa); детерминировано по seed
    """
    if count < 1:
        raise InputValidationError("count must be at least 1")
    rng = make_rng(seed)
    means = np.broadcast_to(params.mu, (count, params.p))
    return sample_rows(means, params.kappa, rng)


# ---------------------------------------------------------------------------
# Хвостовые оценки
# ---------------------------------------------------------------------------

def tail_bound_deviation(kappa: float, p: int, delta: float) -> float:
    """
    Верхняя оценка P(εᵀmu <= -delta), ε = Z - mu

    Справедлива при p >= 4 и (p-1)/(2 kappa) <= delta <= 2; обрезается до [0, 1].
    """
    if p < 4:
        raise InputValidationError("tail bound needs p >= 4")
    if not kappa > 0:
        raise InputValidationError("tail bound needs kappa > 0")
    lower = (p - 1) / (2.0 * kappa)
    if not (lower <= delta <= 2.0):
        raise InputValidationError(f"delta must lie in [{lower:.6g}, 2], got {delta}")
    half = 0.5 * (p - 1)
    exponent = -delta * kappa + half * (math.log(kappa) + 1.0) - half * math.log(half / delta)
    return float(min(1.0, math.exp(min(exponent, 0.0))))


def norm_tail_bound(kappa: float, p: int, delta: float) -> float:
    """P(‖ε‖ >= sqrt(2 delta)); совпадает с tail_bound_deviation, так как ‖ε‖² = -2εᵀmu"""
    return tail_bound_deviation(kappa, p, delta)


def sum_tail_bound(m: int, p: int, kappa: float, s: float) -> float:
    """
    Оценка P(Σ_{i<=m} Q_i >= m(p-1)(1+s)/kappa) для i.i.d. Q_i = ‖ε‖²
    """
    if m < 1:
        raise InputValidationError("m must be at least 1")
    if s < 0:
        raise InputValidationError("s must be non-negative")
    return float(math.exp(-0.5 * m * (p - 1) * (s - math.log1p(s))))


def max_sum_excess(group_sizes: Sequence[int], p: int, t: float) -> float:
    """
    Решение s_t уравнения s - log(1 + s) = 2(log K + t) / ((p-1) n_min)
    """
    sizes = list(group_sizes)
    target = 2.0 * (math.log(len(sizes)) + t) / ((p - 1) * min(sizes))
    if target <= 0:
        return 0.0
    upper = 1.0
    while upper - math.log1p(upper) < target:
        upper *= 2.0
    return float(brentq(lambda s: s - math.log1p(s) - target, 0.0, upper))


def group_sum_tail_check(
    group_sizes: Iterable[int],
    p: int,
    kappa: float,
    seed: int,
    trials: int = 1000,
) -> GroupSumTailReport:
    """
    Частота события max_k Σ_{l in G_k} Q_{k,l} >= 4 n_max (p-1)/kappa против оценки 1/K

    При K = 1 используется оценка для суммы i.i.d. копий с s = 3.

    Args:
        group_sizes: Размеры групп n_k
        p: Размерность
        kappa: Концентрация
        seed: Seed генератора
        trials: Число повторений

    Returns:
        GroupSumTailReport
    """
    sizes = np.asarray(list(group_sizes), dtype=np.int64)
    if sizes.size == 0 or sizes.min() < 1:
        raise InputValidationError("group sizes must be positive")
    if p < 4 or not kappa > 0 or trials < 1:
        raise InputValidationError("group sum check needs p >= 4, kappa > 0 and trials >= 1")
    K = int(sizes.size)
    n_min, n_max = int(sizes.min()), int(sizes.max())
    if 4.0 * math.log(K) > (p - 1) * n_min:
        raise InputValidationError(f"precondition 4 log K <= (p-1) n_min violated (K={K}, n_min={n_min}, p={p})")

    threshold = 4.0 * n_max * (p - 1) / kappa
    bound = 1.0 / K if K > 1 else sum_tail_bound(n_max, p, kappa, 3.0)

    rng = make_rng(seed)
    n = int(sizes.sum())
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    per_batch = max(1, 1_000_000 // n)
    exceed = 0
    done = 0
    while done < trials:
        batch = min(per_batch, trials - done)
        t = sample_projection(kappa, p, batch * n, rng).reshape(batch, n)
        q = 2.0 * (1.0 - t)
        group_sums = np.add.reduceat(q, starts, axis=1)
        exceed += int(np.sum(group_sums.max(axis=1) >= threshold))
        done += batch

    frequency = exceed / trials
    logger.info(f"Group sum tail check: K={K}, threshold={threshold:.4g}, frequency={frequency:.4g}, bound={bound:.4g}")
    return GroupSumTailReport(
        n_groups=K,
        n_max=n_max,
        n_min=n_min,
        threshold=threshold,
        bound=bound,
        exceedance_frequency=frequency,
        trials=trials,
    )
