import logging
import time
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import InputValidationError, ModelAssumptionError
from app.models.models import (
    BlockMappingMatrix,
    DenseMatrix,
    FitReport,
    GroupPartition,
    OrthogonalMatrix,
    RowTag,
    SphericalMatrix,
)
from app.schemas.schemas import FitConfig, MetricSet
from app.services import linalg_core, mapping_recovery, spherical_regression

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Допуск изменения весов, при котором итерации считаются сошедшимися
CONVERGENCE_TOL = 1e-8


class Pipeline:
    """
    Трёхшаговая оценка: Procrustes → восстановление Π → уточнённый Procrustes
    """

    def fit(
        self,
        x: SphericalMatrix,
        y: SphericalMatrix,
        partition: GroupPartition,
        config: Optional[FitConfig] = None,
    ) -> FitReport:
        """
        Оценивает W и Π

        Args:
            x: Предикторы n×p (строки упорядочены по группам)
            y: Отклики n×p
            partition: Разбиение строк на группы
            config: Настройки оценки

        Returns:
            FitReport со всеми тремя стадиями и диагностикой
        """
        config = config or FitConfig()
        started = time.perf_counter()
        try:
            x = linalg_core.check_spherical(x, "x", settings.UNIT_NORM_TOL)
            y = linalg_core.check_spherical(y, "y", settings.UNIT_NORM_TOL)
            self._check_model(x, y, partition)

            logger.info(f"Step I: Procrustes fit on n={x.shape[0]}, p={x.shape[1]}, K={partition.K}")
            sigma_p_x = linalg_core.smallest_singular_value(x)
            sigma_p_xty = linalg_core.smallest_singular_value(x.T @ y)
            w1 = spherical_regression.procrustes_fit(x, y)

            w_current = w1
            previous: Optional[BlockMappingMatrix] = None
            iterations: List[Dict[str, Any]] = []
            for iteration in range(config.max_iterations):
                pi_hat, lam, cv_table = self._recover_mapping(x, y, w_current, partition, config)
                rows, x_ref, y_ref = self._refine_rows(x, y, pi_hat, config.refinement)
                w2 = spherical_regression.procrustes_fit(x_ref, y_ref)

                counts = pi_hat.counts()
                converged = (
                    previous is not None
                    and pi_hat.structure_equal(previous)
                    and pi_hat.max_weight_change(previous) < CONVERGENCE_TOL
                )
                iterations.append({
                    "iteration": iteration + 1,
                    "lambda": lam,
                    "matched": counts["matched"],
                    "permuted": counts[RowTag.PERMUTED.value],
                    "one_to_many": counts["one_to_many"],
                    "unmapped": counts[RowTag.UNMAPPED.value],
                    "refine_rows": int(rows.size),
                    "converged": bool(converged),
                })
                logger.info(
                    f"Iteration {iteration + 1}: lambda={lam:.4f}, matched={counts['matched']}, "
                    f"permuted={counts[RowTag.PERMUTED.value]}, one_to_many={counts['one_to_many']}"
                )
                previous = pi_hat
                w_current = w2
                if converged:
                    break

            pi_x = pi_hat.apply(x)
            losses = {
                "stage1": spherical_regression.frobenius_loss(x, y, w1),
                "stage2": spherical_regression.frobenius_loss(pi_x, y, w1),
                "stage3": spherical_regression.frobenius_loss(x_ref, y_ref, w2),
                "final": spherical_regression.frobenius_loss(pi_x, y, w2),
            }
            gamma_hat = spherical_regression.cosine_objective(x_ref, y_ref, w2) / rows.size
            feasibility = mapping_recovery.feasibility_summary(mapping_recovery.row_norm_feasibility(pi_hat, x))
            if feasibility["violations"]:
                logger.warning(f"{feasibility['violations']} estimated rows violate the row-norm bounds")

            report = FitReport(
                w1=w1,
                pi_hat=pi_hat,
                w2=w2,
                lambda_selected=lam,
                cv_table=cv_table,
                losses=losses,
                sigma_p_x=sigma_p_x,
                sigma_p_xty=sigma_p_xty,
                gamma_hat=gamma_hat,
                eta_hat=1.0 - gamma_hat ** 2,
                refine_rows=rows,
                refinement=config.refinement,
                iterations=iterations,
                feasibility=feasibility,
                runtime_seconds=time.perf_counter() - started,
            )
            logger.info(f"Fit finished in {report.runtime_seconds:.2f}s")
            return report
        except Exception as e:
            logger.error(f"Fit failed: {e}")
            raise

    def _check_model(self, x: np.ndarray, y: np.ndarray, partition: GroupPartition) -> None:
        if x.shape != y.shape:
            raise InputValidationError(f"x and y shapes differ: {x.shape} vs {y.shape}")
        n, p = x.shape
        if partition.n != n:
            raise InputValidationError(f"partition covers {partition.n} rows, data has {n}")
        if n <= p:
            raise ModelAssumptionError(f"the model requires n > p, got n={n}, p={p}")
        if partition.n_max >= p:
            k = int(np.argmax(partition.sizes))
            raise ModelAssumptionError(
                f"group {partition.labels[k]} has n_k={partition.n_max} >= p={p}",
                group_id=partition.labels[k],
            )

    def _recover_mapping(
        self,
        x: np.ndarray,
        y: np.ndarray,
        w_hat: OrthogonalMatrix,
        partition: GroupPartition,
        config: FitConfig,
    ):
        logger.info("Step II: blockwise OLS and thresholding")
        threshold = config.threshold
        cv_table = None
        lam = threshold.lambda_
        if lam is None:
            lam, cv_table = mapping_recovery.select_lambda(
                y, x, w_hat, partition,
                grid=config.grid,
                folds=config.folds,
                seed=config.seed,
                mode=threshold.mode,
                eta_k=threshold.eta_k,
                threads=config.threads,
            )
        pi_tilde = mapping_recovery.ols_mapping(y, x, w_hat, partition)
        pi_hat = mapping_recovery.hard_threshold(pi_tilde, x, threshold.model_copy(update={"lambda_": lam}))
        return pi_hat, lam, cv_table

    def _refine_rows(
        self,
        x: np.ndarray,
        y: np.ndarray,
        pi_hat: BlockMappingMatrix,
        refinement: str,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = x.shape[1]
        if refinement == "corrected-one-to-one":
            rows = np.flatnonzero(pi_hat.indicator_mask)
            x_ref = x[pi_hat.targets[rows]]
        else:
            rows = np.flatnonzero(pi_hat.tag_mask(RowTag.IDENTITY))
            x_ref = x[rows]
        logger.info(f"Step III: refined Procrustes on {rows.size} rows ({refinement})")
        if rows.size <= p:
            hint = " (try corrected-one-to-one refinement)" if refinement == "matched-only" else ""
            raise ModelAssumptionError(f"only {rows.size} rows available for refinement, need more than p={p}{hint}")
        return rows, x_ref, y[rows]

    def evaluate_estimates(
        self,
        w_hat: DenseMatrix,
        pi_hat: BlockMappingMatrix,
        true_w: DenseMatrix,
        true_pi: BlockMappingMatrix,
        w1: Optional[DenseMatrix] = None,
        method: str = "spheremap",
    ) -> MetricSet:
        """
        Метрики качества относительно истинных W и Π

        Args:
            w_hat: Итоговая оценка W
            pi_hat: Оценка Π
            true_w: Истинная W
            true_pi: Истинная Π
            w1: Оценка первого шага (необязательно)
            method: Название метода в отчёте

        Returns:
            MetricSet
        """
        w_hat = np.asarray(w_hat, dtype=float)
        true_w = np.asarray(true_w, dtype=float)
        if w_hat.shape != true_w.shape or w_hat.shape[0] != w_hat.shape[1]:
            raise InputValidationError(f"W shapes differ: {w_hat.shape} vs {true_w.shape}")
        if pi_hat.n != true_pi.n:
            raise InputValidationError(f"mapping sizes differ: {pi_hat.n} vs {true_pi.n}")
        p = true_w.shape[0]
        n = true_pi.n

        one_to_many = true_pi.tag_mask(RowTag.WEIGHTED)
        one_to_one = np.flatnonzero(~one_to_many)
        matched = pi_hat.indicator_mask[one_to_one] & (pi_hat.targets[one_to_one] == true_pi.targets[one_to_one])
        match_rate = float(matched.mean()) if one_to_one.size else 1.0

        c_rows = np.flatnonzero(one_to_many)
        if c_rows.size:
            diff = (pi_hat.to_sparse() - true_pi.to_sparse())[c_rows]
            weight_mse = float(diff.multiply(diff).sum()) / (c_rows.size * n)
            detected = np.intersect1d(c_rows, np.flatnonzero(pi_hat.tag_mask(RowTag.WEIGHTED))).size
            detection_rate = detected / c_rows.size
        else:
            weight_mse = 0.0
            detection_rate = 1.0

        mse = spherical_regression.w_mse(w_hat, true_w)
        w1_mse = spherical_regression.w_mse(w1, true_w) if w1 is not None else None
        return MetricSet(
            method=method,
            w_mse=mse,
            w_mse_normalized=mse / p,
            w1_mse=w1_mse,
            w1_mse_normalized=w1_mse / p if w1_mse is not None else None,
            match_rate=match_rate,
            weight_mse=weight_mse,
            detection_rate=float(detection_rate),
            n_one_to_many=int(c_rows.size),
            n_one_to_one=int(one_to_one.size),
        )

    def evaluate_against_truth(self, report: FitReport, true_w: DenseMatrix, true_pi: BlockMappingMatrix) -> MetricSet:
        return self.evaluate_estimates(report.w2, report.pi_hat, true_w, true_pi, w1=report.w1)


# Создаем экземпляр конвейера
pipeline = Pipeline()
