import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Literal, Tuple

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import InputValidationError, RankDeficiencyError
from app.models.models import (
    BlockMappingMatrix,
    GroundTruth,
    GroupPartition,
    MtBaselineResult,
    RowTag,
    SweepTable,
)
from app.schemas.schemas import FitConfig, SimConfig, SweepSpec
from app.services import linalg_core, vmf
from app.services.pipeline import pipeline

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Подпотоки генератора; порядок фиксирован
STREAMS = ("sizes", "centers", "components", "x", "w", "pi", "y")
MAX_WEIGHT_DRAWS = 1000
METRIC_COLUMNS = [
    "w_mse", "w_mse_normalized", "w1_mse", "w1_mse_normalized",
    "match_rate", "weight_mse", "detection_rate",
]


class SimulationBench:
    """
    Генератор синтетических данных, базовый метод MT и прогоны по сетке параметров
    """

    def group_sizes(self, n: int, K: int, p: int, sigma: float, rng: np.random.Generator) -> List[int]:
        """
        Неравные размеры групп: дискретизованное лог-нормальное распределение
        со средним n/K, обрезанное до [2, p-1] и подогнанное к сумме n
        """
        if not (2 * K <= n <= K * (p - 1)):
            raise InputValidationError(f"cannot split n={n} into K={K} groups of size in [2, {p - 1}]")
        raw = rng.lognormal(mean=math.log(n / K) - sigma ** 2 / 2.0, sigma=sigma, size=K)
        sizes = np.clip(np.rint(raw), 2, p - 1).astype(np.int64)
        diff = n - int(sizes.sum())
        while diff != 0:
            eligible = np.flatnonzero(sizes < p - 1) if diff > 0 else np.flatnonzero(sizes > 2)
            step = min(abs(diff), eligible.size)
            chosen = rng.choice(eligible, size=step, replace=False)
            sizes[chosen] += 1 if diff > 0 else -1
            diff = n - int(sizes.sum())
        return [int(s) for s in sizes]

    def generate(self, config: SimConfig) -> GroundTruth:
        """
        Генерирует X, W, Π и Y

        Args:
            config: Конфигурация эксперимента

        Returns:
            GroundTruth; при одинаковом config результат бит-в-бит совпадает
        """
        rngs = vmf.spawn_rngs(config.seed, STREAMS)
        n, p, K = config.n, config.p, config.K
        sizes = config.schedule or self.group_sizes(n, K, p, config.size_sigma, rngs["sizes"])
        partition = GroupPartition.from_sizes(sizes)
        K = partition.K

        centers = linalg_core.row_normalize(rngs["centers"].standard_normal((K, p)))
        components = self._mixture_components(partition, config.mixture_ratio, rngs["components"])
        x = vmf.sample_rows(centers[components], config.kappa, rngs["x"])

        w_true = linalg_core.svd(rngs["w"].standard_normal((p, p))).u

        pi_true, redistributed = self._plant_mapping(x, partition, config, rngs["pi"])
        means = pi_true.apply(x) @ w_true
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        y = vmf.sample_rows(means, config.kappa, rngs["y"])

        counts = pi_true.counts()
        logger.info(
            f"Generated n={n}, p={p}, K={K}, kappa={config.kappa}: "
            f"{counts['mismatched']} mismatched rows ({counts[RowTag.PERMUTED.value]} permuted, "
            f"{counts['one_to_many']} one-to-many)"
        )
        return GroundTruth(
            x=x,
            y=y,
            w_true=w_true,
            pi_true=pi_true,
            partition=partition,
            components=components,
            n_mis=counts["mismatched"],
            redistributed=redistributed,
            config=config,
        )

    def _mixture_components(self, partition: GroupPartition, ratio: float, rng: np.random.Generator) -> np.ndarray:
        # Своя компонента с весом ratio/(ratio+K-1), остальные K-1 равновероятны
        K = partition.K
        own = partition.group_index
        if K == 1:
            return own.copy()
        keep_own = rng.random(partition.n) < ratio / (ratio + K - 1)
        other = rng.integers(0, K - 1, size=partition.n)
        other = other + (other >= own)
        return np.where(keep_own, own, other)

    def _plant_mapping(
        self,
        x: np.ndarray,
        partition: GroupPartition,
        config: SimConfig,
        rng: np.random.Generator,
    ) -> Tuple[BlockMappingMatrix, int]:
        n = partition.n
        n_mis = config.mismatch_count()
        if n_mis < 2:
            logger.info(f"n_mis={n_mis} < 2: no mismatch realizable, Pi = I")
            return BlockMappingMatrix.identity(partition), 0

        n_perm = n_mis if config.scenario == "permutation-only" else n_mis // 2
        n_weighted = n_mis - n_perm

        tags = np.full(n, RowTag.IDENTITY.value, dtype="<U8")
        targets = np.arange(n, dtype=np.int64)
        pools = [list(rng.permutation(np.arange(sl.start, sl.stop))) for sl in partition.slices()]

        cycles, placed = self._draw_cycles(pools, n_perm, rng)
        for cycle in cycles:
            for a, b in zip(cycle, cycle[1:] + cycle[:1]):
                tags[a] = RowTag.PERMUTED.value
                targets[a] = b
        shortfall = n_perm - placed
        redistributed = 0
        if shortfall:
            logger.warning(f"{shortfall} permutation rows could not be placed inside groups; moving them to the one-to-many quota")
            if config.scenario != "permutation-only":
                n_weighted += shortfall
            redistributed += shortfall

        eligible = np.array(
            [i for k, pool in enumerate(pools) if partition.sizes[k] >= 2 for i in pool],
            dtype=np.int64,
        )
        if eligible.size < n_weighted:
            logger.warning(f"only {eligible.size} rows can host one-to-many weights, {n_weighted} requested")
            redistributed += n_weighted - eligible.size
            n_weighted = eligible.size
        chosen = np.sort(rng.choice(eligible, size=n_weighted, replace=False)) if n_weighted else np.empty(0, np.int64)

        weights: Dict[int, np.ndarray] = {}
        for i in chosen:
            k = partition.group_of(int(i))
            sl = partition.slice(k)
            w = self._draw_weights(partition.sizes[k], config.min_beta, rng)
            weights[int(i)] = w / np.linalg.norm(w @ x[sl])
            tags[i] = RowTag.WEIGHTED.value
            targets[i] = -1
        return BlockMappingMatrix(partition, tags, targets, weights), redistributed

    def _draw_cycles(self, pools: List[list], quota: int, rng: np.random.Generator) -> Tuple[List[List[int]], int]:
        """
        Внутригрупповые перестановки: пары строк, при нечётной квоте - цикл из трёх
        """
        cycles: List[Tuple[int, List[int]]] = []
        remaining = quota
        order = rng.permutation(len(pools))
        progress = True
        while remaining >= 2 and progress:
            progress = False
            for k in order:
                pool = pools[k]
                if remaining < 2 or len(pool) < 2:
                    continue
                take = 3 if remaining == 3 and len(pool) >= 3 else 2
                cycles.append((int(k), [int(pool.pop()) for _ in range(take)]))
                remaining -= take
                progress = True
        if remaining == 1:
            # Удлиняем существующий цикл строкой из той же группы
            for k, cycle in cycles:
                if pools[k]:
                    cycle.append(int(pools[k].pop()))
                    remaining = 0
                    break
        return [cycle for _, cycle in cycles], quota - remaining

    def _draw_weights(self, n_k: int, min_beta: float, rng: np.random.Generator) -> np.ndarray:
        best, best_beta = None, -1.0
        for _ in range(MAX_WEIGHT_DRAWS):
            w = rng.uniform(0.0, 1.0, size=n_k)
            beta = 1.0 - w.max() / np.linalg.norm(w)
            if beta >= min_beta:
                return w
            if beta > best_beta:
                best, best_beta = w, beta
        logger.warning(f"could not reach min_beta={min_beta} in a group of size {n_k}; using beta={best_beta:.3f}")
        return best

    def mt_baseline_fit(
        self,
        x: np.ndarray,
        y: np.ndarray,
        chunk: int = 1024,
        refit: Literal["self-matched", "all-matched"] = "self-matched",
    ) -> MtBaselineResult:
        """
        OLS-оценка W и глобальное сопоставление по косинусу без групп

        Args:
            x: Предикторы n×p
            y: Отклики n×p
            chunk: Размер блока строк при поиске ближайшего соседа
            refit: Повторная OLS по строкам, сопоставленным самим себе,
                или по всем парам (Y_i, X_{j_i})

        Returns:
            MtBaselineResult
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = x.shape
        s = linalg_core.singular_values(x)
        if s.size < p or s[0] == 0.0 or s[-1] < settings.SINGULAR_REL_TOL * s[0]:
            raise RankDeficiencyError("XᵀX is singular; OLS baseline is undefined", singular_values=s)
        w_ols = np.linalg.lstsq(x, y, rcond=None)[0]

        translated = x @ w_ols
        norms = np.linalg.norm(translated, axis=1)
        norms[norms == 0.0] = 1.0
        translated /= norms[:, None]
        y_unit = y / np.linalg.norm(y, axis=1, keepdims=True)
        matches = np.empty(n, dtype=np.int64)
        for start in range(0, n, chunk):
            matches[start:start + chunk] = np.argmax(y_unit[start:start + chunk] @ translated.T, axis=1)

        partition = GroupPartition.from_sizes([n])
        tags = np.where(matches == np.arange(n), RowTag.IDENTITY.value, RowTag.PERMUTED.value)
        pi_perm = BlockMappingMatrix(partition, tags, matches)

        self_matched = np.flatnonzero(matches == np.arange(n))
        if refit == "all-matched":
            w_refined = np.linalg.lstsq(x[matches], y, rcond=None)[0]
        elif refit != "self-matched":
            raise InputValidationError(f"unknown MT refit mode '{refit}'")
        elif self_matched.size > p:
            w_refined = np.linalg.lstsq(x[self_matched], y[self_matched], rcond=None)[0]
        else:
            logger.warning(f"MT baseline matched only {self_matched.size} rows to themselves; refit skipped")
            w_refined = w_ols
        return MtBaselineResult(
            w_ols=w_ols,
            w_ols_refined=w_refined,
            pi_perm=pi_perm,
            orthogonality_defect=linalg_core.orthogonality_defect(w_ols),
        )

    def coarse_group_scenario(
        self,
        truth: GroundTruth,
        merge_fraction: float = 0.4,
        folds: int = settings.CV_FOLDS,
    ) -> GroupPartition:
        """
        Огрубление групп: в каждом полном блоке из round(2/merge_fraction) групп
        сливаются первые две. Слияние пропускается, если новая группа больше
        числа обучающих столбцов в фолде кросс-валидации: p - ceil(p/folds)
        """
        partition = truth.partition
        if partition.K < 5:
            raise InputValidationError(f"coarse-group scenario needs K >= 5, got {partition.K}")
        if not (0.0 <= merge_fraction <= 1.0):
            raise InputValidationError("merge_fraction must lie in [0,1]")
        if folds < 2:
            raise InputValidationError("folds must be at least 2")
        if merge_fraction == 0.0:
            return partition
        block = max(2, int(round(2.0 / merge_fraction)))
        p = truth.x.shape[1]
        limit = p - math.ceil(p / folds)
        firsts = []
        for start in range(0, partition.K - block + 1, block):
            merged = partition.sizes[start] + partition.sizes[start + 1]
            if merged > limit:
                logger.warning(
                    f"skipping merge of groups {start} and {start + 1}: merged size {merged} "
                    f"exceeds {limit} training columns per fold"
                )
                continue
            firsts.append(start)
        coarse = partition.merge_adjacent(firsts)
        logger.info(f"Coarsened partition from K={partition.K} to K={coarse.K}")
        return coarse

    def _cell_config(self, base: SimConfig, axis: str, value: float, cell_index: int) -> SimConfig:
        data = base.model_dump()
        data["seed"] = base.seed ^ cell_index
        if axis == "n":
            data["n"] = int(value)
            data["K"] = max(1, int(round(value * base.K / base.n)))
            data["schedule"] = None
        elif axis == "K":
            data["K"] = int(value)
            data["schedule"] = None
        elif axis == "alpha":
            data["alpha"] = float(value)
            data["n_mis"] = None
        else:
            data["kappa"] = float(value)
        return SimConfig.model_validate(data)

    def run_cell(self, config: SimConfig, fit: FitConfig) -> List[Dict[str, Any]]:
        """Одна ячейка: generate → fit и MT → метрики"""
        truth = self.generate(config)
        partition = truth.partition
        if config.scenario == "coarse-groups":
            partition = self.coarse_group_scenario(truth, config.merge_fraction, folds=fit.folds)
        report = pipeline.fit(truth.x, truth.y, partition, fit)
        ours = pipeline.evaluate_against_truth(report, truth.w_true, truth.pi_true)
        mt = self.mt_baseline_fit(truth.x, truth.y)
        theirs = pipeline.evaluate_estimates(
            mt.w_ols_refined, mt.pi_perm, truth.w_true, truth.pi_true, w1=mt.w_ols, method="mt",
        )
        common = {"n_mis": truth.n_mis, "redistributed": truth.redistributed}
        return [
            {**ours.model_dump(), **common, "lambda_selected": report.lambda_selected, "orthogonality_defect": 0.0},
            {**theirs.model_dump(), **common, "lambda_selected": float("nan"), "orthogonality_defect": mt.orthogonality_defect},
        ]

    def run_sweep(self, spec: SweepSpec, threads: int = 0) -> SweepTable:
        """
        Прогон по сетке одной оси с повторами

        Ячейка с номером c (точка сетки, затем повтор) получает seed base.seed XOR c.
        Ошибка в ячейке записывается в таблицу и не прерывает прогон.
        """
        axis = spec.vary.name
        cells = list(enumerate((value, r) for value in spec.vary.values for r in range(spec.replicates)))
        fit = spec.fit.model_copy(update={"threads": 1})
        logger.info(f"Sweep over {axis}: {len(spec.vary.values)} values × {spec.replicates} replicates")

        def run(cell: Tuple[int, Tuple[float, int]]) -> List[Dict[str, Any]]:
            index, (value, replicate) = cell
            head = {"axis": axis, "value": value, "replicate": replicate, "seed": spec.base.seed ^ index}
            try:
                config = self._cell_config(spec.base, axis, value, index)
                return [{**head, **row, "error": ""} for row in self.run_cell(config, fit)]
            except Exception as e:
                logger.error(f"Sweep cell {axis}={value}, replicate={replicate} failed: {e}")
                return [{**head, "method": method, "error": str(e)} for method in ("spheremap", "mt")]

        with ThreadPoolExecutor(max_workers=settings.max_workers(threads)) as executor:
            results = list(executor.map(run, cells))

        records = pd.DataFrame.from_records([row for rows in results for row in rows])
        for column in METRIC_COLUMNS:
            if column not in records:
                records[column] = np.nan
        return SweepTable(axis=axis, records=records, summary=self.summarize(records))

    def summarize(self, records: pd.DataFrame) -> pd.DataFrame:
        """Среднее и медиана метрик по (метод, значение оси)"""
        ok = records[records["error"] == ""]
        metrics = ok[["method", "value"]].join(ok[METRIC_COLUMNS].apply(pd.to_numeric, errors="coerce"))
        summary = metrics.groupby(["method", "value"], sort=True)[METRIC_COLUMNS].agg(["mean", "median"])
        summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
        failures = records.assign(failed=records["error"] != "").groupby(["method", "value"])["failed"].sum()
        summary = summary.reindex(failures.index)
        summary["failures"] = failures.astype(int)
        return summary.reset_index()


# Создаем экземпляр симулятора
sim_bench = SimulationBench()
