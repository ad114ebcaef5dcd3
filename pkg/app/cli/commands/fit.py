import argparse
import logging

import numpy as np

from app.cli.common import add_threads_argument, execute, load_config, output_dir
from app.core.config import settings
from app.core.errors import InputValidationError
from app.schemas.schemas import FitConfig, FitManifest
from app.services import linalg_core
from app.services.matrix_io import matrix_io
from app.services.pipeline import pipeline

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

REFINEMENTS = {"matched": "matched-only", "corrected": "corrected-one-to-one"}


def register(subparsers) -> None:
    parser = subparsers.add_parser("fit", help="Оценить W и Π по X, Y и разбиению на группы")
    parser.add_argument("--x", required=True, help="MatrixFile с предикторами")
    parser.add_argument("--y", required=True, help="MatrixFile с откликами")
    parser.add_argument("--groups", required=True, help="GroupFile")
    parser.add_argument("--config", help="JSON с полями FitConfig; флаги имеют приоритет")
    parser.add_argument("--normalize", action="store_true", help="Нормировать строки вместо отказа")
    parser.add_argument(
        "--threshold-mode",
        dest="threshold_mode",
        choices=["fixed", "group-size", "prior-fraction", "flatness"],
    )
    parser.add_argument("--lambda", dest="lambda_", type=float, help="Фиксированный порог (без кросс-валидации)")
    parser.add_argument("--eta", type=float, nargs="+", help="Априорные доли η_k для prior-fraction")
    parser.add_argument("--folds", type=int)
    parser.add_argument("--max-iterations", dest="max_iterations", type=int)
    parser.add_argument("--refine", choices=sorted(REFINEMENTS))
    parser.add_argument("--seed", type=int)
    add_threads_argument(parser)
    parser.add_argument("--out", help="Каталог для результатов")
    parser.set_defaults(handler=run)


def _prepare(matrix: np.ndarray, name: str, normalize: bool) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > settings.UNIT_NORM_TOL)
    if bad.size == 0:
        return matrix
    if not normalize:
        raise InputValidationError(
            f"{name} row {int(bad[0])} has norm {norms[bad[0]]:.6g}; rows must be unit length (use --normalize)"
        )
    logger.warning(f"Normalizing {bad.size} rows of {name}")
    return linalg_core.row_normalize(matrix)


def _build_config(args: argparse.Namespace) -> FitConfig:
    data = load_config(args.config, {
        "folds": args.folds,
        "max_iterations": args.max_iterations,
        "refinement": REFINEMENTS.get(args.refine) if args.refine else None,
        "seed": args.seed,
        "threads": args.threads or None,
    })
    threshold = dict(data.get("threshold") or {})
    threshold.update({
        key: value
        for key, value in (("mode", args.threshold_mode), ("lambda", args.lambda_), ("eta_k", args.eta))
        if value is not None
    })
    data["threshold"] = threshold
    return FitConfig.model_validate(data)


def _fit(args: argparse.Namespace) -> None:
    config = _build_config(args)
    x = _prepare(matrix_io.read_matrix(args.x), "x", args.normalize)
    y = _prepare(matrix_io.read_matrix(args.y), "y", args.normalize)
    partition = matrix_io.read_groups(args.groups)

    report = pipeline.fit(x, y, partition, config)
    out = output_dir(args.out)
    matrix_io.write_matrix(out / "w1.tsv", report.w1)
    matrix_io.write_matrix(out / "w2.tsv", report.w2)
    matrix_io.write_mapping(out / "pi_hat.tsv", report.pi_hat)
    if report.cv_table is not None:
        matrix_io.write_table(out / "cv_table.tsv", report.cv_table)
    manifest = FitManifest(config=config.model_dump(by_alias=True, exclude={"threads"}), report=report.summary())
    matrix_io.write_json(out / "report.json", manifest.model_dump())
    logger.info(f"Fit results written to {out}")


def run(args: argparse.Namespace) -> int:
    return execute(_fit, args)
