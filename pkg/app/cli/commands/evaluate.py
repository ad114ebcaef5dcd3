import argparse
import logging
from pathlib import Path

import pandas as pd

from app.cli.common import add_threads_argument, execute, output_dir
from app.core.config import settings
from app.core.errors import InputValidationError
from app.models.models import GroupPartition
from app.schemas.schemas import SweepSpec
from app.services.matrix_io import matrix_io
from app.services.pipeline import pipeline
from app.services.sim_bench import sim_bench

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Сравнить оценки с истиной или прогнать сетку экспериментов")
    parser.add_argument("--fit-dir", dest="fit_dir", help="Каталог с w1.tsv, w2.tsv, pi_hat.tsv")
    parser.add_argument("--truth-dir", dest="truth_dir", help="Каталог с w_true.tsv, pi_true.tsv, groups.tsv")
    parser.add_argument("--sweep", help="JSON с полями SweepSpec")
    add_threads_argument(parser)
    parser.add_argument("--out", help="Каталог для результатов")
    parser.set_defaults(handler=run)


def _records(table: pd.DataFrame) -> list:
    return table.astype(object).where(table.notna(), None).to_dict(orient="records")


def _evaluate_pair(args: argparse.Namespace) -> None:
    if not (args.fit_dir and args.truth_dir):
        raise InputValidationError("eval needs --fit-dir and --truth-dir, or --sweep")
    fit_dir, truth_dir = Path(args.fit_dir), Path(args.truth_dir)
    partition = matrix_io.read_groups(truth_dir / "groups.tsv")
    true_w = matrix_io.read_matrix(truth_dir / "w_true.tsv")
    true_pi = matrix_io.read_mapping(truth_dir / "pi_true.tsv", partition)
    # Π̂ может быть оценена на более грубом разбиении, поэтому читаем её без блочных ограничений
    pi_hat = matrix_io.read_mapping(fit_dir / "pi_hat.tsv", GroupPartition.from_sizes([partition.n]))
    w1 = matrix_io.read_matrix(fit_dir / "w1.tsv")
    w2 = matrix_io.read_matrix(fit_dir / "w2.tsv")

    metrics = pipeline.evaluate_estimates(w2, pi_hat, true_w, true_pi, w1=w1)
    out = output_dir(args.out)
    matrix_io.write_json(out / "metrics.json", {"format_version": settings.FORMAT_VERSION, **metrics.model_dump()})
    matrix_io.write_table(out / "metrics.tsv", pd.DataFrame([metrics.model_dump()]))
    logger.info(f"W MSE {metrics.w_mse:.6g}, match rate {metrics.match_rate:.4f}")


def _evaluate_sweep(args: argparse.Namespace) -> None:
    spec = SweepSpec.model_validate(matrix_io.read_json(args.sweep))
    table = sim_bench.run_sweep(spec, threads=args.threads)
    out = output_dir(args.out)
    matrix_io.write_table(out / "sweep.tsv", table.records)
    matrix_io.write_json(out / "sweep.json", {
        "format_version": settings.FORMAT_VERSION,
        "axis": table.axis,
        "records": _records(table.records),
        "summary": _records(table.summary),
    })
    logger.info(f"Sweep over {table.axis} written to {out}")


def _evaluate(args: argparse.Namespace) -> None:
    if args.sweep:
        _evaluate_sweep(args)
    else:
        _evaluate_pair(args)


def run(args: argparse.Namespace) -> int:
    return execute(_evaluate, args)
