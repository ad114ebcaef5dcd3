import argparse
import logging

import pandas as pd

from app.cli.common import execute, load_config, output_dir
from app.core.config import settings
from app.schemas.schemas import SimConfig, SimulationManifest
from app.services.matrix_io import matrix_io
from app.services.sim_bench import sim_bench

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("simulate", help="Сгенерировать синтетический набор X, Y, W, Π")
    parser.add_argument("--config", help="JSON с полями SimConfig; флаги имеют приоритет")
    parser.add_argument("--n", type=int)
    parser.add_argument("--p", type=int)
    parser.add_argument("--kappa", type=float)
    parser.add_argument("--K", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--n-mis", dest="n_mis", type=int)
    parser.add_argument("--min-beta", dest="min_beta", type=float)
    parser.add_argument("--mixture-ratio", dest="mixture_ratio", type=float)
    parser.add_argument("--merge-fraction", dest="merge_fraction", type=float)
    parser.add_argument(
        "--scenario",
        choices=["standard", "coarse-groups", "permutation-only", "low-noise"],
    )
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="Каталог для результатов")
    parser.set_defaults(handler=run)


def _simulate(args: argparse.Namespace) -> None:
    overrides = {
        name: getattr(args, name)
        for name in ("n", "p", "kappa", "K", "alpha", "n_mis", "min_beta", "mixture_ratio", "merge_fraction", "scenario", "seed")
    }
    config = SimConfig.model_validate(load_config(args.config, overrides))
    truth = sim_bench.generate(config)
    out = output_dir(args.out)

    matrix_io.write_matrix(out / "x.tsv", truth.x)
    matrix_io.write_matrix(out / "y.tsv", truth.y)
    matrix_io.write_matrix(out / "w_true.tsv", truth.w_true)
    matrix_io.write_mapping(out / "pi_true.tsv", truth.pi_true)
    matrix_io.write_groups(out / "groups.tsv", truth.partition)
    matrix_io.write_table(out / "components.tsv", pd.DataFrame({"row": range(truth.partition.n), "component": truth.components}))
    if config.scenario == "coarse-groups":
        coarse = sim_bench.coarse_group_scenario(truth, config.merge_fraction)
        matrix_io.write_groups(out / "groups_coarse.tsv", coarse)

    manifest = SimulationManifest(
        config=config.model_dump(),
        seed=config.seed,
        n_mis=truth.n_mis,
        redistributed=truth.redistributed,
        group_sizes=[int(s) for s in truth.partition.sizes],
        counts=truth.pi_true.counts(),
    )
    matrix_io.write_json(out / "manifest.json", manifest.model_dump())
    logger.info(f"Simulation written to {out}")


def run(args: argparse.Namespace) -> int:
    return execute(_simulate, args)
