import argparse
import logging

import pandas as pd

from app.cli.common import execute, output_dir
from app.core.config import settings
from app.schemas.schemas import EmbeddingManifest
from app.services.embedding_ingest import embedding_builder
from app.services.matrix_io import matrix_io

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("embed", help="Построить SPPMI-эмбеддинги из троек встречаемости")
    parser.add_argument("--input", required=True, help="Файл item_i<TAB>item_j<TAB>count")
    parser.add_argument("--k", type=int, default=settings.SPPMI_K, help="Сдвиг SPPMI")
    parser.add_argument("--alpha", type=float, default=settings.SPPMI_ALPHA, help="Сглаживание контекстов")
    parser.add_argument("--dim", type=int, required=True, help="Размерность эмбеддинга p")
    parser.add_argument("--symmetrize", action="store_true", help="Добавить обратные пары")
    parser.add_argument("--out", help="Каталог для результатов")
    parser.set_defaults(handler=run)


def _embed(args: argparse.Namespace) -> None:
    table = embedding_builder.read_triplets(args.input, symmetrize=args.symmetrize)
    sppmi = embedding_builder.build_sppmi(table, k=args.k, alpha=args.alpha)
    embedding = embedding_builder.embed(sppmi, args.dim)

    out = output_dir(args.out)
    matrix_io.write_matrix(out / "embedding.tsv", embedding.vectors)
    pd.DataFrame({"row": range(len(embedding.items)), "item": embedding.items}).to_csv(
        out / "items.tsv", sep="\t", header=False, index=False, lineterminator="\n",
    )
    manifest = EmbeddingManifest(
        k=sppmi.k,
        alpha=sppmi.alpha,
        dim=args.dim,
        symmetric=embedding.symmetric,
        items=embedding.items,
        excluded=embedding.excluded,
    )
    matrix_io.write_json(out / "manifest.json", manifest.model_dump())
    logger.info(f"Embedded {len(embedding.items)} items, excluded {len(embedding.excluded)}")


def run(args: argparse.Namespace) -> int:
    return execute(_embed, args)
