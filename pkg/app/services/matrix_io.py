import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import InputValidationError
from app.models.models import BlockMappingMatrix, GroupPartition

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"


class MatrixIO:
    """
    Чтение и запись текстовых форматов: матрицы, группы, отображения, JSON
    """

    def _read_header(self, path: PathLike) -> tuple:
        try:
            with open(path, "r", encoding="utf-8") as f:
                header = f.readline().rstrip("\n")
        except OSError as e:
            raise InputValidationError(f"cannot read {path}: {e}")
        parts = header[1:].split("\t") if header.startswith("#") else []
        if len(parts) != 2 or not all(part.strip().isdigit() for part in parts):
            raise InputValidationError(f"{path}: first line must be '#<rows>\\t<cols>', got {header!r}")
        return int(parts[0]), int(parts[1])

    def write_matrix(self, path: PathLike, matrix: np.ndarray) -> None:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"#{matrix.shape[0]}\t{matrix.shape[1]}\n")
            if matrix.shape[0]:
                np.savetxt(f, matrix, fmt=FLOAT_FORMAT, delimiter="\t")
        logger.info(f"Wrote {matrix.shape[0]}×{matrix.shape[1]} matrix to {path}")

    def read_matrix(self, path: PathLike) -> np.ndarray:
        """
        Читает MatrixFile; форма из заголовка должна совпадать с телом
        """
        rows, cols = self._read_header(path)
        if rows == 0:
            return np.zeros((0, cols))
        try:
            df = pd.read_csv(path, sep="\t", header=None, skiprows=1, float_precision="round_trip")
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise InputValidationError(f"{path}: malformed matrix body: {e}")
        if df.shape != (rows, cols):
            raise InputValidationError(f"{path}: header declares {rows}×{cols}, body has {df.shape[0]}×{df.shape[1]}")
        try:
            matrix = df.to_numpy(dtype=float)
        except ValueError as e:
            raise InputValidationError(f"{path}: non-numeric entry: {e}")
        if not np.all(np.isfinite(matrix)):
            raise InputValidationError(f"{path}: matrix contains non-finite entries")
        return matrix

    def write_groups(self, path: PathLike, partition: GroupPartition) -> None:
        labels = np.asarray(partition.labels)[partition.group_index]
        df = pd.DataFrame({"row": np.arange(partition.n), "group": labels})
        df.to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")

    def read_groups(self, path: PathLike) -> GroupPartition:
        """
        Читает GroupFile (row_id<TAB>group_id); группы должны идти смежными блоками
        """
        try:
            df = pd.read_csv(path, sep="\t", header=None, names=["row", "group"], dtype=str, keep_default_na=False)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, OSError) as e:
            raise InputValidationError(f"{path}: malformed group file: {e}")
        rows = pd.to_numeric(df["row"], errors="coerce")
        expected = np.arange(len(df))
        if rows.isna().any() or not np.array_equal(rows.to_numpy(dtype=float), expected):
            raise InputValidationError(f"{path}: row ids must be 0..n-1 in line order")
        if (df["group"] == "").any():
            line = int((df["group"] == "").idxmax()) + 1
            raise InputValidationError(f"{path}: missing group id at line {line}")
        return GroupPartition.from_labels(df["group"].tolist())

    def write_mapping(self, path: PathLike, mapping: BlockMappingMatrix) -> None:
        rows, cols, vals = mapping.triplets()
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"#{mapping.n}\t{mapping.n}\n")
            for i, j, v in zip(rows, cols, vals):
                f.write(f"{i}\t{j}\t{FLOAT_FORMAT % v}\n")

    def read_mapping(self, path: PathLike, partition: GroupPartition) -> BlockMappingMatrix:
        """
        Читает MappingFile; теги строк выводятся заново по содержимому
        """
        n, m = self._read_header(path)
        if n != m or n != partition.n:
            raise InputValidationError(f"{path}: mapping is {n}×{m}, partition has {partition.n} rows")
        try:
            df = pd.read_csv(
                path, sep="\t", header=None, skiprows=1, names=["row", "col", "value"],
                float_precision="round_trip",
            )
        except pd.errors.EmptyDataError:
            df = pd.DataFrame({"row": [], "col": [], "value": []})
        except pd.errors.ParserError as e:
            raise InputValidationError(f"{path}: malformed mapping body: {e}")
        if df.isna().any().any():
            raise InputValidationError(f"{path}: every mapping line needs row, col and value")
        return BlockMappingMatrix.from_triplets(
            partition,
            df["row"].to_numpy(dtype=np.int64),
            df["col"].to_numpy(dtype=np.int64),
            df["value"].to_numpy(dtype=float),
        )

    def write_json(self, path: PathLike, data: Dict[str, Any]) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default)
            f.write("\n")

    def read_json(self, path: PathLike) -> Dict[str, Any]:
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise InputValidationError(f"cannot read JSON from {path}: {e}")

    def write_table(self, path: PathLike, table: pd.DataFrame) -> None:
        table.to_csv(path, sep="\t", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


# Создаем экземпляр ввода-вывода
matrix_io = MatrixIO()
