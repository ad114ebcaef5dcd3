import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import SphereMapError
from app.services.matrix_io import matrix_io

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2


def add_threads_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads",
        type=int,
        default=0,
        help="Максимальное число потоков (по умолчанию SPHEREMAP_THREADS или число ядер)",
    )


def format_validation_error(error: ValidationError) -> str:
    """Первая ошибка pydantic в виде 'поле: сообщение'"""
    first = error.errors()[0]
    field = ".".join(str(part) for part in first.get("loc", ())) or "config"
    message = str(first.get("msg", "invalid value"))
    if message.startswith("Value error, "):
        message = message[len("Value error, "):]
    return f"{field}: {message}"


def load_config(path: Optional[str], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """JSON-конфигурация с переопределением заданными флагами"""
    data: Dict[str, Any] = matrix_io.read_json(path) if path else {}
    data.update({key: value for key, value in overrides.items() if value is not None})
    return data


def output_dir(path: Optional[str]) -> Path:
    out = Path(path or settings.OUTPUT_FOLDER)
    out.mkdir(parents=True, exist_ok=True)
    return out


def execute(action: Callable[[argparse.Namespace], None], args: argparse.Namespace) -> int:
    """
    Выполняет команду и переводит исключения в коды завершения

    Returns:
        0 - успех, 2 - ошибка входных данных или конфигурации,
        3 - нарушение модельных предположений или численный сбой
    """
    try:
        action(args)
        return EXIT_OK
    except ValidationError as e:
        message = format_validation_error(e)
        logger.error(f"Invalid configuration for '{args.command}': {message}")
        print(f"error: {message}", file=sys.stderr)
        return EXIT_INPUT
    except SphereMapError as e:
        logger.error(f"{type(e).__name__} in '{args.command}': {e.detail}")
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
