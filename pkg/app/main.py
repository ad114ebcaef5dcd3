import logging
import sys
from typing import List, Optional

from app.cli import build_parser
from app.core.config import settings

# Настройка логирования
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Точка входа командной строки

    Returns:
        Код завершения: 0 - успех, 2 - ошибка входа, 3 - модельный или численный сбой
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logger.debug(f"Running command '{args.command}'")
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
