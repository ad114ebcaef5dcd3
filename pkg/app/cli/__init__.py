import argparse

from app.cli.commands import embed, evaluate, fit, simulate
from app.core.config import settings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spheremap", description=settings.PROJECT_DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.PROJECT_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Подключаем команды
    simulate.register(subparsers)
    fit.register(subparsers)
    embed.register(subparsers)
    evaluate.register(subparsers)
    return parser
