#!/usr/bin/env python3

"""Точка входа partmask-hub CLI."""

import sys

from partmask_hub.cli.interface import run_cli


def main() -> None:
    """Выполнить команду из аргументов командной строки и выйти с её кодом."""
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
