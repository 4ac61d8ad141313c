"""Константы CLI partmask-hub."""

PROG = "partmask"

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

COMMANDS: dict[str, str] = {
    "gen --count N [--seed S --out DIR --negative]": "Сгенерировать архив сцен",
    "train --archive DIR [--epochs E --lambda-k K --no-mask ...]": (
        "Обучить сеть и сохранить чекпойнт"
    ),
    "eval --checkpoint FILE --archive DIR [--top-m M]": "Метрики интерпретируемости",
    "compare --checkpoints F1 F2 ... --archive DIR": "Сравнить варианты обучения",
    "verify": "Проверки градиентов, разложения и шаблонов",
    "viz --checkpoint FILE --archive DIR --filters 0,1": "PGM-визуализации фильтров",
}

HELP_ALIGNMENT = 62
DEFAULT_ARCHIVE_NAME = "scenes"
DEFAULT_VIZ_IMAGES = 4
