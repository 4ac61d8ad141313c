"""Определение парсера команд partmask-hub CLI."""

from argparse import SUPPRESS, ArgumentParser, ArgumentTypeError

from partmask_hub.cli.constants import DEFAULT_VIZ_IMAGES, PROG


class RuArgumentParser(ArgumentParser):
    """Парсер, выводящий сообщения об ошибках и help на русском языке."""

    ERROR_REPLACEMENTS = (
        ("the following arguments are required", "требуются аргументы"),
        ("unrecognized arguments", "неизвестные аргументы"),
        ("invalid choice", "неизвестное значение"),
        ("invalid float value", "ожидается число"),
        ("invalid int value", "ожидается целое число"),
        ("expected one argument", "ожидается одно значение"),
        (" (choose from ", " (доступно: "),
    )

    HELP_REPLACEMENTS = (
        ("usage:", "использование:"),
        ("options:", "опции:"),
        ("optional arguments:", "необязательные аргументы:"),
        ("positional arguments:", "позиционные аргументы:"),
    )

    def error(self, message: str) -> None:  # type: ignore[override]
        localized = message
        for english, russian in self.ERROR_REPLACEMENTS:
            localized = localized.replace(english, russian)
        raise ValueError(f"Ошибка: {localized}")

    def format_help(self) -> str:  # type: ignore[override]
        help_text = super().format_help()
        for english, russian in self.HELP_REPLACEMENTS:
            help_text = help_text.replace(english, russian)
        return help_text

    def format_usage(self) -> str:  # type: ignore[override]
        usage_text = super().format_usage()
        return usage_text.replace("usage:", "использование:")


def filter_ids(raw: str) -> list[int]:
    """'0,3,5' → [0, 3, 5]."""
    try:
        values = [int(item) for item in raw.split(",") if item.strip()]
    except ValueError as error:
        message = f"ожидается список целых через запятую: {raw}"
        raise ArgumentTypeError(message) from error
    if not values:
        raise ArgumentTypeError("пустой список фильтров")
    return values


def _add_help_argument(parser: ArgumentParser) -> None:
    parser.add_argument(
        "-h",
        "--help",
        action="help",
        default=SUPPRESS,
        help="показать справку и выйти",
    )


def _subparser(subparsers, name: str, help_text: str) -> ArgumentParser:
    parser = subparsers.add_parser(
        name,
        help=help_text,
        add_help=False,
        prog=f"{PROG} {name}",
    )
    _add_help_argument(parser)
    return parser


def _add_config_argument(parser: ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        help="TOML с секциями [train], [generator], [layer]",
    )


def _add_eval_arguments(parser: ArgumentParser) -> None:
    parser.add_argument("--archive", required=True, help="каталог архива сцен")
    parser.add_argument("--out", help="каталог отчёта")
    parser.add_argument(
        "--top-m",
        type=int,
        default=100,
        help="число лучших изображений для нестабильности (по умолчанию 100)",
    )
    parser.add_argument(
        "--rf-radius",
        type=float,
        help="радиус рецептивного поля в пикселях (по умолчанию H/(2n))",
    )


def build_parser() -> ArgumentParser:
    """Создать парсер аргументов CLI с подкомандами."""
    parser = RuArgumentParser(prog=PROG, add_help=False)
    _add_help_argument(parser)
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen_parser = _subparser(subparsers, "gen", "Сгенерировать архив сцен")
    gen_parser.add_argument("--count", type=int, required=True)
    gen_parser.add_argument("--seed", type=int)
    gen_parser.add_argument("--out", help="каталог архива")
    gen_parser.add_argument("--jitter", type=int, help="сдвиг объекта, px")
    gen_parser.add_argument("--clutter", type=int, help="число пятен фона")
    gen_parser.add_argument(
        "--negative",
        action="store_true",
        default=None,
        help="добавить отрицательные сцены (категория -1)",
    )
    _add_config_argument(gen_parser)

    train_parser = _subparser(subparsers, "train", "Обучить сеть")
    train_parser.add_argument("--archive", help="каталог архива сцен")
    train_parser.add_argument("--out", help="каталог прогона")
    train_parser.add_argument("--lambda-k", type=float, dest="lambda_k")
    train_parser.add_argument("--tau", type=float)
    train_parser.add_argument("--alpha", type=float)
    train_parser.add_argument("--beta", type=float)
    train_parser.add_argument("--epochs", type=int)
    train_parser.add_argument("--batch-size", type=int, dest="batch_size")
    train_parser.add_argument("--lr", type=float)
    train_parser.add_argument("--seed", type=int)
    train_parser.add_argument("--loss", choices=["logistic", "softmax"])
    train_parser.add_argument(
        "--no-filter-loss",
        action="store_true",
        help="маска без filter loss (абляция)",
    )
    train_parser.add_argument(
        "--no-mask",
        action="store_true",
        help="обычный conv вместо интерпретируемого слоя",
    )
    train_parser.add_argument(
        "--interp-layers",
        type=int,
        choices=[1, 2],
        default=1,
        help="число интерпретируемых слоёв",
    )
    train_parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="показать таблицу всех эпох",
    )
    _add_config_argument(train_parser)

    eval_parser = _subparser(subparsers, "eval", "Метрики интерпретируемости")
    eval_parser.add_argument("--checkpoint", required=True)
    _add_eval_arguments(eval_parser)

    compare_parser = _subparser(subparsers, "compare", "Сравнить чекпойнты")
    compare_parser.add_argument("--checkpoints", nargs="+", required=True)
    _add_eval_arguments(compare_parser)

    verify_parser = _subparser(subparsers, "verify", "Самопроверка")
    verify_parser.add_argument(
        "--flip-gradient-sign",
        action="store_true",
        help=SUPPRESS,
    )

    viz_parser = _subparser(subparsers, "viz", "PGM-визуализации фильтров")
    viz_parser.add_argument("--checkpoint", required=True)
    viz_parser.add_argument("--archive", required=True)
    viz_parser.add_argument(
        "--filters",
        type=filter_ids,
        required=True,
        help="индексы фильтров через запятую",
    )
    viz_parser.add_argument("--site", type=int, help="индекс conv-слоя сайта")
    viz_parser.add_argument("--images", type=int, default=DEFAULT_VIZ_IMAGES)
    viz_parser.add_argument("--out", help="каталог изображений")

    return parser
