"""Командный интерфейс partmask-hub."""

from __future__ import annotations

from argparse import Namespace
from pathlib import Path
from typing import Sequence

from prettytable import PrettyTable

from partmask_hub.cli import constants
from partmask_hub.cli.command_parser import build_parser
from partmask_hub.core import usecases
from partmask_hub.core.exceptions import (
    NonFiniteError,
    UnassignedCategoryError,
    VerificationError,
)
from partmask_hub.core.run_config import (
    VARIANT_INTERPRETABLE,
    RunConfig,
    build_generator_config,
    build_layer_config,
    build_train_config,
    read_config_file,
    resolve_variant,
)
from partmask_hub.core.trainer import EpochRecord
from partmask_hub.core.verification import VerificationReport, flip_sign
from partmask_hub.evaluation.report import summary_table
from partmask_hub.infra.settings import settings
from partmask_hub.logging_config import get_train_logger

HANDLED_ERRORS = (ValueError, OSError, UnassignedCategoryError)


def _print_error(error: Exception) -> None:
    if isinstance(error, NonFiniteError):
        print(f"{error} Попробуйте меньший --lr или --lambda-k.")
    elif isinstance(error, FileNotFoundError):
        print(f"Файл не найден: {error.filename or error}")
    else:
        print(error)


def _default_dir(key: str, name: str) -> str:
    return str(Path(settings.get(key)) / name)


def gen_command(args: Namespace) -> int:
    """Обработчик команды gen."""
    file_config = read_config_file(args.config)
    flags = {
        "seed": args.seed,
        "jitter": args.jitter,
        "clutter": args.clutter,
        "negative": args.negative,
    }
    run = RunConfig(
        command="gen",
        paths={
            "out": args.out
            or _default_dir("DATA_DIR", constants.DEFAULT_ARCHIVE_NAME),
        },
        generator=build_generator_config(flags, file_config),
    )
    result = usecases.generate_archive(run, args.count)
    print(
        f"Архив сцен записан: {run.paths['out']} "
        f"(сцен: {result['count']}, категорий: {result['categories']}, "
        f"отрицательных: {result['negatives']})",
    )
    return constants.EXIT_OK


def _epoch_table(log: Sequence[EpochRecord]) -> PrettyTable:
    table = PrettyTable()
    table.field_names = ["epoch", "task_loss", "filter_loss", "train_acc", "lambda"]
    for record in log:
        table.add_row(
            [
                record.epoch,
                f"{record.task_loss:.6f}",
                f"{record.filter_loss:.6f}",
                f"{record.train_acc:.4f}",
                f"{record.lam:.6g}",
            ],
        )
    table.align = "r"
    return table


def train_command(args: Namespace) -> int:
    """Обработчик команды train."""
    file_config = read_config_file(args.config)
    variant = resolve_variant(no_mask=args.no_mask, no_filter_loss=args.no_filter_loss)
    train_flags = {
        "lambda_k": args.lambda_k,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "seed": args.seed,
        "loss_kind": args.loss,
        "filter_loss": None if variant == VARIANT_INTERPRETABLE else False,
    }
    layer_flags = {"tau": args.tau, "alpha": args.alpha, "beta": args.beta}
    run = RunConfig(
        command="train",
        paths={
            "archive": args.archive
            or _default_dir("DATA_DIR", constants.DEFAULT_ARCHIVE_NAME),
            "out": args.out or _default_dir("RUNS_DIR", variant),
        },
        train=build_train_config(train_flags, file_config),
        layer=build_layer_config(layer_flags, file_config),
        variant=variant,
        interp_layers=args.interp_layers,
        verbose=args.verbose,
    )
    result = usecases.train_network(run)
    if run.verbose:
        print(_epoch_table(result["records"]))
    print(
        f"Обучение завершено ({variant}): эпох {result['epochs']}, "
        f"task loss {result['task_loss']:.6f}, "
        f"filter loss {result['filter_loss']:.6f}, "
        f"точность на обучении {result['accuracy']:.4f}",
    )
    print(f"Чекпойнт: {result['checkpoint']}")
    return constants.EXIT_OK


def _eval_run(command: str, args: Namespace, **paths: str) -> RunConfig:
    return RunConfig(
        command=command,
        paths={
            **paths,
            "archive": args.archive,
            "out": args.out or _default_dir("RUNS_DIR", command),
        },
    )


def eval_command(args: Namespace) -> int:
    """Обработчик команды eval."""
    run = _eval_run("eval", args, checkpoint=args.checkpoint)
    result = usecases.evaluate_checkpoint(
        run,
        top_m=args.top_m,
        rf_radius=args.rf_radius,
    )
    print(summary_table({result["variant"]: result["report"]}))
    print(f"Отчёты: {result['tsv']}, {result['json']}")
    return constants.EXIT_OK


def compare_command(args: Namespace) -> int:
    """Обработчик команды compare."""
    run = _eval_run("compare", args, checkpoints=",".join(args.checkpoints))
    result = usecases.compare_checkpoints(
        run,
        args.checkpoints,
        top_m=args.top_m,
        rf_radius=args.rf_radius,
    )
    print(summary_table(result["reports"]))
    return constants.EXIT_OK


def _verify_table(report: VerificationReport) -> PrettyTable:
    table = PrettyTable()
    table.field_names = ["check", "status", "detail"]
    for check in report.checks:
        table.add_row([check.name, "OK" if check.passed else "FAIL", check.detail])
    table.align = "l"
    return table


def verify_command(args: Namespace) -> int:
    """Обработчик команды verify."""
    run = RunConfig(command="verify")
    hook = flip_sign if args.flip_gradient_sign else None
    report: VerificationReport = usecases.verify_suite(run, hook)["report"]
    print(_verify_table(report))
    try:
        report.raise_for_failures()
    except VerificationError as exc:
        print(exc)
        return constants.EXIT_VERIFY_FAILED
    print("Все проверки пройдены.")
    return constants.EXIT_OK


def viz_command(args: Namespace) -> int:
    """Обработчик команды viz."""
    run = RunConfig(
        command="viz",
        paths={
            "checkpoint": args.checkpoint,
            "archive": args.archive,
            "out": args.out or _default_dir("RUNS_DIR", "viz"),
        },
    )
    result = usecases.visualize_filters(
        run,
        args.filters,
        site_index=args.site,
        images=args.images,
    )
    print(f"Записано файлов: {result['written']} в {run.paths['out']}")
    return constants.EXIT_OK


def _dispatch_command(args: Namespace) -> int:
    """Вызвать функцию-обработчик в зависимости от команды."""
    match args.command:
        case "gen":
            return gen_command(args)
        case "train":
            return train_command(args)
        case "eval":
            return eval_command(args)
        case "compare":
            return compare_command(args)
        case "verify":
            return verify_command(args)
        case "viz":
            return viz_command(args)
        case _:
            print(f"Неизвестная команда: {args.command}")
            return constants.EXIT_USAGE


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Выполнить одну команду и вернуть код выхода."""
    if not argv:
        show_help()
        return constants.EXIT_USAGE
    parser = build_parser()
    try:
        parsed = parser.parse_args(list(argv))
    except ValueError as error:
        print(error)
        return constants.EXIT_USAGE
    except SystemExit as exit_request:
        return int(exit_request.code or 0)

    get_train_logger()
    try:
        return _dispatch_command(parsed)
    except NonFiniteError as error:
        _print_error(error)
        return constants.EXIT_DIVERGED
    except HANDLED_ERRORS as error:
        _print_error(error)
        return constants.EXIT_USAGE


def show_help(commands: dict[str, str] = constants.COMMANDS) -> None:
    """Выводит справку по доступным командам."""
    print(f"{constants.PROG}: интерпретируемые фильтры CNN.")
    print("\nДоступные команды:")
    for command, description in commands.items():
        print(f"{command.ljust(constants.HELP_ALIGNMENT, ' ')}{description}")
