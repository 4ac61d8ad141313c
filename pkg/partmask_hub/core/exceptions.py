"""Пользовательские исключения partmask-hub."""

from typing import Any, Sequence


class ShapeMismatchError(ValueError):
    """Размерности тензоров не согласованы."""

    def __init__(self, *, operation: str, expected: Any, actual: Any) -> None:
        message = (
            f"Несовпадение размерностей в '{operation}': "
            f"ожидалось {expected}, получено {actual}"
        )
        super().__init__(message)
        self.operation = operation
        self.expected = expected
        self.actual = actual


class NonFiniteError(ArithmeticError):
    """В градиентах, параметрах или потерях появились NaN/Inf."""

    def __init__(self, *, name: str, detail: str = "") -> None:
        message = f"Нечисловое значение (NaN/Inf) в '{name}'"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.name = name
        self.detail = detail


class InvalidParameterError(ValueError):
    """Параметр вне допустимого диапазона."""

    def __init__(self, *, name: str, value: Any, constraint: str) -> None:
        super().__init__(
            f"Недопустимое значение {name}={value!r}: требуется {constraint}",
        )
        self.name = name
        self.value = value
        self.constraint = constraint


class EmptyInputError(ValueError):
    """Пустой набор входных данных."""

    def __init__(self, what: str) -> None:
        super().__init__(f"Пустой набор данных: {what}")
        self.what = what


class UnassignedCategoryError(RuntimeError):
    """Фильтру ещё не назначена целевая категория."""

    def __init__(self, filter_index: int | None = None) -> None:
        target = "фильтру" if filter_index is None else f"фильтру {filter_index}"
        super().__init__(f"Целевая категория не назначена {target}")
        self.filter_index = filter_index


class CheckpointFormatError(ValueError):
    """Повреждённый или несовместимый контейнер GBX1."""

    def __init__(self, *, path: Any, reason: str) -> None:
        super().__init__(f"Некорректный чекпойнт '{path}': {reason}")
        self.path = path
        self.reason = reason


class ArchiveFormatError(ValueError):
    """Повреждённый архив сцен."""

    def __init__(self, *, path: Any, reason: str) -> None:
        super().__init__(f"Некорректный архив сцен '{path}': {reason}")
        self.path = path
        self.reason = reason


class VerificationError(AssertionError):
    """Проверки verify завершились с ошибками."""

    def __init__(self, failures: Sequence[str]) -> None:
        listed = "; ".join(failures)
        super().__init__(f"Проверки не пройдены ({len(failures)}): {listed}")
        self.failures = list(failures)
