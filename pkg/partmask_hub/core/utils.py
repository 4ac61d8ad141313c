"""Вспомогательные функции для core-модуля."""

from __future__ import annotations

from typing import Any

import numpy as np

from partmask_hub.core.exceptions import InvalidParameterError, NonFiniteError


def validate_positive(name: str, value: Any) -> float:
    """Проверяет, что значение является положительным числом, и возвращает float."""
    try:
        number = float(value)
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError(
            name=name,
            value=value,
            constraint="число",
        ) from exc
    if not np.isfinite(number) or number <= 0:
        raise InvalidParameterError(name=name, value=value, constraint="> 0")
    return number


def validate_open_unit(name: str, value: Any) -> float:
    """Проверяет принадлежность интервалу (0, 1)."""
    number = validate_positive(name, value)
    if number >= 1:
        raise InvalidParameterError(name=name, value=value, constraint="в (0, 1)")
    return number


def validate_int_at_least(name: str, value: Any, minimum: int) -> int:
    """Проверяет целое значение не меньше minimum."""
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise InvalidParameterError(name=name, value=value, constraint="целое")
    if value < minimum:
        raise InvalidParameterError(
            name=name,
            value=value,
            constraint=f">= {minimum}",
        )
    return int(value)


def ensure_finite(name: str, array: np.ndarray) -> np.ndarray:
    """Бросает NonFiniteError, если в массиве есть NaN/Inf."""
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NonFiniteError(name=name, detail=f"{bad} нечисловых элементов")
    return array


def first_argmax(values: np.ndarray) -> int:
    """Индекс максимума в порядке row-major; при равенстве наименьший."""
    # np.argmax возвращает первое вхождение максимума
    return int(np.argmax(np.asarray(values).reshape(-1)))
