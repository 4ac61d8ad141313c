"""Шаблоны частей, априорное распределение положений и слой маски."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from partmask_hub.core.exceptions import InvalidParameterError, ShapeMismatchError
from partmask_hub.core.tensor import Tensor
from partmask_hub.core.utils import (
    ensure_finite,
    first_argmax,
    validate_int_at_least,
    validate_open_unit,
    validate_positive,
)

DEFAULT_BETA = 4.0


def default_tau(n: int) -> float:
    """tau = 0.5 / n^2."""
    return 0.5 / (n * n)


def default_alpha(n: int) -> float:
    """alpha = n^2 / (1 + n^2)."""
    return (n * n) / (1.0 + n * n)


@dataclass(frozen=True, eq=False)
class TemplateBank:
    """n^2 положительных шаблонов T_mu, отрицательный T- и prior p(mu).

    Индекс положения mu=[i,j] равен i*n + j; индекс n^2 отведён под фиктивное
    положение mu- («часть отсутствует»).
    """

    n: int
    tau: float
    beta: float
    alpha: float
    positives: Tensor = field(repr=False)
    negative: Tensor = field(repr=False)
    prior: Tensor = field(repr=False)
    stack: Tensor = field(repr=False)

    @property
    def negative_index(self) -> int:
        return self.n * self.n

    @property
    def size(self) -> int:
        """Число положений |Omega| = n^2 + 1."""
        return self.n * self.n + 1

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.n and 0 <= col < self.n):
            raise InvalidParameterError(
                name="mu",
                value=(row, col),
                constraint=f"координаты в [0, {self.n})",
            )
        return row * self.n + col

    def location(self, index: int) -> Tuple[int, int] | None:
        """Индекс → [row, col]; для mu- возвращает None."""
        if index == self.negative_index:
            return None
        return divmod(int(index), self.n)

    def template(self, index: int) -> Tensor:
        return self.stack[index]

    def params(self) -> dict[str, float]:
        return {
            "n": self.n,
            "tau": self.tau,
            "beta": self.beta,
            "alpha": self.alpha,
        }


def build_templates(
    n: int,
    tau: float | None = None,
    beta: float = DEFAULT_BETA,
    alpha: float | None = None,
) -> TemplateBank:
    """t+_ij = tau * max(1 - beta * ||[i,j] - mu||_1 / n, -1); t-_ij = -tau."""
    n = validate_int_at_least("n", n, 2)
    tau = validate_positive("tau", default_tau(n) if tau is None else tau)
    beta = validate_positive("beta", beta)
    alpha = validate_open_unit("alpha", default_alpha(n) if alpha is None else alpha)

    rows, cols = np.indices((n, n))
    mu_rows = rows.reshape(-1)[:, np.newaxis, np.newaxis]
    mu_cols = cols.reshape(-1)[:, np.newaxis, np.newaxis]
    distance = np.abs(rows[np.newaxis] - mu_rows) + np.abs(cols[np.newaxis] - mu_cols)
    positives = tau * np.maximum(1.0 - beta * distance / n, -1.0)
    negative = np.full((n, n), -tau)

    prior = np.empty(n * n + 1)
    prior[:-1] = alpha / (n * n)
    prior[-1] = 1.0 - alpha

    stack = np.concatenate([positives, negative[np.newaxis]], axis=0)
    for array in (positives, negative, prior, stack):
        array.setflags(write=False)
    return TemplateBank(
        n=n,
        tau=tau,
        beta=beta,
        alpha=alpha,
        positives=positives,
        negative=negative,
        prior=prior,
        stack=stack,
    )


def as_feature_map(x: object, n: int | None = None) -> Tensor:
    """Проверить карту признаков: квадратная n x n, n >= 2, значения >= 0."""
    array = np.asarray(x, dtype=np.float64)
    if array.ndim != 2 or array.shape[0] != array.shape[1] or array.shape[0] < 2:
        raise ShapeMismatchError(
            operation="feature_map",
            expected="квадратная матрица n x n, n >= 2",
            actual=array.shape,
        )
    if n is not None and array.shape[0] != n:
        raise ShapeMismatchError(
            operation="feature_map",
            expected=(n, n),
            actual=array.shape,
        )
    ensure_finite("feature_map", array)
    if np.any(array < 0):
        raise InvalidParameterError(
            name="feature_map",
            value=float(array.min()),
            constraint="все значения >= 0",
        )
    return array


def _check_maps(maps: Tensor, bank: TemplateBank, operation: str) -> None:
    if maps.shape[-2:] != (bank.n, bank.n):
        raise ShapeMismatchError(
            operation=operation,
            expected=f"[..., {bank.n}, {bank.n}]",
            actual=maps.shape,
        )


def template_fitness(x: Tensor, template: Tensor) -> float:
    """Ненормированное лог-правдоподобие tr(x . T) = sum_ij x_ij t_ji."""
    if x.shape != template.shape or x.ndim != 2:
        raise ShapeMismatchError(
            operation="template_fitness",
            expected=x.shape,
            actual=template.shape,
        )
    return float(np.trace(x @ template))


def location_scores(maps: Tensor, bank: TemplateBank) -> Tensor:
    """s_mu(x) = tr(x . T_mu^T) = sum_ij x_ij t_mu,ij для всех |Omega| положений.

    Вход [..., n, n], выход [..., n^2 + 1]. Спаривание x_ij с t_mu,ij совмещает
    оцениваемое положение с положением argmax маски.
    """
    _check_maps(maps, bank, "location_scores")
    return np.tensordot(maps, bank.stack, axes=([-2, -1], [1, 2]))


@dataclass(frozen=True, eq=False)
class MaskSelection:
    """Выбранное положение mu^ и замаскированная карта max(x o T_mu^, 0)."""

    mu_hat: Tuple[int, int]
    mu_index: int
    masked: Tensor


def apply_mask(x: Tensor, bank: TemplateBank) -> MaskSelection:
    """Выбирает T_mu^ среди положительных шаблонов по argmax активации."""
    x = as_feature_map(x)
    _check_maps(x, bank, "apply_mask")
    index = first_argmax(x)
    masked = np.maximum(x * bank.positives[index], 0.0)
    return MaskSelection(mu_hat=divmod(index, bank.n), mu_index=index, masked=masked)


def mask_forward(maps: Tensor, bank: TemplateBank) -> Tuple[Tensor, np.ndarray]:
    """Пакетная маска для карт [..., n, n]: (masked, индексы mu^ [...])."""
    _check_maps(maps, bank, "mask_forward")
    lead = maps.shape[:-2]
    flat = maps.reshape(-1, bank.n * bank.n)
    indices = np.argmax(flat, axis=1)
    chosen = bank.positives[indices].reshape(maps.shape)
    masked = np.maximum(maps * chosen, 0.0)
    return masked, indices.reshape(lead)


def mask_backward(
    grad_masked: Tensor,
    maps: Tensor,
    indices: np.ndarray,
    bank: TemplateBank,
) -> Tensor:
    """d masked_ij / d x_ij = T_mu^,ij там, где выход положителен, иначе 0.

    mu^ считается константой: градиент через argmax не проходит.
    """
    if grad_masked.shape != maps.shape:
        raise ShapeMismatchError(
            operation="mask_backward",
            expected=maps.shape,
            actual=grad_masked.shape,
        )
    chosen = bank.positives[indices.reshape(-1)].reshape(maps.shape)
    active = maps * chosen > 0
    return np.where(active, grad_masked * chosen, 0.0)
