"""Filter loss (минус взаимная информация), её градиенты и онлайн-оценки.

Правдоподобие положения mu для карты x: p(x|mu) = exp(s_mu(x)) / Z_mu, где
s_mu: score из ``location_scores``. Все экспоненты считаются в лог-домене
со сдвигом по максимуму.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from partmask_hub.core.exceptions import (
    EmptyInputError,
    InvalidParameterError,
    ShapeMismatchError,
    UnassignedCategoryError,
)
from partmask_hub.core.templates import TemplateBank, location_scores
from partmask_hub.core.tensor import Tensor
from partmask_hub.core.utils import first_argmax, validate_open_unit

DEFAULT_DECAY = 0.99


def logsumexp(values: np.ndarray, axis: int | None = None) -> np.ndarray:
    """log(sum(exp(values))) со сдвигом по максимуму."""
    peak = np.max(values, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    total = np.log(np.sum(np.exp(values - peak), axis=axis, keepdims=True)) + peak
    if axis is None:
        return total.reshape(())
    return np.squeeze(total, axis=axis)


def _as_map_set(maps: Sequence[Tensor] | Tensor, bank: TemplateBank) -> Tensor:
    array = np.asarray(maps, dtype=np.float64)
    if array.ndim == 2:
        array = array[np.newaxis]
    if array.ndim != 3 or array.shape[0] == 0:
        raise EmptyInputError("набор карт признаков X")
    if array.shape[1:] != (bank.n, bank.n):
        raise ShapeMismatchError(
            operation="filter_loss",
            expected=(bank.n, bank.n),
            actual=array.shape[1:],
        )
    return array


class PartitionTerms(NamedTuple):
    """Лог-величины правдоподобий на конечном наборе X."""

    scores: Tensor  # [K, |Omega|]
    log_z: Tensor  # [|Omega|]
    log_cond: Tensor  # log p(x|mu), [K, |Omega|]
    log_px: Tensor  # log p(x), [K]


def partition_terms(
    maps: Sequence[Tensor] | Tensor,
    bank: TemplateBank,
    log_z: Tensor | None = None,
) -> PartitionTerms:
    """Z_mu = sum_x exp(s_mu(x)) и p(x) = sum_mu p(mu) p(x|mu).

    При переданном log_z значения Z_mu заморожены (суррогат для проверки
    градиентов конечными разностями).
    """
    array = _as_map_set(maps, bank)
    scores = location_scores(array, bank)
    if log_z is None:
        log_z = logsumexp(scores, axis=0)
    log_cond = scores - log_z[np.newaxis, :]
    log_px = logsumexp(np.log(bank.prior)[np.newaxis, :] + log_cond, axis=1)
    return PartitionTerms(scores, np.asarray(log_z), log_cond, log_px)


def _loss_from_terms(terms: PartitionTerms, bank: TemplateBank) -> float:
    cond = np.exp(terms.log_cond)
    pointwise = terms.log_cond - terms.log_px[:, np.newaxis]
    return float(-np.sum(bank.prior[np.newaxis, :] * cond * pointwise))


def _grad_from_terms(terms: PartitionTerms, bank: TemplateBank) -> Tensor:
    weights = (
        bank.prior[np.newaxis, :]
        * np.exp(terms.log_cond)
        * (terms.log_cond - terms.log_px[:, np.newaxis])
    )
    return -np.tensordot(weights, bank.stack, axes=([1], [0]))


@dataclass(frozen=True, eq=False)
class FilterLossResult:
    loss: float
    gradients: Tensor  # [K, n, n]
    log_z: Tensor


def filter_loss_exact(
    maps: Sequence[Tensor] | Tensor,
    bank: TemplateBank,
) -> FilterLossResult:
    """Loss = -sum_mu p(mu) sum_x p(x|mu) log[p(x|mu) / p(x)].

    Градиенты: полная сумма по mu при замороженных Z_mu:
    dLoss/dx_ij = -sum_mu p(mu) t_mu,ij p(x|mu) {s_mu - log Z_mu - log p(x)}.
    """
    terms = partition_terms(maps, bank)
    return FilterLossResult(
        loss=_loss_from_terms(terms, bank),
        gradients=_grad_from_terms(terms, bank),
        log_z=terms.log_z,
    )


def surrogate_loss(
    maps: Sequence[Tensor] | Tensor,
    bank: TemplateBank,
    log_z: Tensor,
) -> float:
    """Та же потеря при фиксированных Z_mu (объект конечных разностей)."""
    return _loss_from_terms(partition_terms(maps, bank, log_z=log_z), bank)


# --------------------------------------------------------------- filter state


@dataclass(frozen=True, eq=False)
class FilterState:
    """Онлайн-оценки log Z_mu и log p(x) одного фильтра и его категория.

    log_z: EMA от exp(s_mu(x)) (среднее на карту); log_px: EMA от
    sum_mu p(mu) exp(s_mu(x) - log Z_mu).
    """

    log_z: Tensor | None = field(default=None, repr=False)
    log_px: float = 0.0
    target_category: int | None = None
    update_count: int = 0
    decay: float = DEFAULT_DECAY

    def with_category(self, category: int | None) -> "FilterState":
        if category is not None and category < 0:
            raise InvalidParameterError(
                name="target_category",
                value=category,
                constraint=">= 0",
            )
        return replace(self, target_category=category)


def new_filter_state(decay: float = DEFAULT_DECAY) -> FilterState:
    return FilterState(decay=validate_open_unit("decay", decay))


def update_state(state: FilterState, x: Tensor, bank: TemplateBank) -> FilterState:
    """EMA-обновление log Z_mu и log p(x) по одной карте (в лог-домене).

    Первое обновление засевает оценки значениями выборки.
    """
    scores = location_scores(np.asarray(x, dtype=np.float64), bank)
    if scores.shape != (bank.size,):
        raise ShapeMismatchError(
            operation="update_state",
            expected=(bank.n, bank.n),
            actual=np.shape(x),
        )
    log_prior = np.log(bank.prior)
    if state.update_count == 0 or state.log_z is None:
        log_z = scores.copy()
        log_px = float(logsumexp(log_prior + scores - log_z))
    else:
        keep = np.log(state.decay)
        take = np.log1p(-state.decay)
        log_z = np.logaddexp(keep + state.log_z, take + scores)
        sample_px = float(logsumexp(log_prior + scores - log_z))
        log_px = float(np.logaddexp(keep + state.log_px, take + sample_px))
    return replace(
        state,
        log_z=log_z,
        log_px=log_px,
        update_count=state.update_count + 1,
    )


def select_mu_hat(
    x: Tensor,
    category: int,
    state: FilterState,
    bank: TemplateBank,
    *,
    warmup: bool = False,
) -> int:
    """mu^ = argmax x для целевой категории, иначе mu-.

    До первого назначения категории (warmup) всегда используется argmax.
    """
    if state.target_category is None:
        if not warmup:
            raise UnassignedCategoryError()
        return first_argmax(x)
    if category == state.target_category:
        return first_argmax(x)
    return bank.negative_index


def filter_loss_grad_approx(
    x: Tensor,
    mu_hat: int,
    state: FilterState,
    bank: TemplateBank,
) -> Tensor:
    """Одночленное приближение градиента по положению mu^ (индекс или mu-).

    -(p(mu^) t^_ij / Z_mu^) exp(s_mu^) {s_mu^ - log Z_mu^ - log p(x)}
    с текущими онлайн-оценками Z и p(x).
    """
    if state.update_count <= 0 or state.log_z is None:
        raise EmptyInputError("онлайн-оценки Z_mu (update_count = 0)")
    if not 0 <= mu_hat < bank.size:
        raise InvalidParameterError(
            name="mu_hat",
            value=mu_hat,
            constraint=f"индекс в [0, {bank.size})",
        )
    template = bank.stack[mu_hat]
    if np.shape(x) != template.shape:
        raise ShapeMismatchError(
            operation="filter_loss_grad_approx",
            expected=template.shape,
            actual=np.shape(x),
        )
    score = float(np.sum(np.asarray(x) * template))
    log_ratio = score - float(state.log_z[mu_hat])
    prefactor = bank.prior[mu_hat] * np.exp(log_ratio) * (log_ratio - state.log_px)
    return -prefactor * template


# ---------------------------------------------------------- category tallies


def assign_category(activation_sums: Mapping[int, Sequence[float] | float]) -> int:
    """c^ = argmax_c E_{I in c} sum_ij x_ij; при равенстве меньший индекс."""
    best_category: int | None = None
    best_mean = -np.inf
    for category in sorted(activation_sums):
        values = np.atleast_1d(np.asarray(activation_sums[category], dtype=float))
        if values.size == 0:
            continue
        mean = float(values.mean())
        if mean > best_mean:
            best_category, best_mean = category, mean
    if best_category is None:
        raise EmptyInputError("записи активаций по категориям")
    return best_category


class CategoryTally:
    """Накопитель sum_ij x_ij по фильтрам и категориям за эпоху."""

    def __init__(self, num_filters: int, num_categories: int) -> None:
        self.sums = np.zeros((num_filters, num_categories))
        self.counts = np.zeros(num_categories, dtype=np.int64)

    def add(self, maps: Tensor, categories: Sequence[int]) -> None:
        """maps: [N, M, n, n]; categories: [N]. Отрицательные примеры (< 0)
        не учитываются."""
        totals = maps.sum(axis=(2, 3))
        for row, category in zip(totals, categories):
            if category < 0:
                continue
            self.sums[:, category] += row
            self.counts[category] += 1

    def assign(self) -> list[int]:
        if not self.counts.any():
            raise EmptyInputError("записи активаций по категориям")
        assigned = []
        for filter_sums in self.sums:
            means = {
                int(c): filter_sums[c] / self.counts[c]
                for c in np.flatnonzero(self.counts)
            }
            assigned.append(assign_category(means))
        return assigned


# -------------------------------------------------------------- decomposition


@dataclass(frozen=True)
class DecompositionReport:
    """-H(Omega) + H(Omega'|X) + sum_x p(Omega+, x) H(Omega+|X=x)."""

    neg_H_omega: float
    H_cond_binary: float
    weighted_spatial_entropy: float
    reconstructed_loss: float


def _plogp(p: np.ndarray) -> np.ndarray:
    safe = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * np.log(safe), 0.0)


def decompose_loss(
    maps: Sequence[Tensor] | Tensor,
    bank: TemplateBank,
) -> DecompositionReport:
    """Разложение filter loss на три энтропийных слагаемых."""
    terms = partition_terms(maps, bank)
    log_prior = np.log(bank.prior)
    px = np.exp(terms.log_px)
    posterior = np.exp(
        log_prior[np.newaxis, :] + terms.log_cond - terms.log_px[:, np.newaxis],
    )
    neg_index = bank.negative_index

    neg_h_omega = float(np.sum(_plogp(bank.prior)))

    p_negative = posterior[:, neg_index]
    p_positive = posterior[:, :neg_index].sum(axis=1)
    h_binary = -(_plogp(p_negative) + _plogp(p_positive))
    h_cond_binary = float(np.sum(px * h_binary))

    safe_positive = np.where(p_positive > 0, p_positive, 1.0)
    renormalized = posterior[:, :neg_index] / safe_positive[:, np.newaxis]
    spatial_entropy = -np.sum(_plogp(renormalized), axis=1)
    weighted = float(np.sum(px * p_positive * spatial_entropy))

    return DecompositionReport(
        neg_H_omega=neg_h_omega,
        H_cond_binary=h_cond_binary,
        weighted_spatial_entropy=weighted,
        reconstructed_loss=neg_h_omega + h_cond_binary + weighted,
    )
