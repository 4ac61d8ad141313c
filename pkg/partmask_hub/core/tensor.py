"""Плотная арифметика float64 и базовые слои свёрточной сети.

Все функции чистые: принимают массивы и возвращают новые массивы, не меняя
входы. Пространственные входы допускаются как [C, H, W], так и пакетом
[N, C, H, W]; индексы 0-based, координаты записываются [row, col].
"""

from __future__ import annotations

from enum import Enum
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

from partmask_hub.core.exceptions import (
    InvalidParameterError,
    NonFiniteError,
    ShapeMismatchError,
)
from partmask_hub.core.utils import ensure_finite, validate_int_at_least

Tensor = NDArray[np.float64]
"""Тензор ранга 1–4, float64, row-major."""


NEGATIVE_CATEGORY = -1
"""Метка отрицательного примера (только для logistic)."""


class TaskLossKind(str, Enum):
    """Вид функции потерь задачи классификации."""

    LOGISTIC = "logistic"
    SOFTMAX = "softmax"


def as_tensor(data: object, name: str = "tensor") -> Tensor:
    """Привести данные к float64 C-contiguous массиву ранга 1–4."""
    array = np.ascontiguousarray(data, dtype=np.float64)
    if not 1 <= array.ndim <= 4:
        raise ShapeMismatchError(
            operation=name,
            expected="ранг 1–4",
            actual=array.shape,
        )
    return ensure_finite(name, array)


def _batched(x: Tensor, operation: str) -> Tuple[Tensor, bool]:
    if x.ndim == 3:
        return x[np.newaxis], True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatchError(
        operation=operation,
        expected="[C,H,W] или [N,C,H,W]",
        actual=x.shape,
    )


def _unbatched(x: Tensor, squeeze: bool) -> Tensor:
    return x[0] if squeeze else x


def xavier_uniform(
    rng: np.random.Generator,
    shape: Tuple[int, ...],
    fan_in: int,
    fan_out: int,
) -> Tensor:
    """Равномерная инициализация в [-s, s], s = sqrt(6/(fan_in+fan_out))."""
    scale = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-scale, scale, size=shape).astype(np.float64)


# ---------------------------------------------------------------- convolution


def _conv_windows(xp: Tensor, kh: int, kw: int, stride: int) -> Tensor:
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def _check_conv_shapes(
    x: Tensor,
    weights: Tensor,
    bias: Tensor,
    stride: int,
    pad: int,
) -> None:
    validate_int_at_least("stride", stride, 1)
    validate_int_at_least("pad", pad, 0)
    if weights.ndim != 4:
        raise ShapeMismatchError(
            operation="conv2d",
            expected="веса [C_out,C_in,kH,kW]",
            actual=weights.shape,
        )
    if weights.shape[1] != x.shape[1]:
        raise ShapeMismatchError(
            operation="conv2d",
            expected=f"C_in={weights.shape[1]}",
            actual=f"C_in={x.shape[1]}",
        )
    if bias.shape != (weights.shape[0],):
        raise ShapeMismatchError(
            operation="conv2d",
            expected=(weights.shape[0],),
            actual=bias.shape,
        )
    kh, kw = weights.shape[2:]
    if kh > x.shape[2] + 2 * pad or kw > x.shape[3] + 2 * pad:
        raise ShapeMismatchError(
            operation="conv2d",
            expected=f"ядро не больше {x.shape[2] + 2 * pad}x{x.shape[3] + 2 * pad}",
            actual=f"{kh}x{kw}",
        )


def conv2d_forward(
    x: Tensor,
    weights: Tensor,
    bias: Tensor,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """Кросс-корреляция: H' = (H + 2*pad - kH) // stride + 1."""
    batch, squeeze = _batched(x, "conv2d_forward")
    _check_conv_shapes(batch, weights, bias, stride, pad)
    kh, kw = weights.shape[2:]
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = _conv_windows(padded, kh, kw, stride)
    # windows: [N, C, H', W', kH, kW]
    out = np.tensordot(windows, weights, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias[np.newaxis, :, np.newaxis, np.newaxis]
    return _unbatched(np.ascontiguousarray(out), squeeze)


def conv2d_backward(
    grad_out: Tensor,
    x: Tensor,
    weights: Tensor,
    stride: int = 1,
    pad: int = 0,
) -> Tuple[Tensor, Tensor, Tensor]:
    """Точные градиенты по входу, весам и смещению."""
    batch, squeeze = _batched(x, "conv2d_backward")
    grad, _ = _batched(grad_out, "conv2d_backward")
    _check_conv_shapes(batch, weights, np.zeros(weights.shape[0]), stride, pad)
    n, _, h, w = batch.shape
    c_out, _, kh, kw = weights.shape
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    if grad.shape != (n, c_out, out_h, out_w):
        raise ShapeMismatchError(
            operation="conv2d_backward",
            expected=(n, c_out, out_h, out_w),
            actual=grad.shape,
        )

    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = _conv_windows(padded, kh, kw, stride)
    grad_weights = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_bias = grad.sum(axis=(0, 2, 3))

    grad_padded = np.zeros_like(padded)
    row_stop = stride * (out_h - 1) + 1
    col_stop = stride * (out_w - 1) + 1
    for ki in range(kh):
        for kj in range(kw):
            contribution = np.tensordot(grad, weights[:, :, ki, kj], axes=([1], [0]))
            grad_padded[
                :,
                :,
                ki : ki + row_stop : stride,
                kj : kj + col_stop : stride,
            ] += contribution.transpose(0, 3, 1, 2)
    grad_input = grad_padded[:, :, pad : pad + h, pad : pad + w]
    return (
        _unbatched(np.ascontiguousarray(grad_input), squeeze),
        np.ascontiguousarray(grad_weights),
        grad_bias,
    )


# ----------------------------------------------------------------------- relu


def relu_forward(x: Tensor) -> Tensor:
    """max(x, 0) поэлементно."""
    return np.maximum(x, 0.0)


def relu_backward(grad_out: Tensor, x: Tensor) -> Tensor:
    """Градиент ReLU; в точке 0 градиент равен 0."""
    if grad_out.shape != x.shape:
        raise ShapeMismatchError(
            operation="relu_backward",
            expected=x.shape,
            actual=grad_out.shape,
        )
    return np.where(x > 0, grad_out, 0.0)


# -------------------------------------------------------------------- maxpool


def maxpool_forward(
    x: Tensor,
    window: int = 2,
    stride: int | None = None,
) -> Tuple[Tensor, NDArray[np.int64]]:
    """Максимум по окну; argmax: плоский индекс row*W+col во входной плоскости.

    При равенстве выбирается наименьший индекс в порядке row-major.
    """
    batch, squeeze = _batched(x, "maxpool_forward")
    validate_int_at_least("window", window, 1)
    step = validate_int_at_least("stride", stride or window, 1)
    _, _, h, w = batch.shape
    if window > h or window > w:
        raise ShapeMismatchError(
            operation="maxpool_forward",
            expected=f"окно не больше {h}x{w}",
            actual=f"{window}x{window}",
        )
    windows = sliding_window_view(batch, (window, window), axis=(2, 3))
    windows = windows[:, :, ::step, ::step]
    flat = windows.reshape(*windows.shape[:4], window * window)
    local = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, local[..., np.newaxis], axis=-1)[..., 0]

    out_h, out_w = out.shape[2:]
    rows = np.arange(out_h)[:, np.newaxis] * step + local // window
    cols = np.arange(out_w)[np.newaxis, :] * step + local % window
    indices = (rows * w + cols).astype(np.int64)
    return (
        _unbatched(np.ascontiguousarray(out), squeeze),
        _unbatched(indices, squeeze),
    )


def maxpool_backward(
    grad_out: Tensor,
    indices: NDArray[np.int64],
    input_shape: Tuple[int, ...],
) -> Tensor:
    """Направляет градиент в записанные позиции максимумов."""
    if grad_out.shape != indices.shape:
        raise ShapeMismatchError(
            operation="maxpool_backward",
            expected=indices.shape,
            actual=grad_out.shape,
        )
    squeeze = len(input_shape) == 3
    shape = (1, *input_shape) if squeeze else tuple(input_shape)
    grad, _ = _batched(grad_out, "maxpool_backward")
    idx, _ = _batched(indices, "maxpool_backward")
    n, c, h, w = shape
    if grad.shape[:2] != (n, c):
        raise ShapeMismatchError(
            operation="maxpool_backward",
            expected=(n, c),
            actual=grad.shape[:2],
        )
    result = np.zeros((n, c, h * w), dtype=np.float64)
    flat_idx = idx.reshape(n, c, -1)
    flat_grad = grad.reshape(n, c, -1)
    batch_ix = np.arange(n)[:, np.newaxis, np.newaxis]
    chan_ix = np.arange(c)[np.newaxis, :, np.newaxis]
    np.add.at(result, (batch_ix, chan_ix, flat_idx), flat_grad)
    return _unbatched(result.reshape(n, c, h, w), squeeze)


# ------------------------------------------------------------ fully connected


def fc_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Полносвязный слой: x[N,D] @ W[O,D]^T + b[O]."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeMismatchError(
            operation="fc_forward",
            expected=f"[N,{weights.shape[-1]}]",
            actual=x.shape,
        )
    if bias.shape != (weights.shape[0],):
        raise ShapeMismatchError(
            operation="fc_forward",
            expected=(weights.shape[0],),
            actual=bias.shape,
        )
    return x @ weights.T + bias


def fc_backward(
    grad_out: Tensor,
    x: Tensor,
    weights: Tensor,
) -> Tuple[Tensor, Tensor, Tensor]:
    """Градиенты полносвязного слоя по входу, весам и смещению."""
    if grad_out.shape != (x.shape[0], weights.shape[0]):
        raise ShapeMismatchError(
            operation="fc_backward",
            expected=(x.shape[0], weights.shape[0]),
            actual=grad_out.shape,
        )
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


# ----------------------------------------------------------------- task loss


def encode_labels(
    categories: Iterable[int],
    num_categories: int,
    kind: TaskLossKind,
) -> NDArray:
    """Индексы категорий → метки для выбранного вида потерь.

    softmax: индексы [N]; logistic: матрица {-1,+1} [N, C], независимые
    бинарные классификаторы по категориям. NEGATIVE_CATEGORY допустим только
    для logistic и даёт строку из -1.
    """
    kind = TaskLossKind(kind)
    labels = np.asarray(list(categories), dtype=np.int64)
    lowest = NEGATIVE_CATEGORY if kind is TaskLossKind.LOGISTIC else 0
    if labels.size and (labels.min() < lowest or labels.max() >= num_categories):
        raise InvalidParameterError(
            name="labels",
            value=labels.tolist(),
            constraint=f"индексы в [{lowest}, {num_categories})",
        )
    if kind is TaskLossKind.SOFTMAX:
        return labels
    signs = -np.ones((labels.size, num_categories), dtype=np.float64)
    positive = np.flatnonzero(labels >= 0)
    signs[positive, labels[positive]] = 1.0
    return signs


def count_correct(
    logits: Tensor,
    categories: Iterable[int],
    kind: TaskLossKind,
) -> int:
    """Число верных предсказаний: argmax; для logistic отрицательный пример
    верен, если все логиты < 0."""
    labels = np.asarray(list(categories), dtype=np.int64)
    hits = np.argmax(logits, axis=1) == labels
    if TaskLossKind(kind) is TaskLossKind.LOGISTIC:
        negative = labels == NEGATIVE_CATEGORY
        hits = np.where(negative, np.all(logits < 0, axis=1), hits)
    return int(np.sum(hits))


def task_loss(
    logits: Tensor,
    labels: NDArray,
    kind: TaskLossKind,
) -> Tuple[float, Tensor]:
    """Средняя потеря задачи и её точный градиент по логитам."""
    kind = TaskLossKind(kind)
    if logits.ndim != 2:
        raise ShapeMismatchError(
            operation="task_loss",
            expected="[N, C]",
            actual=logits.shape,
        )
    if kind is TaskLossKind.LOGISTIC:
        signs = np.asarray(labels, dtype=np.float64)
        if signs.shape != logits.shape:
            raise ShapeMismatchError(
                operation="task_loss",
                expected=logits.shape,
                actual=signs.shape,
            )
        if not np.all(np.abs(signs) == 1.0):
            raise InvalidParameterError(
                name="labels",
                value="...",
                constraint="значения в {-1, +1}",
            )
        margins = -signs * logits
        count = logits.size
        loss = float(np.logaddexp(0.0, margins).sum() / count)
        # d/dŷ log(1+exp(-yŷ)) = -y * sigmoid(-yŷ)
        sigmoid = np.exp(-np.logaddexp(0.0, -margins))
        return loss, -signs * sigmoid / count

    indices = np.asarray(labels)
    if indices.shape != (logits.shape[0],):
        raise ShapeMismatchError(
            operation="task_loss",
            expected=(logits.shape[0],),
            actual=indices.shape,
        )
    if not np.issubdtype(indices.dtype, np.integer) or (
        indices.size and (indices.min() < 0 or indices.max() >= logits.shape[1])
    ):
        raise InvalidParameterError(
            name="labels",
            value=indices.tolist(),
            constraint=f"индексы в [0, {logits.shape[1]})",
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(logits.shape[0])
    loss = float(-log_probs[rows, indices].mean())
    grad = np.exp(log_probs)
    grad[rows, indices] -= 1.0
    return loss, grad / logits.shape[0]


def softmax(logits: Tensor) -> Tensor:
    """Построчный softmax со сдвигом по максимуму."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def sigmoid(logits: Tensor) -> Tensor:
    """Устойчивая логистическая функция."""
    return np.exp(-np.logaddexp(0.0, -logits))


# ----------------------------------------------------------------------- sgd


def sgd_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    lr: float,
    momentum: float,
    velocities: Mapping[str, Tensor] | None = None,
) -> Tuple[Dict[str, Tensor], Dict[str, Tensor]]:
    """Классический SGD с моментом: v <- m*v + g; p <- p - lr*v.

    Возвращает новые словари параметров и буферов момента.
    """
    if lr < 0:
        raise InvalidParameterError(name="lr", value=lr, constraint=">= 0")
    if not 0.0 <= momentum < 1.0:
        raise InvalidParameterError(
            name="momentum",
            value=momentum,
            constraint="в [0, 1)",
        )
    velocities = velocities or {}
    new_params: Dict[str, Tensor] = {}
    new_velocities: Dict[str, Tensor] = {}
    for name in sorted(params):
        param = params[name]
        if name not in grads:
            raise ShapeMismatchError(
                operation="sgd_step",
                expected=f"градиент для '{name}'",
                actual="отсутствует",
            )
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeMismatchError(
                operation=f"sgd_step[{name}]",
                expected=param.shape,
                actual=grad.shape,
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(name=name, detail="градиент параметра")
        velocity = velocities.get(name)
        if velocity is None:
            velocity = np.zeros_like(param)
        velocity = momentum * velocity + grad
        new_velocities[name] = velocity
        new_params[name] = param - lr * velocity
    return new_params, new_velocities
