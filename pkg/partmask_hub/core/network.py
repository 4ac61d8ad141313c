"""Небольшая интерпретируемая CNN: стек conv/relu/pool, слои маски и FC-голова."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from partmask_hub.core.exceptions import (
    InvalidParameterError,
    NonFiniteError,
    ShapeMismatchError,
)
from partmask_hub.core.filter_loss import (
    FilterState,
    filter_loss_exact,
    filter_loss_grad_approx,
    new_filter_state,
    select_mu_hat,
    update_state,
)
from partmask_hub.core.templates import (
    TemplateBank,
    build_templates,
    mask_backward,
    mask_forward,
)
from partmask_hub.core.tensor import (
    TaskLossKind,
    Tensor,
    conv2d_backward,
    conv2d_forward,
    count_correct,
    encode_labels,
    fc_backward,
    fc_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    sigmoid,
    softmax,
    task_loss,
    xavier_uniform,
)
from partmask_hub.core.utils import validate_int_at_least

LAYER_KINDS = ("conv", "interp_conv", "relu", "pool", "mask", "fc")
# размер чанка пакета для потоков; раскладка не зависит от числа потоков
REDUCTION_CHUNK = 4


@dataclass(frozen=True)
class LayerSpec:
    """Один слой стека. record=True у обычного conv: записывать его карты."""

    kind: str
    filters: int = 0
    kernel: int = 3
    stride: int = 1
    pad: int = 0
    window: int = 2
    record: bool = False


@dataclass(frozen=True)
class LayerConfig:
    """Параметры шаблонов интерпретируемого слоя (None: значения по n)."""

    tau: float | None = None
    alpha: float | None = None
    beta: float = 4.0


@dataclass(frozen=True)
class ArchitectureSpec:
    layers: Tuple[LayerSpec, ...]
    num_categories: int
    loss_kind: TaskLossKind = TaskLossKind.SOFTMAX
    input_size: int = 32
    input_channels: int = 1
    layer_config: LayerConfig = field(default_factory=LayerConfig)

    def __post_init__(self) -> None:
        validate_int_at_least("num_categories", self.num_categories, 2)
        kinds = [layer.kind for layer in self.layers]
        unknown = sorted(set(kinds) - set(LAYER_KINDS))
        if unknown:
            raise InvalidParameterError(
                name="layers",
                value=unknown,
                constraint=f"виды слоёв из {LAYER_KINDS}",
            )
        if not kinds or kinds[-1] != "fc" or kinds.count("fc") != 1:
            raise InvalidParameterError(
                name="layers",
                value=kinds,
                constraint="ровно один fc-слой в конце",
            )
        for position, kind in enumerate(kinds):
            if kind == "interp_conv" and kinds[position + 1 : position + 3] != [
                "relu",
                "mask",
            ]:
                raise InvalidParameterError(
                    name="layers",
                    value=kinds,
                    constraint="за interp_conv сразу следуют relu и mask",
                )
            if kind == "mask" and kinds[position - 2] != "interp_conv":
                raise InvalidParameterError(
                    name="layers",
                    value=kinds,
                    constraint="mask только после interp_conv и relu",
                )
            if kind == "conv" and self.layers[position].record:
                if kinds[position + 1 : position + 2] != ["relu"]:
                    raise InvalidParameterError(
                        name="layers",
                        value=kinds,
                        constraint="за записываемым conv следует relu",
                    )

    @property
    def output_dim(self) -> int:
        return self.num_categories

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["loss_kind"] = TaskLossKind(self.loss_kind).value
        data["layers"] = [asdict(layer) for layer in self.layers]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ArchitectureSpec":
        return cls(
            layers=tuple(LayerSpec(**layer) for layer in data["layers"]),
            num_categories=int(data["num_categories"]),
            loss_kind=TaskLossKind(data["loss_kind"]),
            input_size=int(data["input_size"]),
            input_channels=int(data["input_channels"]),
            layer_config=LayerConfig(**data.get("layer_config", {})),
        )


def default_architecture(
    num_categories: int,
    loss_kind: TaskLossKind = TaskLossKind.SOFTMAX,
    *,
    mask: bool = True,
    interp_layers: int = 1,
    filters: int = 16,
    layer_config: LayerConfig | None = None,
) -> ArchitectureSpec:
    """conv8-relu-pool-conv16-relu-pool-interp16-relu-mask-fc, вход 32x32, n=6.

    mask=False заменяет интерпретируемые слои обычными conv (базовая сеть).
    """
    validate_int_at_least("interp_layers", interp_layers, 1)
    if interp_layers > 2:
        raise InvalidParameterError(
            name="interp_layers",
            value=interp_layers,
            constraint="1 или 2",
        )
    layers: List[LayerSpec] = [
        LayerSpec("conv", filters=8, kernel=3, pad=1),
        LayerSpec("relu"),
        LayerSpec("pool", window=2, stride=2),
        LayerSpec("conv", filters=16, kernel=3, pad=1),
        LayerSpec("relu"),
        LayerSpec("pool", window=2, stride=2),
    ]
    for position in range(interp_layers):
        pad = 0 if position == 0 else 1
        if mask:
            layers.append(LayerSpec("interp_conv", filters=filters, kernel=3, pad=pad))
            layers.append(LayerSpec("relu"))
            layers.append(LayerSpec("mask"))
        else:
            layers.append(
                LayerSpec("conv", filters=filters, kernel=3, pad=pad, record=True),
            )
            layers.append(LayerSpec("relu"))
    layers.append(LayerSpec("fc"))
    return ArchitectureSpec(
        layers=tuple(layers),
        num_categories=num_categories,
        loss_kind=TaskLossKind(loss_kind),
        layer_config=layer_config or LayerConfig(),
    )


@dataclass(frozen=True, eq=False)
class Site:
    """Позиция записываемого слоя: conv, следующий relu и (опционально) mask."""

    conv_index: int
    relu_index: int
    mask_index: int | None
    bank: TemplateBank
    filters: int

    @property
    def masked(self) -> bool:
        return self.mask_index is not None


def mask_gain(bank: TemplateBank) -> float:
    """Множитель выхода маски для следующего слоя: 1/tau, пик шаблона равен 1.

    Записанные карты маски (SiteRecord.masked) хранятся без множителя.
    """
    return 1.0 / bank.tau


@dataclass(eq=False)
class SiteRecord:
    """Записанные карты одного сайта на пакете."""

    site: Site
    raw: Tensor  # post-ReLU [N, M, n, n]
    mu_index: np.ndarray  # argmax-положения [N, M]
    masked: Tensor | None


@dataclass(eq=False)
class ForwardResult:
    logits: Tensor
    records: List[SiteRecord]
    cache: List[Tuple[Any, ...]] = field(repr=False, default_factory=list)


class Network:
    """Параметры, шаблоны и детерминированные прямой/обратный проходы."""

    def __init__(
        self,
        spec: ArchitectureSpec,
        params: Dict[str, Tensor],
        seed: int = 0,
    ) -> None:
        self.spec = spec
        self.seed = seed
        self.shapes, self.sites = self._plan(spec)
        expected = {name: shape for name, shape in self.param_shapes().items()}
        for name, shape in expected.items():
            if name not in params or params[name].shape != shape:
                raise ShapeMismatchError(
                    operation="Network",
                    expected=f"{name}: {shape}",
                    actual=None if name not in params else params[name].shape,
                )
        self.params: Dict[str, Tensor] = {
            name: np.asarray(params[name], dtype=np.float64) for name in expected
        }

    # ---------------------------------------------------------------- build

    @staticmethod
    def _plan(
        spec: ArchitectureSpec,
    ) -> Tuple[List[Tuple[int, ...]], Dict[int, Site]]:
        shape: Tuple[int, ...] = (spec.input_channels, spec.input_size, spec.input_size)
        shapes: List[Tuple[int, ...]] = []
        sites: Dict[int, Site] = {}
        config = spec.layer_config
        for index, layer in enumerate(spec.layers):
            match layer.kind:
                case "conv" | "interp_conv":
                    _, h, w = shape
                    size_h = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
                    size_w = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
                    if size_h < 1 or size_w < 1:
                        raise ShapeMismatchError(
                            operation=f"layer {index}",
                            expected="положительный выходной размер",
                            actual=(size_h, size_w),
                        )
                    shape = (layer.filters, size_h, size_w)
                    if layer.kind == "interp_conv" or layer.record:
                        bank = build_templates(
                            size_h,
                            tau=config.tau,
                            beta=config.beta,
                            alpha=config.alpha,
                        )
                        mask_index = index + 2 if layer.kind == "interp_conv" else None
                        sites[index] = Site(
                            conv_index=index,
                            relu_index=index + 1,
                            mask_index=mask_index,
                            bank=bank,
                            filters=layer.filters,
                        )
                case "pool":
                    c, h, w = shape
                    step = layer.stride
                    shape = (
                        c,
                        (h - layer.window) // step + 1,
                        (w - layer.window) // step + 1,
                    )
                case "fc":
                    shape = (spec.output_dim,)
            shapes.append(shape)
        return shapes, sites

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Манифест параметров в порядке слоёв."""
        result: Dict[str, Tuple[int, ...]] = {}
        in_shape: Tuple[int, ...] = (
            self.spec.input_channels,
            self.spec.input_size,
            self.spec.input_size,
        )
        for index, layer in enumerate(self.spec.layers):
            if layer.kind in ("conv", "interp_conv"):
                result[f"{index}.weight"] = (
                    layer.filters,
                    in_shape[0],
                    layer.kernel,
                    layer.kernel,
                )
                result[f"{index}.bias"] = (layer.filters,)
            elif layer.kind == "fc":
                fan_in = int(np.prod(in_shape))
                result[f"{index}.weight"] = (self.spec.output_dim, fan_in)
                result[f"{index}.bias"] = (self.spec.output_dim,)
            in_shape = self.shapes[index]
        return result

    @classmethod
    def initialize(cls, spec: ArchitectureSpec, seed: int) -> "Network":
        """Xavier-uniform веса и нулевые смещения из генератора с seed."""
        rng = np.random.default_rng(seed)
        probe = cls.__new__(cls)
        probe.spec = spec
        probe.shapes, probe.sites = cls._plan(spec)
        params: Dict[str, Tensor] = {}
        for name, shape in probe.param_shapes().items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape)
            elif len(shape) == 4:
                receptive = shape[2] * shape[3]
                params[name] = xavier_uniform(
                    rng,
                    shape,
                    fan_in=shape[1] * receptive,
                    fan_out=shape[0] * receptive,
                )
            else:
                params[name] = xavier_uniform(
                    rng,
                    shape,
                    fan_in=shape[1],
                    fan_out=shape[0],
                )
        return cls(spec, params, seed=seed)

    @classmethod
    def zeros(cls, spec: ArchitectureSpec) -> "Network":
        probe = cls.__new__(cls)
        probe.spec = spec
        probe.shapes, probe.sites = cls._plan(spec)
        return cls(spec, {k: np.zeros(s) for k, s in probe.param_shapes().items()})

    def new_states(self, decay: float) -> Dict[int, List[FilterState]]:
        return {
            index: [new_filter_state(decay) for _ in range(site.filters)]
            for index, site in self.sites.items()
        }

    # -------------------------------------------------------------- passes

    def _check_images(self, images: Tensor) -> Tensor:
        array = np.asarray(images, dtype=np.float64)
        if array.ndim == 3 and self.spec.input_channels == 1:
            array = array[:, np.newaxis]
        expected = (
            self.spec.input_channels,
            self.spec.input_size,
            self.spec.input_size,
        )
        if array.ndim != 4 or array.shape[1:] != expected:
            raise ShapeMismatchError(
                operation="forward",
                expected=f"[N, {expected[0]}, {expected[1]}, {expected[2]}]",
                actual=array.shape,
            )
        return array

    def forward(self, images: Tensor) -> ForwardResult:
        """Прямой проход; карты интерпретируемых сайтов записываются."""
        h = self._check_images(images)
        cache: List[Tuple[Any, ...]] = []
        raw_maps: Dict[int, Tensor] = {}
        mask_out: Dict[int, Tuple[Tensor, np.ndarray]] = {}
        for index, layer in enumerate(self.spec.layers):
            match layer.kind:
                case "conv" | "interp_conv":
                    cache.append((h,))
                    h = conv2d_forward(
                        h,
                        self.params[f"{index}.weight"],
                        self.params[f"{index}.bias"],
                        stride=layer.stride,
                        pad=layer.pad,
                    )
                case "relu":
                    cache.append((h,))
                    h = relu_forward(h)
                    if index - 1 in self.sites:
                        raw_maps[index - 1] = h
                case "pool":
                    out, indices = maxpool_forward(h, layer.window, layer.stride)
                    cache.append((h.shape, indices))
                    h = out
                case "mask":
                    site = self.sites[index - 2]
                    masked, mu = mask_forward(h, site.bank)
                    cache.append((h, mu, site.bank))
                    mask_out[site.conv_index] = (masked, mu)
                    h = masked * mask_gain(site.bank)
                case "fc":
                    flat = h.reshape(h.shape[0], -1)
                    cache.append((h.shape, flat))
                    h = fc_forward(
                        flat,
                        self.params[f"{index}.weight"],
                        self.params[f"{index}.bias"],
                    )
        records = []
        for conv_index, site in self.sites.items():
            raw = raw_maps[conv_index]
            if conv_index in mask_out:
                masked, mu = mask_out[conv_index]
            else:
                flat = raw.reshape(*raw.shape[:2], -1)
                masked, mu = None, np.argmax(flat, axis=-1)
            records.append(SiteRecord(site=site, raw=raw, mu_index=mu, masked=masked))
        return ForwardResult(logits=h, records=records, cache=cache)

    def backward(
        self,
        result: ForwardResult,
        grad_logits: Tensor,
        map_grads: Mapping[int, Tensor] | None = None,
    ) -> Dict[str, Tensor]:
        """Градиенты параметров; map_grads добавляются к dLoss/dx на сайтах."""
        map_grads = map_grads or {}
        grads: Dict[str, Tensor] = {}
        grad: Tensor = grad_logits
        for index in range(len(self.spec.layers) - 1, -1, -1):
            layer = self.spec.layers[index]
            entry = result.cache[index]
            match layer.kind:
                case "fc":
                    shape, flat = entry
                    grad_flat, grad_w, grad_b = fc_backward(
                        grad,
                        flat,
                        self.params[f"{index}.weight"],
                    )
                    grads[f"{index}.weight"], grads[f"{index}.bias"] = grad_w, grad_b
                    grad = grad_flat.reshape(shape)
                case "mask":
                    maps, mu, bank = entry
                    grad = mask_backward(grad * mask_gain(bank), maps, mu, bank)
                case "relu":
                    if index - 1 in map_grads:
                        grad = grad + map_grads[index - 1]
                    grad = relu_backward(grad, entry[0])
                case "pool":
                    shape, indices = entry
                    grad = maxpool_backward(grad, indices, shape)
                case "conv" | "interp_conv":
                    grad, grad_w, grad_b = conv2d_backward(
                        grad,
                        entry[0],
                        self.params[f"{index}.weight"],
                        stride=layer.stride,
                        pad=layer.pad,
                    )
                    grads[f"{index}.weight"], grads[f"{index}.bias"] = grad_w, grad_b
        return grads


def predict(net: Network, images: Tensor) -> Tensor:
    """Оценки категорий: softmax или независимые сигмоиды (logistic)."""
    logits = net.forward(images).logits
    if TaskLossKind(net.spec.loss_kind) is TaskLossKind.SOFTMAX:
        return softmax(logits)
    return sigmoid(logits)


# --------------------------------------------------------------- train step


@dataclass(eq=False)
class StepMetrics:
    task_loss: float
    filter_loss: float
    correct: int
    count: int
    records: List[SiteRecord] = field(default_factory=list, repr=False)


def _chunks(count: int) -> List[slice]:
    return [
        slice(start, min(start + REDUCTION_CHUNK, count))
        for start in range(0, count, REDUCTION_CHUNK)
    ]


def _concat_records(parts: Sequence[ForwardResult]) -> List[SiteRecord]:
    merged = []
    for position, first in enumerate(parts[0].records):
        rows = [part.records[position] for part in parts]
        masked = (
            None
            if first.masked is None
            else np.concatenate([r.masked for r in rows], axis=0)
        )
        merged.append(
            SiteRecord(
                site=first.site,
                raw=np.concatenate([r.raw for r in rows], axis=0),
                mu_index=np.concatenate([r.mu_index for r in rows], axis=0),
                masked=masked,
            ),
        )
    return merged


def filter_gradients(
    record: SiteRecord,
    categories: Sequence[int],
    states: List[FilterState],
    *,
    warmup: bool,
) -> Tuple[Tensor, List[FilterState]]:
    """Обновить онлайн-оценки и вернуть приближённые градиенты [N, M, n, n].

    Карты обрабатываются последовательно в порядке изображений.
    """
    bank = record.site.bank
    grads = np.zeros_like(record.raw)
    updated = list(states)
    for image, category in enumerate(categories):
        for filt in range(record.raw.shape[1]):
            x = record.raw[image, filt]
            state = update_state(updated[filt], x, bank)
            mu_hat = select_mu_hat(x, category, state, bank, warmup=warmup)
            grads[image, filt] = filter_loss_grad_approx(x, mu_hat, state, bank)
            updated[filt] = state
    return grads, updated


def batch_filter_loss(record: SiteRecord) -> float:
    """Средняя по фильтрам точная filter loss на картах пакета."""
    values = [
        filter_loss_exact(record.raw[:, filt], record.site.bank).loss
        for filt in range(record.raw.shape[1])
    ]
    return float(np.mean(values))


@dataclass
class Optimizer:
    lr: float
    momentum: float
    velocities: Dict[str, Tensor] = field(default_factory=dict)


def backward_and_step(
    net: Network,
    images: Tensor,
    categories: Sequence[int],
    optimizer: Optimizer,
    states: Dict[int, List[FilterState]],
    *,
    lam: float | Mapping[int, float],
    warmup: bool,
    workers: int = 1,
) -> StepMetrics:
    """dLoss/dx = lam * sum_f dLoss_f/dx + (1/N) sum_k dL_k/dx, затем SGD.

    lam: число или значения по сайтам (индекс conv). Обновляет net.params,
    optimizer.velocities и states на месте.
    """
    images = net._check_images(images)
    count = images.shape[0]
    slices = _chunks(count)
    threads = max(1, min(workers, len(slices)))

    def run_forward(part: slice) -> ForwardResult:
        return net.forward(images[part])

    if threads == 1:
        parts = [run_forward(part) for part in slices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_forward, slices))

    logits = np.concatenate([part.logits for part in parts], axis=0)
    labels = encode_labels(categories, net.spec.num_categories, net.spec.loss_kind)
    loss, grad_logits = task_loss(logits, labels, net.spec.loss_kind)
    if not np.isfinite(loss):
        raise NonFiniteError(name="task_loss", detail=f"значение {loss}")

    records = _concat_records(parts)
    map_grads: Dict[int, Tensor] = {}
    filter_losses = []
    for record in records:
        conv_index = record.site.conv_index
        filter_losses.append(batch_filter_loss(record))
        grads, states[conv_index] = filter_gradients(
            record,
            categories,
            states[conv_index],
            warmup=warmup,
        )
        site_lam = lam.get(conv_index, 0.0) if isinstance(lam, Mapping) else lam
        if site_lam > 0:
            map_grads[conv_index] = site_lam * grads
    filter_loss = float(np.mean(filter_losses)) if filter_losses else 0.0
    if not np.isfinite(filter_loss):
        raise NonFiniteError(name="filter_loss", detail=f"значение {filter_loss}")

    def run_backward(position: int) -> Dict[str, Tensor]:
        part = slices[position]
        chunk_maps = {key: value[part] for key, value in map_grads.items()}
        return net.backward(parts[position], grad_logits[part], chunk_maps)

    if threads == 1:
        chunk_grads = [run_backward(position) for position in range(len(slices))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunk_grads = list(pool.map(run_backward, range(len(slices))))
    # редукция строго в порядке индексов чанков
    total = chunk_grads[0]
    for extra in chunk_grads[1:]:
        total = {name: total[name] + extra[name] for name in total}

    net.params, optimizer.velocities = sgd_step(
        net.params,
        total,
        optimizer.lr,
        optimizer.momentum,
        optimizer.velocities,
    )
    return StepMetrics(
        task_loss=loss,
        filter_loss=filter_loss,
        correct=count_correct(logits, categories, net.spec.loss_kind),
        count=count,
        records=records,
    )
