"""Самопроверка: конечные разности, разложение потерь, инварианты шаблонов.

Все фикстуры строятся из фиксированных сидов, поэтому вывод стабилен между
запусками.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from partmask_hub.core.exceptions import VerificationError
from partmask_hub.core.filter_loss import (
    FilterState,
    decompose_loss,
    filter_loss_exact,
    filter_loss_grad_approx,
    partition_terms,
    surrogate_loss,
)
from partmask_hub.core.templates import build_templates
from partmask_hub.core.tensor import (
    TaskLossKind,
    Tensor,
    conv2d_backward,
    conv2d_forward,
    encode_labels,
    fc_backward,
    fc_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    task_loss,
)

VERIFY_SEED = 20170101
FIXTURES = 50
GRADIENT_TOLERANCE = 1e-5
LAYER_TOLERANCE = 1e-6
DECOMPOSITION_TOLERANCE = 1e-9
APPROXIMATION_TOLERANCE = 1e-6
FD_STEP = 1e-5
DOMINANT_SCORE = 80.0

GradientHook = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class VerificationReport:
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[str]:
        return [f"{c.name}: {c.detail}" for c in self.checks if not c.passed]

    def raise_for_failures(self) -> None:
        if not self.passed:
            raise VerificationError(self.failures)


def numeric_gradient(
    func: Callable[[Tensor], float],
    x: Tensor,
    step: float = FD_STEP,
) -> Tensor:
    """Центральные разности по всем элементам x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for position in np.ndindex(x.shape):
        original = x[position]
        x[position] = original + step
        plus = func(x)
        x[position] = original - step
        minus = func(x)
        x[position] = original
        grad[position] = (plus - minus) / (2 * step)
    return grad


def relative_error(analytic: Tensor, numeric: Tensor) -> float:
    """max |a - f| / max(max|a|, max|f|), 0 для двух нулевых градиентов."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric))) / scale


def _identity(grad: Tensor) -> Tensor:
    return grad


# ---------------------------------------------------------------- filter loss


def check_filter_gradients(
    hook: GradientHook = _identity,
    fixtures: int = FIXTURES,
) -> CheckResult:
    """Аналитический градиент против разностей суррогата с замороженными Z."""
    rng = np.random.default_rng(VERIFY_SEED)
    worst = 0.0
    for _ in range(fixtures):
        n = int(rng.integers(3, 7))
        count = int(rng.integers(2, 9))
        bank = build_templates(n)
        maps = rng.uniform(0.0, 1.0 / bank.tau, size=(count, n, n))
        result = filter_loss_exact(maps, bank)
        numeric = numeric_gradient(
            lambda x: surrogate_loss(x, bank, result.log_z),
            maps,
        )
        worst = max(worst, relative_error(hook(result.gradients), numeric))
    return CheckResult(
        name="filter_loss_gradient",
        passed=worst < GRADIENT_TOLERANCE,
        detail=f"max rel error {worst:.3e} (< {GRADIENT_TOLERANCE:g})",
    )


def check_decomposition(fixtures: int = FIXTURES) -> CheckResult:
    rng = np.random.default_rng(VERIFY_SEED + 1)
    worst = 0.0
    for _ in range(fixtures):
        n = int(rng.integers(3, 7))
        count = int(rng.integers(2, 9))
        bank = build_templates(n)
        maps = rng.uniform(0.0, 1.0 / bank.tau, size=(count, n, n))
        loss = filter_loss_exact(maps, bank).loss
        report = decompose_loss(maps, bank)
        worst = max(worst, abs(loss - report.reconstructed_loss))
    return CheckResult(
        name="loss_decomposition",
        passed=worst < DECOMPOSITION_TOLERANCE,
        detail=f"max |gap| {worst:.3e} (< {DECOMPOSITION_TOLERANCE:g})",
    )


def dominant_peak_maps(n: int, score: float = DOMINANT_SCORE) -> Tensor:
    """n^2 дельта-карт с s_mu = score в своей позиции и одна нулевая карта."""
    bank = build_templates(n)
    amplitude = score / bank.tau
    maps = np.zeros((n * n + 1, n, n))
    for index in range(n * n):
        maps[index].flat[index] = amplitude
    return maps


def check_approximation(hook: GradientHook = _identity) -> CheckResult:
    """Одночленное приближение против точного градиента при доминирующем пике."""
    worst = 0.0
    for n in range(3, 7):
        bank = build_templates(n)
        maps = dominant_peak_maps(n)
        terms = partition_terms(maps, bank)
        exact = hook(filter_loss_exact(maps, bank).gradients)
        for k, x in enumerate(maps):
            mu_hat = bank.negative_index if not x.any() else int(np.argmax(x))
            state = FilterState(
                log_z=terms.log_z,
                log_px=float(terms.log_px[k]),
                update_count=1,
            )
            approx = filter_loss_grad_approx(x, mu_hat, state, bank)
            worst = max(worst, relative_error(approx, exact[k]))
    return CheckResult(
        name="gradient_approximation",
        passed=worst < APPROXIMATION_TOLERANCE,
        detail=f"max rel deviation {worst:.3e} (< {APPROXIMATION_TOLERANCE:g})",
    )


def check_templates() -> CheckResult:
    problems = []
    for n in range(2, 13):
        bank = build_templates(n)
        if abs(float(bank.prior.sum()) - 1.0) > 1e-12:
            problems.append(f"n={n}: sum p(mu)={bank.prior.sum()!r}")
        for index in range(n * n):
            template = bank.positives[index]
            if template.flat[index] != bank.tau or template.max() != bank.tau:
                problems.append(f"n={n}: пик T_{index} != tau")
                break
            if template.min() < -bank.tau:
                problems.append(f"n={n}: T_{index} ниже -tau")
                break
        if not bool(np.any(bank.positives == -bank.tau)):
            problems.append(f"n={n}: нет значений -tau")
        if not np.all(bank.negative == -bank.tau):
            problems.append(f"n={n}: T- != -tau")
    return CheckResult(
        name="template_invariants",
        passed=not problems,
        detail="n=2..12 ok" if not problems else "; ".join(problems[:5]),
    )


# --------------------------------------------------------------- tensor core


def check_layers() -> CheckResult:
    rng = np.random.default_rng(VERIFY_SEED + 2)
    errors = {}

    x = rng.normal(size=(2, 5, 5))
    weights = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    probe = rng.normal(size=(3, 5, 5))
    grad_input, grad_weights, grad_bias = conv2d_backward(probe, x, weights, pad=1)
    errors["conv_input"] = relative_error(
        grad_input,
        numeric_gradient(
            lambda v: float(np.sum(probe * conv2d_forward(v, weights, bias, pad=1))),
            x,
        ),
    )
    errors["conv_weights"] = relative_error(
        grad_weights,
        numeric_gradient(
            lambda w: float(np.sum(probe * conv2d_forward(x, w, bias, pad=1))),
            weights,
        ),
    )
    errors["conv_bias"] = relative_error(grad_bias, probe.sum(axis=(1, 2)))

    shifted = rng.normal(size=(2, 4, 4))
    shifted[np.abs(shifted) < 0.1] = 0.5
    probe = rng.normal(size=shifted.shape)
    errors["relu"] = relative_error(
        relu_backward(probe, shifted),
        numeric_gradient(lambda v: float(np.sum(probe * relu_forward(v))), shifted),
    )

    pooled, indices = maxpool_forward(x, 2, 2)
    probe = rng.normal(size=pooled.shape)
    errors["maxpool"] = relative_error(
        maxpool_backward(probe, indices, x.shape),
        numeric_gradient(
            lambda v: float(np.sum(probe * maxpool_forward(v, 2, 2)[0])),
            x,
        ),
    )

    features = rng.normal(size=(4, 6))
    fc_weights = rng.normal(size=(3, 6))
    fc_bias = rng.normal(size=3)
    probe = rng.normal(size=(4, 3))
    grad_features, grad_fc, _ = fc_backward(probe, features, fc_weights)
    errors["fc_input"] = relative_error(
        grad_features,
        numeric_gradient(
            lambda v: float(np.sum(probe * fc_forward(v, fc_weights, fc_bias))),
            features,
        ),
    )
    errors["fc_weights"] = relative_error(
        grad_fc,
        numeric_gradient(
            lambda w: float(np.sum(probe * fc_forward(features, w, fc_bias))),
            fc_weights,
        ),
    )

    logits = rng.normal(size=(5, 4))
    categories = rng.integers(0, 4, size=5)
    for kind in TaskLossKind:
        labels = encode_labels(categories, 4, kind)
        _, grad = task_loss(logits, labels, kind)
        errors[f"task_{kind.value}"] = relative_error(
            grad,
            numeric_gradient(lambda v: task_loss(v, labels, kind)[0], logits),
        )

    worst_name = max(errors, key=errors.get)
    worst = errors[worst_name]
    return CheckResult(
        name="layer_gradients",
        passed=worst < LAYER_TOLERANCE,
        detail=f"max rel error {worst:.3e} ({worst_name})",
    )


def run_verification(hook: GradientHook | None = None) -> VerificationReport:
    """Полный набор проверок; hook преобразует аналитические градиенты потерь."""
    hook = hook or _identity
    return VerificationReport(
        checks=[
            check_filter_gradients(hook),
            check_decomposition(),
            check_approximation(hook),
            check_templates(),
            check_layers(),
        ],
    )


def flip_sign(grad: Tensor) -> Tensor:
    """Мутация для проверки самого набора: градиент с обратным знаком."""
    return -grad
