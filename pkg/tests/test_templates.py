import numpy as np
import pytest

from partmask_hub.core.exceptions import InvalidParameterError, ShapeMismatchError
from partmask_hub.core.templates import (
    apply_mask,
    build_templates,
    default_alpha,
    default_tau,
    location_scores,
    mask_backward,
    mask_forward,
    template_fitness,
)


@pytest.mark.parametrize("n", range(2, 13))
def test_template_invariants(n):
    bank = build_templates(n)
    assert bank.tau == default_tau(n)
    assert bank.prior.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(bank.negative, np.full((n, n), -bank.tau))
    for index in range(n * n):
        row, col = divmod(index, n)
        template = bank.positives[index]
        assert template[row, col] == bank.tau
        assert template.max() == bank.tau
        assert template.min() >= -bank.tau
    corner = bank.positives[0]
    assert corner[n - 1, n - 1] == -bank.tau


def test_template_values_follow_l1_distance():
    bank = build_templates(6, tau=1.0)
    template = bank.positives[bank.index(2, 3)]
    assert template[2, 4] == pytest.approx(1 - 4 / 6)
    assert template[3, 4] == pytest.approx(1 - 8 / 6)
    assert template[0, 0] == -1.0


def test_prior_split():
    bank = build_templates(4)
    assert bank.prior[-1] == pytest.approx(1 - default_alpha(4))
    assert np.allclose(bank.prior[:-1], default_alpha(4) / 16)
    assert bank.size == 17
    assert bank.location(16) is None
    assert bank.location(5) == (1, 1)


@pytest.mark.parametrize(
    "kwargs",
    [{"n": 1}, {"n": 4, "tau": 0.0}, {"n": 4, "alpha": 1.0}, {"n": 4, "beta": -1}],
)
def test_invalid_template_parameters(kwargs):
    with pytest.raises(InvalidParameterError):
        build_templates(**kwargs)


def test_bank_is_read_only():
    bank = build_templates(3)
    with pytest.raises(ValueError):
        bank.positives[0, 0, 0] = 5.0


def test_template_fitness_is_trace(rng):
    x = rng.uniform(size=(4, 4))
    template = rng.normal(size=(4, 4))
    expected = sum(x[i, j] * template[j, i] for i in range(4) for j in range(4))
    assert template_fitness(x, template) == pytest.approx(expected)
    with pytest.raises(ShapeMismatchError):
        template_fitness(x, template[:3])


def test_location_scores_pair_elementwise(rng, bank6):
    maps = rng.uniform(size=(3, 6, 6))
    scores = location_scores(maps, bank6)
    assert scores.shape == (3, 37)
    expected = np.sum(maps[1] * bank6.stack[7])
    assert scores[1, 7] == pytest.approx(expected)
    # след tr(x T) равен скалярному произведению транспонированной карты с T
    assert template_fitness(maps[0], bank6.positives[7]) == pytest.approx(
        location_scores(maps[0].T, bank6)[7],
    )


def test_apply_mask_selects_argmax(bank6):
    x = np.zeros((6, 6))
    x[2, 4] = 3.0
    x[1, 1] = 1.0
    selection = apply_mask(x, bank6)
    assert selection.mu_hat == (2, 4)
    assert selection.mu_index == 16
    assert selection.masked[2, 4] == pytest.approx(3.0 * bank6.tau)
    assert selection.masked[1, 1] == 0.0
    assert np.all(selection.masked >= 0)


def test_apply_mask_zero_map_picks_first_cell(bank6):
    selection = apply_mask(np.zeros((6, 6)), bank6)
    assert selection.mu_hat == (0, 0)
    assert not selection.masked.any()


def test_apply_mask_rejects_negative_values(bank6):
    x = np.zeros((6, 6))
    x[0, 0] = -1.0
    with pytest.raises(InvalidParameterError):
        apply_mask(x, bank6)


def test_masked_never_exceeds_scaled_input(rng, bank6):
    maps = rng.uniform(size=(2, 3, 6, 6))
    masked, indices = mask_forward(maps, bank6)
    assert indices.shape == (2, 3)
    assert np.all(masked <= maps * bank6.tau + 1e-15)


def test_mask_backward_uses_selected_template(rng, bank6):
    maps = rng.uniform(0.1, 1.0, size=(1, 1, 6, 6))
    masked, indices = mask_forward(maps, bank6)
    grad = mask_backward(np.ones_like(maps), maps, indices, bank6)
    template = bank6.positives[indices[0, 0]]
    np.testing.assert_allclose(grad[0, 0], np.where(template > 0, template, 0.0))
