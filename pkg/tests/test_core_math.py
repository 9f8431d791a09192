import math

import pytest
import torch

from talesumm.core.errors import MaskError, NonFiniteError, ShapeError
from talesumm.core.layers import EncoderLayer, MaskedMultiHeadAttention, masked_multi_head_attention
from talesumm.core.optim import (
    OneCycleSchedule,
    adamw_step,
    build_optimizer,
    build_scheduler,
    onecycle_lr,
)
from talesumm.core.tensor_ops import (
    MASK_SENTINEL,
    additive_mask,
    backward,
    dropout,
    finite_difference_check,
    layer_norm,
    make_generator,
    sinusoidal_encoding,
)


class TestBackward:
    def test_square(self):
        x = torch.tensor(3.0, requires_grad=True)
        backward(x * x)
        assert x.grad.item() == 6.0

    def test_constant_loss_leaves_zero_grads(self):
        x = torch.nn.Parameter(torch.tensor(2.0))
        x.grad = torch.zeros(())
        backward(torch.tensor(5.0))
        assert x.grad.item() == 0.0

    def test_non_scalar_rejected(self):
        x = torch.ones(3, requires_grad=True)
        with pytest.raises(ShapeError):
            backward(x * 2)

    def test_two_layer_network_matches_finite_differences(self):
        torch.manual_seed(0)
        net = torch.nn.Sequential(
            torch.nn.Linear(4, 5), torch.nn.Tanh(), torch.nn.Linear(5, 1), torch.nn.Sigmoid()
        ).double()
        x = torch.randn(6, 4, dtype=torch.float64)
        y = torch.tensor([1.0, 0.0, 0.0, 1.0, 0.0, 0.0], dtype=torch.float64)

        def loss_fn():
            p = net(x).squeeze(-1)
            return -(2.0 * y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()

        errors = finite_difference_check(loss_fn, net.named_parameters())
        assert max(errors.values()) < 1e-4


class TestLayerNorm:
    def test_constant_vector_collapses_to_bias(self):
        out = layer_norm(torch.full((4,), 3.0), torch.ones(4), torch.zeros(4))
        assert torch.allclose(out, torch.zeros(4))

    def test_already_normalized(self):
        out = layer_norm(torch.tensor([1.0, -1.0]), torch.ones(2), torch.zeros(2))
        assert torch.allclose(out, torch.tensor([1.0, -1.0]), atol=1e-4)

    def test_random_statistics(self):
        x = torch.randn(10, 32, generator=make_generator(1), dtype=torch.float64)
        out = layer_norm(x, torch.ones(32, dtype=torch.float64), torch.zeros(32, dtype=torch.float64))
        assert out.mean(dim=-1).abs().max() < 1e-6
        assert (out.var(dim=-1, unbiased=False) - 1).abs().max() < 1e-4

    def test_width_one_rejected(self):
        with pytest.raises(ShapeError):
            layer_norm(torch.ones(1), torch.ones(1), torch.zeros(1))


class TestSinusoidalEncoding:
    def test_row_zero_alternates(self):
        table = sinusoidal_encoding(3, 6)
        assert torch.equal(table[0], torch.tensor([0.0, 1.0, 0.0, 1.0, 0.0, 1.0]))

    def test_range_and_distinct_rows(self):
        table = sinusoidal_encoding(200, 16, dtype=torch.float64)
        assert table.abs().max() <= 1.0
        assert len({tuple(row.tolist()) for row in table}) == 200

    def test_odd_width_rejected(self):
        with pytest.raises(ShapeError):
            sinusoidal_encoding(4, 5)


class TestDropout:
    def test_identity_cases(self):
        x = torch.randn(50)
        assert torch.equal(dropout(x, 0.0, True, make_generator(0)), x)
        assert torch.equal(dropout(x, 0.5, False, make_generator(0)), x)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            dropout(torch.ones(3), 1.0, True)

    def test_survival_fraction_and_mean(self):
        x = torch.ones(10_000)
        out = dropout(x, 0.5, True, make_generator(7))
        survived = (out != 0).double().mean().item()
        assert abs(survived - 0.5) < 0.02
        assert abs(out.mean().item() - 1.0) < 0.05

    def test_seeded_determinism(self):
        x = torch.randn(100)
        a = dropout(x, 0.3, True, make_generator(3))
        b = dropout(x, 0.3, True, make_generator(3))
        assert torch.equal(a, b)


class TestMaskedAttention:
    def _module(self, dim=8, heads=2):
        torch.manual_seed(0)
        return MaskedMultiHeadAttention(dim, heads)

    def test_additive_mask_values(self):
        mask = torch.tensor([[1, 0], [1, 1]])
        assert additive_mask(mask).tolist() == [[0.0, MASK_SENTINEL], [0.0, 0.0]]

    def test_single_token_is_value_then_output(self):
        module = self._module()
        x = torch.randn(1, 8)
        out = module(x, torch.ones(1, 1))
        expected = module.output(module.value(x))
        assert torch.allclose(out, expected, atol=1e-6)

    def test_identity_mask_makes_tokens_independent(self):
        module = self._module()
        x = torch.randn(4, 8)
        mask = torch.eye(4)
        base = module(x, mask)
        x2 = x.clone()
        x2[1:] += 10.0
        assert torch.equal(module(x2, mask)[0], base[0])

    def test_block_mask_independence(self):
        module = self._module()
        x = torch.randn(4, 8)
        mask = torch.zeros(4, 4)
        mask[:2, :2] = 1
        mask[2:, 2:] = 1
        base = module(x, mask)
        x2 = x.clone()
        x2[3] = torch.randn(8) * 100
        assert torch.equal(masked_multi_head_attention(x2, mask, module)[:2], base[:2])

    def test_softmax_rows_sum_to_one(self):
        module = self._module()
        mask = torch.tril(torch.ones(5, 5))
        _, weights = module(torch.randn(5, 8), mask, return_weights=True)
        assert torch.allclose(weights.sum(dim=-1), torch.ones(2, 5), atol=1e-6)
        assert weights[:, 0, 1:].abs().max() == 0.0

    def test_empty_mask_row_rejected(self):
        module = self._module()
        mask = torch.ones(3, 3)
        mask[1] = 0
        with pytest.raises(MaskError):
            module(torch.randn(3, 8), mask)

    def test_zero_residual_layer_is_layer_norm_identity(self):
        torch.manual_seed(0)
        layer = EncoderLayer(8, 2)
        layer.zero_residual_branches()
        x = torch.randn(3, 8)
        expected = layer.norm2(layer.norm1(x))
        assert torch.allclose(layer(x, torch.ones(3, 3)), expected, atol=1e-6)


class TestAdamW:
    def test_zero_grad_zero_decay_is_identity(self):
        p = torch.nn.Parameter(torch.tensor([1.0, -2.0]))
        optimizer = build_optimizer([p], lr=0.1, weight_decay=0.0)
        p.grad = torch.zeros(2)
        adamw_step(optimizer, [("p", p)])
        assert torch.equal(p.detach(), torch.tensor([1.0, -2.0]))

    def test_decoupled_decay(self):
        p = torch.nn.Parameter(torch.tensor([2.0]))
        optimizer = build_optimizer([p], lr=0.1, weight_decay=0.01)
        p.grad = torch.zeros(1)
        adamw_step(optimizer, [("p", p)])
        assert p.item() == pytest.approx(2.0 * (1 - 0.1 * 0.01), rel=1e-6)

    def test_first_step_moves_by_lr(self):
        p = torch.nn.Parameter(torch.tensor([1.0]))
        optimizer = build_optimizer([p], lr=0.1, weight_decay=0.0)
        p.grad = torch.ones(1)
        adamw_step(optimizer, [("p", p)])
        assert p.item() == pytest.approx(0.9, abs=1e-6)

    def test_non_finite_gradient_names_parameter(self):
        p = torch.nn.Parameter(torch.tensor([1.0]))
        optimizer = build_optimizer([p])
        p.grad = torch.tensor([math.nan])
        with pytest.raises(NonFiniteError) as info:
            adamw_step(optimizer, [("encoder.weight", p)])
        assert info.value.parameter == "encoder.weight"


class TestOneCycle:
    def test_anchor_points(self):
        schedule = OneCycleSchedule(max_lr=1e-3, total_steps=100)
        assert onecycle_lr(schedule, 0) == pytest.approx(1e-3 / 25)
        assert onecycle_lr(schedule, 30) == pytest.approx(1e-3)
        assert onecycle_lr(schedule, 99) == pytest.approx(1e-3 / 1e4, rel=0.01)

    def test_positive_everywhere(self):
        schedule = OneCycleSchedule(total_steps=37, pct_start=0.25)
        assert all(onecycle_lr(schedule, s) > 0 for s in range(37))
        assert max(onecycle_lr(schedule, s) for s in range(37)) == pytest.approx(1e-3)

    def test_out_of_range(self):
        schedule = OneCycleSchedule(total_steps=10)
        with pytest.raises(ValueError):
            onecycle_lr(schedule, 10)

    def test_scheduler_drives_optimizer_lr(self):
        p = torch.nn.Parameter(torch.zeros(1))
        optimizer = build_optimizer([p], lr=1e-4)
        schedule = OneCycleSchedule(max_lr=1e-3, total_steps=20)
        scheduler = build_scheduler(optimizer, schedule)
        seen = []
        for _ in range(20):
            seen.append(optimizer.param_groups[0]["lr"])
            p.grad = torch.zeros(1)
            optimizer.step()
            scheduler.step()
        expected = [onecycle_lr(schedule, s) for s in range(20)]
        assert seen == pytest.approx(expected, rel=1e-9)
