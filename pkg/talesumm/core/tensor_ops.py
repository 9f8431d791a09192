"""
Tensor-level building blocks: autograd entry point, normalization, position
encodings, seeded dropout and gradient checking.

Tensors are torch tensors; 32-bit by default, 64-bit for finite-difference checks.
"""
import math
from typing import Callable, Dict, Iterable, Optional, Tuple

import torch
import torch.nn.functional as F

from .errors import MaskError, NonFiniteError, ShapeError

MASK_SENTINEL = -1e9


def make_generator(seed: int) -> torch.Generator:
    """
    Seeded CPU generator (Mersenne Twister) used by every stochastic op
    """
    generator = torch.Generator(device="cpu")
    generator.manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    return generator


def backward(loss: torch.Tensor) -> None:
    """
    Reverse-mode accumulation of d(loss)/d(param) into every reachable parameter's .grad
    """
    if loss.numel() != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        # constant loss: nothing reachable, gradients stay as they are (zero)
        return
    loss.backward()


def zero_grads(params: Iterable[torch.nn.Parameter]) -> None:
    for param in params:
        if param.grad is not None:
            param.grad.zero_()


def layer_norm(
    x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5
) -> torch.Tensor:
    if x.shape[-1] < 2:
        raise ShapeError(f"layer_norm needs at least 2 features, got {x.shape[-1]}")
    return F.layer_norm(x, (x.shape[-1],), gain, bias, eps)


def sinusoidal_encoding(
    num_positions: int, dim: int, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """
    Row p: [sin(p / 10000^(2i/D)), cos(p / 10000^(2i/D))] interleaved over i
    """
    if dim % 2 != 0:
        raise ShapeError(f"sinusoidal encoding needs an even width, got {dim}")
    positions = torch.arange(num_positions, dtype=torch.float64).unsqueeze(1)
    frequencies = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(num_positions, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(positions * frequencies)
    table[:, 1::2] = torch.cos(positions * frequencies)
    return table.to(dtype)


def additive_mask(mask: torch.Tensor, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    Binary mask (1 = may attend) -> additive logits mask (0 or -1e9)
    """
    allowed = mask.bool()
    blocked = torch.full(allowed.shape, MASK_SENTINEL, dtype=dtype)
    return torch.where(allowed, torch.zeros((), dtype=dtype), blocked)


def dropout(
    x: torch.Tensor,
    rate: float,
    train: bool,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Inverted dropout; the keep-mask is drawn from the given generator
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=torch.float64) >= rate
    return x * keep.to(x.dtype) / (1.0 - rate)


def check_finite_grads(named_params: Iterable[Tuple[str, torch.nn.Parameter]]) -> None:
    for name, param in named_params:
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise NonFiniteError(f"non-finite gradient in parameter '{name}'", parameter=name)


def check_mask_rows(mask: torch.Tensor) -> None:
    empty = ~mask.bool().any(dim=-1)
    if empty.any():
        rows = torch.nonzero(empty).tolist()
        raise MaskError(f"attention mask has rows with no allowed position: {rows[:5]}")


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    named_params: Iterable[Tuple[str, torch.nn.Parameter]],
    h: float = 1e-5,
    scale_floor: float = 1e-4,
) -> Dict[str, float]:
    """
    Compare autograd gradients with central differences, parameter by parameter.

    Returns name -> ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, scale_floor).
    The floor keeps gradients that are analytically zero (e.g. key biases under
    softmax shift invariance) from turning round-off into a huge ratio.
    Intended for float64 models.
    """
    named_params = [(name, p) for name, p in named_params if p.requires_grad]
    for _, param in named_params:
        param.grad = None
    backward(loss_fn())

    errors = {}
    with torch.no_grad():
        for name, param in named_params:
            analytic = (
                param.grad.detach().clone()
                if param.grad is not None
                else torch.zeros_like(param)
            )
            numeric = torch.zeros_like(param)
            flat = param.view(-1)
            numeric_flat = numeric.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                plus = loss_fn().item()
                flat[i] = original - h
                minus = loss_fn().item()
                flat[i] = original
                numeric_flat[i] = (plus - minus) / (2.0 * h)
            scale = (analytic.norm() + numeric.norm()).item()
            errors[name] = (analytic - numeric).norm().item() / max(scale, scale_floor)
    return errors
