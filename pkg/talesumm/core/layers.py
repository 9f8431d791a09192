"""
Transformer layers with an explicit binary attention mask
"""
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .errors import MaskError, ShapeError
from .tensor_ops import additive_mask, check_mask_rows, dropout


class MaskedMultiHeadAttention(nn.Module):
    """
    Multi-head self-attention where token i only reads tokens j with mask[i, j] = 1
    """

    def __init__(self, dim: int, heads: int, attn_dropout: float = 0.0):
        super().__init__()
        if dim % heads != 0:
            raise ShapeError(f"model width {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.attn_dropout = attn_dropout
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.output = nn.Linear(dim, dim)

    def forward(
        self,
        x: torch.Tensor,
        mask: torch.Tensor,
        train: bool = False,
        generator: Optional[torch.Generator] = None,
        return_weights: bool = False,
    ):
        """
        x: (L, D) or (B, L, D); mask: (L, L) or (B, L, L) binary
        """
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
            mask = mask.unsqueeze(0)
        if mask.shape[-2:] != (x.shape[1], x.shape[1]):
            raise MaskError(
                f"mask shape {tuple(mask.shape)} does not match sequence length {x.shape[1]}"
            )
        check_mask_rows(mask)

        q = rearrange(self.query(x), "b l (h d) -> b h l d", h=self.heads)
        k = rearrange(self.key(x), "b l (h d) -> b h l d", h=self.heads)
        v = rearrange(self.value(x), "b l (h d) -> b h l d", h=self.heads)

        scores = torch.matmul(q, k.transpose(-1, -2)) / (q.shape[-1] ** 0.5)
        scores = scores + additive_mask(mask, dtype=scores.dtype).unsqueeze(1)
        weights = torch.softmax(scores, dim=-1)
        dropped = dropout(weights, self.attn_dropout, train, generator)

        context = rearrange(torch.matmul(dropped, v), "b h l d -> b l (h d)")
        out = self.output(context)
        if squeeze:
            out = out.squeeze(0)
            weights = weights.squeeze(0)
        if return_weights:
            return out, weights
        return out


class EncoderLayer(nn.Module):
    """
    Post-norm transformer layer: attention -> add -> norm -> FFN(4D, GELU) -> add -> norm
    """

    def __init__(self, dim: int, heads: int, attn_dropout: float = 0.0, ff_mult: int = 4):
        super().__init__()
        self.attention = MaskedMultiHeadAttention(dim, heads, attn_dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ff_in = nn.Linear(dim, ff_mult * dim)
        self.ff_out = nn.Linear(ff_mult * dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.residual_dropout = attn_dropout

    def forward(
        self,
        x: torch.Tensor,
        mask: torch.Tensor,
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        attended = self.attention(x, mask, train, generator)
        x = self.norm1(x + dropout(attended, self.residual_dropout, train, generator))
        hidden = self.ff_out(F.gelu(self.ff_in(x)))
        return self.norm2(x + dropout(hidden, self.residual_dropout, train, generator))

    def zero_residual_branches(self) -> None:
        """
        Zero the last projection of both branches so each sublayer adds nothing
        """
        with torch.no_grad():
            for linear in (self.attention.output, self.ff_out):
                linear.weight.zero_()
                linear.bias.zero_()


class TransformerEncoder(nn.Module):
    def __init__(self, dim: int, heads: int, num_layers: int, attn_dropout: float = 0.0):
        super().__init__()
        self.layers = nn.ModuleList(
            [EncoderLayer(dim, heads, attn_dropout) for _ in range(num_layers)]
        )

    def forward(
        self,
        x: torch.Tensor,
        mask: torch.Tensor,
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, mask, train, generator)
        return x


def masked_multi_head_attention(
    x: torch.Tensor,
    mask: torch.Tensor,
    module: MaskedMultiHeadAttention,
    train: bool = False,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Functional form over an attention module's projections
    """
    if x.shape[-1] != module.dim:
        raise ShapeError(f"input width {x.shape[-1]} does not match attention width {module.dim}")
    return module(x, mask, train, generator)
