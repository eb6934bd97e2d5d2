"""Shared transformer building blocks.

All layers are pre-norm residual blocks operating on unbatched (L, dim)
sequences, so zeroing the attention/FFN output projections reduces a layer to
the identity. No positional encodings are applied here; sequences that need
them add them before the first layer.
"""

import math

import torch
import torch.nn as nn


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Classic fixed sin/cos position table, shape (length, dim). dim must be even."""
    assert dim % 2 == 0, "position table needs an even dim"
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)
    return table.to(dtype)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over (L, dim) sequences."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query: torch.Tensor, key_value: torch.Tensor) -> torch.Tensor:
        lq, lk = query.shape[0], key_value.shape[0]
        q = self.q_proj(query).view(lq, self.num_heads, self.head_dim)
        k = self.k_proj(key_value).view(lk, self.num_heads, self.head_dim)
        v = self.v_proj(key_value).view(lk, self.num_heads, self.head_dim)
        scores = torch.einsum("qhd,khd->hqk", q, k) / math.sqrt(self.head_dim)
        attn = torch.softmax(scores, dim=-1)
        out = torch.einsum("hqk,khd->qhd", attn, v).reshape(lq, -1)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, mult * dim)
        self.fc2 = nn.Linear(mult * dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    """x + SelfAttn(LN(x)); then x + FFN(LN(x))."""

    def __init__(self, dim: int, num_heads: int, ff_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        x = x + self.ff(self.norm2(x))
        return x


class DecoderLayer(nn.Module):
    """Pre-norm decoder block: self-attention, cross-attention, feed-forward."""

    def __init__(self, dim: int, num_heads: int, ff_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.norm_memory = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, num_heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h)
        x = x + self.cross_attn(self.norm2(x), self.norm_memory(memory))
        x = x + self.ff(self.norm3(x))
        return x


class Mlp(nn.Module):
    """Two-layer perceptron with GELU."""

    def __init__(self, dim_in: int, dim_hidden: int, dim_out: int):
        super().__init__()
        self.fc1 = nn.Linear(dim_in, dim_hidden)
        self.fc2 = nn.Linear(dim_hidden, dim_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


def zero_residual_paths(module: nn.Module) -> None:
    """Zero every residual-branch output projection under ``module``.

    Turns pre-norm encoder/decoder layers into the identity; used by tests.
    """
    for m in module.modules():
        if isinstance(m, MultiHeadAttention):
            nn.init.zeros_(m.out_proj.weight)
            nn.init.zeros_(m.out_proj.bias)
        if isinstance(m, FeedForward):
            nn.init.zeros_(m.fc2.weight)
            nn.init.zeros_(m.fc2.bias)
