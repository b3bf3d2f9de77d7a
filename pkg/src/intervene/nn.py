"""Differentiable building blocks: attention over a chosen axis, transformer
blocks, row-wise MLPs and a finite-difference gradient checker.

Reverse-mode gradients come from torch autograd. Everything defaults to
float64 so gradient checks are meaningful.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

DTYPE = torch.float64


def _uniform_fan_in_(weight: torch.Tensor, bias: torch.Tensor | None):
    bound = 1.0 / math.sqrt(weight.shape[1])
    with torch.no_grad():
        weight.uniform_(-bound, bound)
        if bias is not None:
            bias.uniform_(-bound, bound)


def linear(n_in: int, n_out: int, bias: bool = True) -> nn.Linear:
    layer = nn.Linear(n_in, n_out, bias=bias, dtype=DTYPE)
    _uniform_fan_in_(layer.weight, layer.bias)
    return layer


class LayerNorm(nn.Module):
    """Normalizes the last axis to zero mean and unit (biased) variance, then applies an affine map."""

    def __init__(self, width: int, eps: float = 1e-9):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(width, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(width, dtype=DTYPE))

    def forward(self, x):
        return F.layer_norm(x, self.weight.shape, self.weight, self.bias, self.eps)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention over the second-to-last axis.

    Input and output are ``(..., n, e)``; all leading axes are batch axes.
    The per-head width defaults to ``e // heads``; when ``heads`` does not
    divide ``e`` it is rounded up and the output projection maps back to ``e``.
    """

    def __init__(self, e: int, heads: int, head_dim: int | None = None):
        super().__init__()
        if head_dim is None:
            head_dim = -(-e // heads)
        self.e, self.heads, self.head_dim = e, heads, head_dim
        inner = heads * head_dim
        self.q = linear(e, inner, bias=False)
        self.k = linear(e, inner, bias=False)
        self.v = linear(e, inner, bias=False)
        self.out = linear(inner, e)

    def attention_weights(self, x):
        *lead, n, _ = x.shape
        q = self.q(x).view(*lead, n, self.heads, self.head_dim).transpose(-2, -3)
        k = self.k(x).view(*lead, n, self.heads, self.head_dim).transpose(-2, -3)
        scores = (q * self.head_dim**-0.5) @ k.transpose(-1, -2)
        return torch.softmax(scores, dim=-1)

    def forward(self, x):
        if x.shape[-1] != self.e:
            raise ValueError(f"expected last axis {self.e}, got {tuple(x.shape)}")
        *lead, n, _ = x.shape
        attn = self.attention_weights(x)
        v = self.v(x).view(*lead, n, self.heads, self.head_dim).transpose(-2, -3)
        h = (attn @ v).transpose(-2, -3).reshape(*lead, n, self.heads * self.head_dim)
        return self.out(h)


class TransformerBlock(nn.Module):
    """Pre-norm block: ``x + drop(mhsa(ln(x)))`` then ``x + drop(ffn(ln(x)))``."""

    def __init__(self, e: int, heads: int, dropout: float = 0.0, ff_mult: int = 4, head_dim: int | None = None):
        super().__init__()
        self.dropout = dropout
        self.ln_attn = LayerNorm(e)
        self.attn = MultiHeadSelfAttention(e, heads, head_dim)
        self.ln_ff = LayerNorm(e)
        self.ff_in = linear(e, ff_mult * e)
        self.ff_out = linear(ff_mult * e, e)

    def forward(self, x):
        x = x + F.dropout(self.attn(self.ln_attn(x)), self.dropout, self.training)
        h = self.ff_out(F.gelu(self.ff_in(self.ln_ff(x))))
        return x + F.dropout(h, self.dropout, self.training)


class AlternatingAttention(nn.Module):
    """``L`` transformer blocks over ``(..., N, d, e)`` input.

    Blocks 1, 3, ... attend over the d (feature) axis, blocks 2, 4, ... over
    the N (sample) axis.
    """

    def __init__(self, e: int, heads: int, layers: int, dropout: float = 0.0, head_dim: int | None = None):
        super().__init__()
        if layers % 2:
            raise ValueError(f"alternating attention needs an even layer count, got {layers}")
        self.blocks = nn.ModuleList(
            TransformerBlock(e, heads, dropout, head_dim=head_dim) for _ in range(layers)
        )

    def forward(self, x):
        for idx, block in enumerate(self.blocks):
            if idx % 2 == 0:
                x = block(x)
            else:
                x = block(x.transpose(-2, -3)).transpose(-2, -3)
        return x


class RowMLP(nn.Module):
    """Same MLP applied to every row (last axis); GELU between layers."""

    def __init__(self, sizes: Sequence[int]):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("RowMLP needs at least input and output size")
        self.sizes = tuple(sizes)
        self.layers = nn.ModuleList(linear(a, b) for a, b in zip(sizes, sizes[1:]))

    def forward(self, x):
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected last axis {self.sizes[0]}, got {tuple(x.shape)}")
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.gelu(x)
        return x


def grad_check(
    f: Callable[[], torch.Tensor], params: Iterable[torch.Tensor], step: float = 1e-5
) -> float:
    """Max relative error between autograd and central differences.

    Error is measured per parameter tensor in the max norm,
    ``max|analytic - numeric| / max(max|analytic|, 1e-8)``, and the worst
    tensor is reported. A per-entry ratio would be dominated by cancellation
    noise on entries whose gradient is orders of magnitude below the rest of
    their tensor. ``f`` must be deterministic (no dropout, fixed noise).
    """
    params = [p for p in params if p.requires_grad]
    analytic = torch.autograd.grad(f(), params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            gflat = g.reshape(-1)
            diff = 0.0
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + step
                up = f().item()
                flat[idx] = orig - step
                down = f().item()
                flat[idx] = orig
                numeric = (up - down) / (2 * step)
                diff = max(diff, abs(gflat[idx].item() - numeric))
            scale = max(gflat.abs().max().item() if gflat.numel() else 0.0, 1e-8)
            worst = max(worst, diff / scale)
    return worst


def module_arrays(module: nn.Module, prefix: str = "") -> dict:
    return {prefix + name: p.detach().cpu().numpy().copy() for name, p in module.state_dict().items()}


def load_module_arrays(module: nn.Module, arrays: dict, prefix: str = "") -> None:
    state = {}
    for name, ref in module.state_dict().items():
        key = prefix + name
        if key not in arrays:
            raise KeyError(f"checkpoint lacks tensor {key}")
        arr = torch.as_tensor(arrays[key], dtype=ref.dtype)
        if tuple(arr.shape) != tuple(ref.shape):
            raise ValueError(f"shape mismatch for {key}: {tuple(arr.shape)} vs {tuple(ref.shape)}")
        state[name] = arr
    module.load_state_dict(state)
