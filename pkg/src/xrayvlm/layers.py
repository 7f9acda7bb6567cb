"""Attention and feed-forward building blocks shared by the encoders and decoders."""

import torch
import torch.nn as nn
import torch.nn.functional as F

DTYPE = torch.float64


class Attention(nn.Module):
    """Multi-head scaled dot-product attention with separate q/k/v projections.

    With ``context=None`` this is self-attention; otherwise queries come from
    ``x`` and keys/values from ``context`` (cross-attention).
    """

    def __init__(self, dim, num_heads, context_dim=None):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        context_dim = context_dim or dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.q = nn.Linear(dim, dim, dtype=DTYPE)
        self.k = nn.Linear(context_dim, dim, dtype=DTYPE)
        self.v = nn.Linear(context_dim, dim, dtype=DTYPE)
        self.proj = nn.Linear(dim, dim, dtype=DTYPE)

    def _heads(self, t):
        b, n, _ = t.shape
        return t.view(b, n, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, x, context=None, mask=None, bias=None, return_weights=False):
        """``mask`` and ``bias`` are additive and broadcast to [B, heads, Tq, Tk]."""
        context = x if context is None else context
        q = self._heads(self.q(x))
        k = self._heads(self.k(context))
        v = self._heads(self.v(context))
        scores = (q @ k.transpose(-2, -1)) * self.scale
        if bias is not None:
            scores = scores + bias
        if mask is not None:
            scores = scores + mask
        weights = scores.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        out = self.proj(out)
        return (out, weights) if return_weights else out


class Mlp(nn.Module):
    def __init__(self, dim, mlp_ratio=4.0, approximate="none"):
        super().__init__()
        hidden = int(round(dim * mlp_ratio))
        self.fc1 = nn.Linear(dim, hidden, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden, dim, dtype=DTYPE)
        self.approximate = approximate

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x), approximate=self.approximate))


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + MLP block (the ViT block)."""

    def __init__(self, dim, num_heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, dtype=DTYPE)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, dtype=DTYPE)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x, mask=None, bias=None, return_weights=False):
        h, w = self.attn(self.norm1(x), mask=mask, bias=bias, return_weights=True)
        x = x + h
        x = x + self.mlp(self.norm2(x))
        return (x, w) if return_weights else x


def check_finite(x, where):
    if not torch.isfinite(x).all():
        raise FloatingPointError(f"non-finite activation in {where}")
    return x


def init_weights(module, seed, std=0.02):
    """Seeded init: truncated normal for weights/embeddings, zeros for biases, unit LayerNorm."""
    gen = torch.Generator().manual_seed(seed)
    norm_params = set()
    for m in module.modules():
        if isinstance(m, nn.LayerNorm):
            norm_params.update(id(p) for p in m.parameters())
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if id(p) in norm_params:
                continue
            if name.endswith("bias"):
                p.zero_()
            else:
                nn.init.trunc_normal_(p, std=std, a=-2 * std, b=2 * std, generator=gen)
    return module


def sinusoidal_positions(n, dim):
    pos = torch.arange(n, dtype=DTYPE)[:, None]
    i = torch.arange(0, dim, 2, dtype=DTYPE)
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=DTYPE), i / dim)
    table = torch.zeros(n, dim, dtype=DTYPE)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return table


def num_params(module):
    return sum(p.numel() for p in module.parameters())

