"""ViT-style and SWIN-style image encoders producing the cross-attention memory."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .layers import DTYPE, Attention, Mlp, TransformerBlock, check_finite, init_weights


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder geometry.

    For ``kind="vit"`` ``depth`` is the number of transformer blocks; for
    ``kind="swin"`` it is a tuple of per-stage depths and ``num_heads`` may be
    an int (same for every stage) or a per-stage tuple. ``out_dim`` adds a
    final linear projection, used to match the decoder width.
    """

    kind: str = "vit"
    image_size: int = 64
    patch_size: int = 8
    in_chans: int = 1
    embed_dim: int = 64
    depth: object = 2
    num_heads: object = 4
    window_size: int = 2
    mlp_ratio: float = 4.0
    relative_position_bias: bool = True
    out_dim: int = None

    def __post_init__(self):
        if self.kind not in ("vit", "swin"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.kind == "vit":
            if int(self.depth) < 1:
                raise ValueError("vit depth must be >= 1")
            if self.embed_dim % int(self.num_heads):
                raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
            return
        depths = self.stage_depths
        if not depths or any(d < 1 for d in depths):
            raise ValueError(f"swin stage depths must all be >= 1, got {self.depth!r}")
        heads = self.stage_heads
        if len(heads) != len(depths):
            raise ValueError("num_heads must give one value per stage")
        grid = self.grid_size
        for s in range(len(depths)):
            dim = self.embed_dim * 2 ** s
            if grid % self.window_size:
                raise ValueError(f"stage {s}: grid {grid} not divisible by window {self.window_size}")
            if dim % heads[s]:
                raise ValueError(f"stage {s}: dim {dim} not divisible by num_heads {heads[s]}")
            if s < len(depths) - 1:
                if grid % 2:
                    raise ValueError(f"stage {s}: odd grid {grid} cannot be merged")
                grid //= 2

    @property
    def grid_size(self):
        return self.image_size // self.patch_size

    @property
    def stage_depths(self):
        return tuple(self.depth) if isinstance(self.depth, (tuple, list)) else (int(self.depth),)

    @property
    def stage_heads(self):
        if isinstance(self.num_heads, (tuple, list)):
            return tuple(self.num_heads)
        return (int(self.num_heads),) * len(self.stage_depths)

    @property
    def feature_dim(self):
        if self.kind == "vit":
            return self.embed_dim
        return self.embed_dim * 2 ** (len(self.stage_depths) - 1)

    @property
    def memory_dim(self):
        return self.out_dim or self.feature_dim

    @property
    def num_tokens(self):
        if self.kind == "vit":
            return self.grid_size ** 2
        return (self.grid_size // 2 ** (len(self.stage_depths) - 1)) ** 2


def vit_b16(**overrides):
    """Full-size ViT-B/16 geometry (224 px, 12 blocks of width 768)."""
    kw = dict(kind="vit", image_size=224, patch_size=16, in_chans=3, embed_dim=768, depth=12, num_heads=12)
    kw.update(overrides)
    return EncoderConfig(**kw)


def swin_tiny(**overrides):
    """Swin-T geometry (224 px, patch 4, window 7, depths 2-2-6-2)."""
    kw = dict(kind="swin", image_size=224, patch_size=4, in_chans=3, embed_dim=96,
              depth=(2, 2, 6, 2), num_heads=(3, 6, 12, 24), window_size=7)
    kw.update(overrides)
    return EncoderConfig(**kw)


class PatchEmbed(nn.Module):
    """Split into non-overlapping patches, project linearly, add a learned position embedding."""

    def __init__(self, image_size, patch_size, in_chans, dim):
        super().__init__()
        self.image_size, self.patch_size, self.in_chans = image_size, patch_size, in_chans
        self.grid = image_size // patch_size
        self.proj = nn.Linear(in_chans * patch_size * patch_size, dim, dtype=DTYPE)
        self.pos_embed = nn.Parameter(torch.zeros(self.grid * self.grid, dim, dtype=DTYPE))

    def forward(self, images):
        """[B, C, H, W] -> feature grid [B, H', W', D]."""
        expected = (self.in_chans, self.image_size, self.image_size)
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ValueError(f"expected image shape [B, {', '.join(map(str, expected))}], got {list(images.shape)}")
        b, c, _, _ = images.shape
        p, g = self.patch_size, self.grid
        patches = images.reshape(b, c, g, p, g, p).permute(0, 2, 4, 1, 3, 5).reshape(b, g * g, c * p * p)
        x = self.proj(patches.to(DTYPE)) + self.pos_embed
        return x.view(b, g, g, -1)


def _batched(images):
    return images.unsqueeze(0) if images.dim() == 3 else images


class ViTEncoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        if config.kind != "vit":
            raise ValueError("ViTEncoder needs kind='vit'")
        self.config = config
        self.patch_embed = PatchEmbed(config.image_size, config.patch_size, config.in_chans, config.embed_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.embed_dim, int(config.num_heads), config.mlp_ratio) for _ in range(int(config.depth))
        )
        self.norm = nn.LayerNorm(config.embed_dim, dtype=DTYPE)
        self.proj = nn.Linear(config.embed_dim, config.out_dim, dtype=DTYPE) if config.out_dim else nn.Identity()

    def forward(self, images, return_weights=False):
        """[B, C, H, W] (or [C, H, W]) -> memory [B, N, memory_dim]."""
        grid = self.patch_embed(_batched(images))
        x = grid.flatten(1, 2)
        weights = []
        for i, blk in enumerate(self.blocks):
            x, w = blk(x, return_weights=True)
            check_finite(x, f"encoder block {i}")
            weights.append(w)
        x = self.proj(self.norm(x))
        return (x, weights) if return_weights else x


def window_partition(grid, window):
    """[H, W, D] or [B, H, W, D] -> [num_windows, window*window, D], tiles in row-major order."""
    squeeze = grid.dim() == 3
    if squeeze:
        grid = grid.unsqueeze(0)
    b, h, w, d = grid.shape
    if h % window or w % window:
        raise ValueError(f"grid {h}x{w} not divisible by window {window}")
    x = grid.reshape(b, h // window, window, w // window, window, d)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, d)


def window_reverse(windows, h, w, window):
    """Inverse of :func:`window_partition`; returns [B, H, W, D]."""
    if h % window or w % window:
        raise ValueError(f"grid {h}x{w} not divisible by window {window}")
    per_image = (h // window) * (w // window)
    n, t, d = windows.shape
    if t != window * window or n % per_image:
        raise ValueError(f"windows of shape {list(windows.shape)} do not tile a {h}x{w} grid with window {window}")
    x = windows.reshape(n // per_image, h // window, w // window, window, window, d)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, h, w, d)


def relative_position_index(window):
    coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (window - 1)
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


def shifted_window_mask(h, w, window, shift):
    """Additive mask [num_windows, N, N]: 0 where two tokens came from the same region before the roll, -inf otherwise."""
    region = torch.zeros(1, h, w, 1, dtype=DTYPE)
    label = 0
    for hs in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
        for ws in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
            region[:, hs, ws, :] = label
            label += 1
    ids = window_partition(region, window).squeeze(-1)
    same = ids[:, :, None] == ids[:, None, :]
    return torch.zeros(same.shape, dtype=DTYPE).masked_fill(~same, float("-inf"))


class SwinBlock(nn.Module):
    """Pre-norm (shifted-)window attention + MLP over a [B, H, W, D] grid."""

    def __init__(self, dim, num_heads, grid, window, shift, mlp_ratio=4.0, relative_position_bias=True):
        super().__init__()
        self.grid, self.window = grid, window
        # a window covering the whole grid leaves nothing to shift
        self.shift_size = window // 2 if (shift and grid > window) else 0
        self.norm1 = nn.LayerNorm(dim, dtype=DTYPE)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, dtype=DTYPE)
        self.mlp = Mlp(dim, mlp_ratio)
        if relative_position_bias:
            self.relative_position_bias_table = nn.Parameter(
                torch.zeros((2 * window - 1) ** 2, num_heads, dtype=DTYPE))
            self.register_buffer("rel_index", relative_position_index(window), persistent=False)
        else:
            self.relative_position_bias_table = None
        if self.shift_size:
            self.register_buffer("attn_mask", shifted_window_mask(grid, grid, window, self.shift_size), persistent=False)
        else:
            self.attn_mask = None

    def position_bias(self):
        if self.relative_position_bias_table is None:
            return None
        n = self.window * self.window
        return self.relative_position_bias_table[self.rel_index.reshape(-1)].reshape(n, n, -1).permute(2, 0, 1)

    def forward(self, x, return_weights=False):
        b, h, w, d = x.shape
        if h != self.grid or w != self.grid:
            raise ValueError(f"block built for a {self.grid}x{self.grid} grid, got {h}x{w}")
        shortcut = x
        x = self.norm1(x)
        if self.shift_size:
            x = torch.roll(x, shifts=(-self.shift_size, -self.shift_size), dims=(1, 2))
        windows = window_partition(x, self.window)
        mask = None
        if self.attn_mask is not None:
            mask = self.attn_mask.repeat(b, 1, 1).unsqueeze(1)
        out, weights = self.attn(windows, mask=mask, bias=self.position_bias(), return_weights=True)
        x = window_reverse(out, h, w, self.window)
        if self.shift_size:
            x = torch.roll(x, shifts=(self.shift_size, self.shift_size), dims=(1, 2))
        x = shortcut + x
        x = x + self.mlp(self.norm2(x))
        return (x, weights) if return_weights else x


class PatchMerging(nn.Module):
    """Concatenate each 2x2 neighbourhood, layer-norm, project 4D -> 2D."""

    def __init__(self, dim):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim, dtype=DTYPE)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False, dtype=DTYPE)

    def forward(self, x):
        b, h, w, d = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"patch merging needs even grid dims, got {h}x{w}")
        x0 = x[:, 0::2, 0::2]
        x1 = x[:, 1::2, 0::2]
        x2 = x[:, 0::2, 1::2]
        x3 = x[:, 1::2, 1::2]
        return self.reduction(self.norm(torch.cat([x0, x1, x2, x3], dim=-1)))


class SwinEncoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        if config.kind != "swin":
            raise ValueError("SwinEncoder needs kind='swin'")
        self.config = config
        self.patch_embed = PatchEmbed(config.image_size, config.patch_size, config.in_chans, config.embed_dim)
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        grid, dim = config.grid_size, config.embed_dim
        n_stages = len(config.stage_depths)
        for s, (depth, heads) in enumerate(zip(config.stage_depths, config.stage_heads)):
            self.stages.append(nn.ModuleList(
                SwinBlock(dim, heads, grid, config.window_size, shift=bool(i % 2), mlp_ratio=config.mlp_ratio,
                          relative_position_bias=config.relative_position_bias)
                for i in range(depth)
            ))
            if s < n_stages - 1:
                self.merges.append(PatchMerging(dim))
                grid, dim = grid // 2, dim * 2
        self.norm = nn.LayerNorm(dim, dtype=DTYPE)
        self.proj = nn.Linear(dim, config.out_dim, dtype=DTYPE) if config.out_dim else nn.Identity()

    def forward(self, images, return_weights=False):
        x = self.patch_embed(_batched(images))
        weights = []
        for s, blocks in enumerate(self.stages):
            for i, blk in enumerate(blocks):
                x, w = blk(x, return_weights=True)
                check_finite(x, f"encoder stage {s} block {i}")
                weights.append(w)
            if s < len(self.merges):
                x = self.merges[s](x)
        x = self.proj(self.norm(x.flatten(1, 2)))
        return (x, weights) if return_weights else x


def build_encoder(config, seed=0):
    enc = ViTEncoder(config) if config.kind == "vit" else SwinEncoder(config)
    return init_weights(enc, seed)
