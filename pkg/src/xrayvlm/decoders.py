"""Autoregressive text decoders with cross-attention over visual memory."""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import DTYPE, Attention, Mlp, check_finite, init_weights, sinusoidal_positions
from .tokenizer import BOS, EOS, PAD, TokenSequence


@dataclass(frozen=True)
class DecoderConfig:
    kind: str = "gpt2"
    vocab_size: int = 1000
    model_dim: int = 64
    depth: int = 2
    num_heads: int = 4
    max_len: int = 60
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.kind not in ("gpt2", "bart"):
            raise ValueError(f"unknown decoder kind {self.kind!r}")
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.max_len < 3:
            raise ValueError(f"max_len must be >= 3, got {self.max_len}")
        if self.depth < 1 or self.vocab_size < 5:
            raise ValueError("decoder needs depth >= 1 and vocab_size >= 5")


@dataclass(frozen=True)
class GenerationConfig:
    strategy: str = "greedy"
    beam_width: int = 1
    max_len: int = 60
    fixed_length: bool = True

    def __post_init__(self):
        if self.strategy not in ("greedy", "beam"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.beam_width < 1 or (self.strategy == "greedy" and self.beam_width != 1):
            raise ValueError("greedy decoding uses beam_width=1")
        if self.max_len < 3:
            raise ValueError("max_len must be >= 3")


def causal_mask(t):
    """Additive [T, T] mask: 0 on and below the diagonal, -inf above."""
    return torch.full((t, t), float("-inf"), dtype=DTYPE).triu(1)


class DecoderBlock(nn.Module):
    """Causal self-attention, cross-attention to the memory, then MLP.

    ``pre_norm=True`` normalizes each sub-layer input (GPT-2 layout);
    ``pre_norm=False`` normalizes after each residual sum (BART layout).
    """

    def __init__(self, dim, num_heads, mlp_ratio, pre_norm, gelu_approx):
        super().__init__()
        self.pre_norm = pre_norm
        self.self_attn = Attention(dim, num_heads)
        self.cross_attn = Attention(dim, num_heads)
        self.mlp = Mlp(dim, mlp_ratio, approximate=gelu_approx)
        self.norm1 = nn.LayerNorm(dim, dtype=DTYPE)
        self.norm2 = nn.LayerNorm(dim, dtype=DTYPE)
        self.norm3 = nn.LayerNorm(dim, dtype=DTYPE)

    def forward(self, x, memory, mask, return_weights=False):
        if self.pre_norm:
            x = x + self.self_attn(self.norm1(x), mask=mask)
            h, w = self.cross_attn(self.norm2(x), context=memory, return_weights=True)
            x = x + h
            x = x + self.mlp(self.norm3(x))
        else:
            x = self.norm1(x + self.self_attn(x, mask=mask))
            h, w = self.cross_attn(x, context=memory, return_weights=True)
            x = self.norm2(x + h)
            x = self.norm3(x + self.mlp(x))
        return (x, w) if return_weights else x


class Decoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        d = config.model_dim
        gpt2 = config.kind == "gpt2"
        self.tok_embed = nn.Embedding(config.vocab_size, d, dtype=DTYPE)
        if gpt2:
            self.pos_embed = nn.Parameter(torch.zeros(config.max_len, d, dtype=DTYPE))
        else:
            self.register_buffer("pos_embed", sinusoidal_positions(config.max_len, d), persistent=False)
        self.blocks = nn.ModuleList(
            DecoderBlock(d, config.num_heads, config.mlp_ratio, pre_norm=gpt2, gelu_approx="tanh" if gpt2 else "none")
            for _ in range(config.depth)
        )
        self.final_norm = nn.LayerNorm(d, dtype=DTYPE)

    @property
    def output_weight(self):
        # tied: the output projection is the embedding table itself
        return self.tok_embed.weight

    def forward(self, tokens, memory, return_weights=False):
        """tokens [B, T] int, memory [B, N, D] -> logits [B, T, vocab_size]."""
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        if memory.dim() == 2:
            memory = memory.unsqueeze(0)
        b, t = tokens.shape
        if t > self.config.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {self.config.max_len}")
        if memory.shape[-1] != self.config.model_dim:
            raise ValueError(f"memory dim {memory.shape[-1]} != model_dim {self.config.model_dim}")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise ValueError(f"token id out of range [0, {self.config.vocab_size})")
        if memory.shape[0] != b:
            memory = memory.expand(b, -1, -1)
        x = self.tok_embed(tokens) + self.pos_embed[:t]
        mask = causal_mask(t)
        weights = []
        for i, blk in enumerate(self.blocks):
            x, w = blk(x, memory, mask, return_weights=True)
            check_finite(x, f"decoder block {i}")
            weights.append(w)
        logits = F.linear(self.final_norm(x), self.output_weight)
        return (logits, weights) if return_weights else logits


def build_decoder(config, seed=0):
    return init_weights(Decoder(config), seed)


def _step_scores(logits, position, max_len, fixed_length):
    """Mask tokens that may not appear at ``position`` (index into the output sequence)."""
    scores = logits.clone()
    scores[..., PAD] = float("-inf")
    scores[..., BOS] = float("-inf")
    if position == max_len - 1:
        keep = scores[..., EOS].clone()
        scores.fill_(float("-inf"))
        scores[..., EOS] = keep
    elif fixed_length:
        scores[..., EOS] = float("-inf")
    return scores


def _argmax_lowest(v):
    return int(torch.nonzero(v == v.max())[0, 0])


def _pad(ids, max_len):
    return TokenSequence(tuple(ids) + (PAD,) * (max_len - len(ids)), len(ids))


@torch.no_grad()
def generate(memory, decoder, gen):
    """Decode one report from ``memory`` ([N, D] or [1, N, D]).

    Greedy takes the highest-scoring token (lowest id on ties). In fixed-length
    mode EOS is withheld until the last position, where it is forced; otherwise
    decoding stops at the first EOS, or forces it once ``max_len`` is reached.
    """
    if gen.max_len > decoder.config.max_len:
        raise ValueError(f"generation max_len {gen.max_len} exceeds decoder max_len {decoder.config.max_len}")
    if memory.dim() == 2:
        memory = memory.unsqueeze(0)
    if gen.strategy == "beam":
        return _beam_search(memory, decoder, gen)
    ids = [BOS]
    while len(ids) < gen.max_len:
        logp = F.log_softmax(decoder(torch.tensor([ids]), memory)[0, -1], dim=-1)
        nxt = _argmax_lowest(_step_scores(logp, len(ids), gen.max_len, gen.fixed_length))
        ids.append(nxt)
        if nxt == EOS:
            break
    return _pad(ids, gen.max_len)


def _beam_search(memory, decoder, gen):
    # (ids, summed log-prob, finished)
    beams = [((BOS,), 0.0, False)]
    while not all(done for _, _, done in beams):
        alive = [b for b in beams if not b[2]]
        pos = len(alive[0][0])
        logits = decoder(torch.tensor([b[0] for b in alive]), memory)[:, -1]
        logp = _step_scores(F.log_softmax(logits, dim=-1), pos, gen.max_len, gen.fixed_length)
        pool = [b for b in beams if b[2]]
        for (ids, score, _), row in zip(alive, logp):
            order = torch.sort(-row, stable=True).indices[: gen.beam_width].tolist()
            for j in order:
                if not torch.isfinite(row[j]):
                    continue
                pool.append((ids + (j,), score + float(row[j]), j == EOS))
        pool.sort(key=lambda b: (-b[1] / (len(b[0]) - 1), b[0]))
        beams = pool[: gen.beam_width]
    return _pad(beams[0][0], gen.max_len)
