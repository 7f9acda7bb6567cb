"""Encoder-decoder pairing used for training and report generation."""

import dataclasses

import torch
import torch.nn as nn

from .decoders import DecoderConfig, build_decoder, generate
from .encoders import EncoderConfig, build_encoder

# Display names in the order the comparison tables list them.
PAIR_NAMES = {
    ("vit", "gpt2"): "ViT B16-GPT-2",
    ("vit", "bart"): "ViT B16-BART",
    ("swin", "bart"): "SWIN-BART",
    ("swin", "gpt2"): "SWIN-GPT-2",
}


def default_encoder_config(kind):
    if kind == "vit":
        return EncoderConfig(kind="vit", image_size=64, patch_size=8, embed_dim=64, depth=2, num_heads=4)
    if kind == "swin":
        return EncoderConfig(kind="swin", image_size=64, patch_size=4, window_size=2, embed_dim=64,
                             depth=(2, 2), num_heads=4)
    raise ValueError(f"unknown encoder kind {kind!r}")


def default_decoder_config(kind, vocab_size=1000, max_len=60):
    return DecoderConfig(kind=kind, vocab_size=vocab_size, model_dim=64, depth=2, num_heads=4, max_len=max_len)


class VisionLanguageModel(nn.Module):
    def __init__(self, encoder, decoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def encode(self, images):
        return self.encoder(images)

    def forward(self, images, tokens):
        """images [B, C, H, W], tokens [B, T] -> logits [B, T, vocab_size] (teacher forcing)."""
        return self.decoder(tokens, self.encoder(images))

    @torch.no_grad()
    def generate(self, image, gen):
        return generate(self.encoder(image), self.decoder, gen)


def build_model(encoder_config, decoder_config, seed=0):
    """Build and seed-initialize a model; the encoder output is projected to the decoder width if needed."""
    if encoder_config.memory_dim != decoder_config.model_dim:
        encoder_config = dataclasses.replace(encoder_config, out_dim=decoder_config.model_dim)
    return VisionLanguageModel(build_encoder(encoder_config, seed), build_decoder(decoder_config, seed + 1))
