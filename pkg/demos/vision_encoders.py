"""
ViT and SWIN encoders
=====================

Both encoders map an image batch to a sequence of visual tokens, the memory
that the text decoder cross-attends to.
"""

import torch

from xrayvlm.encoders import EncoderConfig, build_encoder, shifted_window_mask, swin_tiny, vit_b16

images = torch.rand(2, 1, 64, 64, dtype=torch.float64)

vit = build_encoder(EncoderConfig(kind="vit", image_size=64, patch_size=8, embed_dim=64, depth=2, num_heads=4))
print("ViT memory", tuple(vit(images).shape))  # 8x8 patches, one token each

swin_cfg = EncoderConfig(kind="swin", image_size=64, patch_size=4, window_size=2, embed_dim=32,
                         depth=(2, 2), num_heads=(2, 4))
swin = build_encoder(swin_cfg)
print("SWIN memory", tuple(swin(images).shape))  # 16x16 patches merged once to 8x8, width doubled

# a shifted window mixes tokens from up to four regions of the rolled grid;
# -inf entries keep tokens from attending across region boundaries
mask = shifted_window_mask(4, 4, 2, 1)
print((mask[-1] == 0).int())

# the published geometries are available as configs; building them is slow in float64
print(vit_b16().num_tokens, swin_tiny().num_tokens)
