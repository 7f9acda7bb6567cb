"""
Decoding reports
================

Greedy and beam search over an untrained model. With fixed-length mode on,
generation always runs to max_len and ends with EOS.
"""

import torch

from xrayvlm.decoders import GenerationConfig
from xrayvlm.model import build_model, default_decoder_config, default_encoder_config

model = build_model(default_encoder_config("swin"), default_decoder_config("bart", vocab_size=50, max_len=12), seed=0)
image = torch.rand(1, 1, 64, 64, dtype=torch.float64)

for gen in (GenerationConfig("greedy", 1, 12, fixed_length=True),
            GenerationConfig("greedy", 1, 12, fixed_length=False),
            GenerationConfig("beam", 3, 12, fixed_length=False)):
    seq = model.generate(image, gen)
    print(gen.strategy, gen.beam_width, gen.fixed_length, seq.ids, seq.true_length)
