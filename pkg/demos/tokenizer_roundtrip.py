"""
Vocabulary and token sequences
==============================

The vocabulary is built from training reports only. Sequences are framed
with BOS and EOS and padded to a fixed length.
"""

import tempfile
from pathlib import Path

from xrayvlm.synthetic import make_synthetic_dataset
from xrayvlm.tokenizer import build_vocab, decode, encode

manifest = make_synthetic_dataset(Path(tempfile.mkdtemp()), n=20, seed=1)
vocab = build_vocab(manifest, min_freq=1)
print(len(vocab), "tokens; first ten:", vocab.tokens[:10])

seq = encode("No acute cardiopulmonary abnormality.", vocab, max_len=12)
print(seq.ids, "true length", seq.true_length)

# unknown words become <unk>; decoding drops the framing tokens
print(decode(encode("no zebra seen", vocab, 8).ids, vocab))
