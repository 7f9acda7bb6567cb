"""Word-level vocabulary and fixed-length token sequences."""

from collections import Counter
from dataclasses import dataclass

from .text import words

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


@dataclass(frozen=True)
class Vocab:
    tokens: tuple

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocab must start with the four special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocab tokens must be unique")
        object.__setattr__(self, "id_of", {t: i for i, t in enumerate(self.tokens)})

    @property
    def token_of(self):
        return dict(enumerate(self.tokens))

    pad_id, bos_id, eos_id, unk_id = PAD, BOS, EOS, UNK

    def __len__(self):
        return len(self.tokens)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(tuple(fh.read().splitlines()))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    true_length: int

    def __len__(self):
        return len(self.ids)


def build_vocab(manifest, min_freq=1):
    """Vocabulary over training-split words seen at least ``min_freq`` times.

    Ids after the specials are ordered by descending frequency, ties broken
    lexicographically.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    train = manifest.split("train")
    if not train:
        raise ValueError("training split is empty")
    counts = Counter()
    for r in train:
        counts.update(words(r.report_text))
    kept = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    return Vocab(SPECIAL_TOKENS + tuple(w for w in kept if w not in SPECIAL_TOKENS))


def encode(text, vocab, max_len):
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    body = [vocab.id_of.get(w, UNK) for w in words(text)][: max_len - 2]
    ids = [BOS, *body, EOS]
    n = len(ids)
    return TokenSequence(tuple(ids + [PAD] * (max_len - n)), n)


def decode(ids, vocab):
    out = []
    for i in ids:
        i = int(i)
        if i in (PAD, BOS, EOS):
            continue
        out.append(vocab.tokens[i] if 0 <= i < len(vocab.tokens) else vocab.tokens[UNK])
    return " ".join(out)
