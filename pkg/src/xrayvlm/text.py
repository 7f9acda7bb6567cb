"""Word tokenization shared by corpus statistics, the vocabulary and the metrics."""

import string
from functools import lru_cache
from importlib import resources

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

STOPWORDS_VERSION = "v1"


def words(text):
    """Lowercase ``text``, delete punctuation characters and split on whitespace.

    Never yields empty tokens.
    """
    return text.lower().translate(_PUNCT_TABLE).split()


def normalize(text):
    return " ".join(words(text))


@lru_cache(maxsize=None)
def load_stopwords(version=STOPWORDS_VERSION):
    """Return the shipped English stopword list as a frozenset.

    Both the listed spelling ("don't") and its punctuation-stripped form ("dont")
    are included so the set works on raw and on normalized tokens.
    """
    name = f"stopwords_en_{version}.txt"
    raw = resources.files("xrayvlm.data").joinpath(name).read_text(encoding="utf-8")
    out = set()
    for line in raw.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        out.add(line)
        out.update(words(line))
    return frozenset(out)
