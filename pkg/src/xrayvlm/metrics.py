"""ROUGE-N, ROUGE-L, BLEU and BERTScore over word tokens."""

import csv
import hashlib
import io
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import format_table
from .text import words

tokenize = words

BLEU_FLOOR = 1e-9


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, p, r):
        return cls(p, r, 0.0 if p + r == 0 else 2 * p * r / (p + r))


def ngram_multiset(tokens, n):
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _ratio(num, den):
    return num / den if den else 0.0


def rouge_n(candidate, reference, n):
    cand, ref = ngram_multiset(candidate, n), ngram_multiset(reference, n)
    match = sum((cand & ref).values())
    return PRF.from_pr(_ratio(match, sum(cand.values())), _ratio(match, sum(ref.values())))


def lcs_length(a, b):
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference):
    """LCS-based F-measure with beta=1."""
    lcs = lcs_length(candidate, reference)
    return PRF.from_pr(_ratio(lcs, len(candidate)), _ratio(lcs, len(reference)))


def modified_precision_counts(candidate, reference, n):
    """(clipped matches, candidate n-gram total) for one sentence pair."""
    cand = ngram_multiset(candidate, n)
    ref = ngram_multiset(reference, n)
    return sum(min(c, ref[g]) for g, c in cand.items()), sum(cand.values())


def brevity_penalty(c, r):
    if c > r:
        return 1.0
    if c == 0:
        return 0.0
    return math.exp(1.0 - r / c)


def bleu(candidates, references, max_n=4):
    """Corpus BLEU, one reference per candidate, uniform weights.

    Clipped counts are pooled over the corpus before dividing. A zero
    precision is floored at ``BLEU_FLOOR``; an order for which no candidate
    has any n-gram carries no evidence and is left out of the geometric mean.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if not candidates:
        raise ValueError("empty candidate list")
    c = sum(len(x) for x in candidates)
    r = sum(len(x) for x in references)
    bp = brevity_penalty(c, r)
    if bp == 0.0:
        return 0.0
    logs = []
    for n in range(1, max_n + 1):
        matches = total = 0
        for cand, ref in zip(candidates, references):
            m, t = modified_precision_counts(cand, ref, n)
            matches += m
            total += t
        if total == 0:
            continue
        logs.append(math.log(max(matches / total, BLEU_FLOOR)))
    return bp * math.exp(sum(logs) / len(logs))


class HashEmbedder:
    """Deterministic test embedder: each token maps to a seeded random unit vector.

    Identical strings give identical vectors, so scores are reproducible
    bit-for-bit; there is no context dependence. Components are folded to be
    non-negative, which keeps every cosine (and so every score) in [0, 1].
    """

    def __init__(self, dim=64, seed=0):
        self.dim, self.seed = dim, seed
        self._cache = {}

    def _vector(self, token):
        v = self._cache.get(token)
        if v is None:
            digest = hashlib.blake2b(f"{self.seed}\x00{token}".encode(), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            v = np.abs(rng.standard_normal(self.dim))
            v /= np.linalg.norm(v)
            self._cache[token] = v
        return v

    def __call__(self, tokens):
        return np.stack([self._vector(t) for t in tokens])


class FunctionEmbedder:
    """Adapter for an external model: wraps any ``tokens -> [len(tokens), dim]`` callable."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, tokens):
        out = np.asarray(self.fn(list(tokens)), dtype=np.float64)
        if out.ndim != 2 or out.shape[0] != len(tokens):
            raise ValueError(f"embedder returned shape {out.shape} for {len(tokens)} tokens")
        return out


def _unit_rows(mat, which):
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if not np.all(np.isfinite(mat)) or np.any(norms == 0):
        raise ValueError(f"{which} embeddings contain a zero-norm or non-finite vector")
    return mat / norms


def bertscore(candidate, reference, embedder):
    """Greedy cosine matching, no idf weighting, no baseline rescaling."""
    if not candidate or not reference:
        raise ValueError("bertscore needs non-empty candidate and reference")
    c = _unit_rows(embedder(candidate), "candidate")
    r = _unit_rows(embedder(reference), "reference")
    sim = np.clip(c @ r.T, -1.0, 1.0)
    p = float(sim.max(axis=1).mean())
    rec = float(sim.max(axis=0).mean())
    return PRF.from_pr(p, rec)


TABLE3_COLUMNS = ("Model", "ROUGE1 F1", "ROUGE2 F1", "ROUGE3 F1", "ROUGE4 F1", "ROUGEL F1", "BLEU")
TABLE4_COLUMNS = ("Model", "BERTScore Precision", "BERTScore Recall", "BERTScore F1")


@dataclass(frozen=True)
class MetricRow:
    rouge1: float
    rouge2: float
    rouge3: float
    rouge4: float
    rougeL: float
    bleu: float
    bert_precision: float
    bert_recall: float
    bert_f1: float

    def table3(self):
        return [self.rouge1, self.rouge2, self.rouge3, self.rouge4, self.rougeL, self.bleu]

    def table4(self):
        return [self.bert_precision, self.bert_recall, self.bert_f1]


def evaluate_corpus(predictions, references, embedder=None):
    """Macro-averaged sentence ROUGE/BERTScore and corpus BLEU over matching ids.

    A pair with an empty side scores 0 for BERTScore.
    """
    if set(predictions) != set(references):
        missing = sorted(set(references) - set(predictions))
        extra = sorted(set(predictions) - set(references))
        raise ValueError(f"id mismatch: missing predictions {missing}, unexpected predictions {extra}")
    if not predictions:
        raise ValueError("empty corpus")
    embedder = embedder or HashEmbedder()
    ids = sorted(predictions)
    cands = [tokenize(predictions[i]) for i in ids]
    refs = [tokenize(references[i]) for i in ids]
    rouge = np.zeros(5)
    bert = np.zeros(3)
    for c, r in zip(cands, refs):
        rouge += [rouge_n(c, r, n).f1 for n in (1, 2, 3, 4)] + [rouge_l(c, r).f1]
        if c and r:
            s = bertscore(c, r, embedder)
            bert += [s.precision, s.recall, s.f1]
    rouge /= len(ids)
    bert /= len(ids)
    return MetricRow(*map(float, rouge), bleu(cands, refs), *map(float, bert))


def metric_report_csv(rows):
    """``rows`` maps model name -> MetricRow; columns follow the two result tables in order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE3_COLUMNS + TABLE4_COLUMNS[1:])
    for name, row in rows.items():
        w.writerow([name, *(repr(v) for v in row.table3() + row.table4())])
    return buf.getvalue()


def metric_report_text(rows):
    t3 = format_table(TABLE3_COLUMNS, [[name, *row.table3()] for name, row in rows.items()], "{:.4f}")
    t4 = format_table(TABLE4_COLUMNS, [[name, *row.table4()] for name, row in rows.items()], "{:.4f}")
    return ("Model Evaluation with ROUGE and BLEU score\n" + t3
            + "\n\nModel Evaluation with BERTScore\n" + t4 + "\n")
