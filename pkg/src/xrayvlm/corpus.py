"""Image/report manifest loading, validation and report-length analysis."""

import csv
import io
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .text import load_stopwords, words

SPLITS = ("train", "test", "validation")
# Expected share of each split, in percent.
TARGET_RATIO = {"train": 70.0, "test": 20.0, "validation": 10.0}
RATIO_TOLERANCE_PP = 2.0

MANIFEST_HEADER = ("study_id", "image_relpath", "split", "report_text")


class ManifestError(ValueError):
    """Raised when a manifest file cannot be parsed."""


class IntegrityError(ValueError):
    """Raised when manifest rows violate a cross-row constraint."""


@dataclass(frozen=True)
class StudyRecord:
    study_id: str
    image_ref: str
    report_text: str
    split: str


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple
    root: Path

    def __len__(self):
        return len(self.records)

    def split(self, name):
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return [r for r in self.records if r.split == name]

    def image_path(self, record):
        return Path(self.root) / record.image_ref


@dataclass
class ValidationReport:
    total: int
    split_counts: dict
    missing_files: list = field(default_factory=list)
    empty_reports: list = field(default_factory=list)
    empty_splits: list = field(default_factory=list)
    split_percent: dict = field(default_factory=dict)
    ratio_ok: bool = False

    @property
    def ok(self):
        return not (self.missing_files or self.empty_reports or self.empty_splits) and self.ratio_ok


@dataclass(frozen=True)
class ReportLengthStats:
    count: int
    mean: float
    std: float
    min: int
    max: int
    q25: float
    q50: float
    q75: float


@dataclass(frozen=True)
class WordFrequencyTable:
    entries: dict
    stopwords_removed: bool

    def total(self):
        return sum(self.entries.values())

    def most_common(self, n=None):
        return sorted(self.entries.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


def _unescape(field_text):
    out = []
    chars = iter(field_text)
    for ch in chars:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(chars, "")
        out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, "\\" + nxt))
    return "".join(out)


def _escape(field_text):
    return field_text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def load_manifest(root, manifest_file):
    """Read a tab-separated manifest.

    The first line is the header ``study_id, image_relpath, split, report_text``;
    tabs and newlines inside ``report_text`` are escaped as ``\\t`` / ``\\n``.
    No image is opened here.
    """
    manifest_file = Path(manifest_file)
    with open(manifest_file, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestError(f"{manifest_file}: no records")
    header = tuple(lines[0].split("\t"))
    if header != MANIFEST_HEADER:
        raise ManifestError(f"{manifest_file}:1: bad header {header!r}, expected {MANIFEST_HEADER!r}")

    records = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ManifestError(f"{manifest_file}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        study_id, image_ref, split, report = parts
        if not study_id:
            raise ManifestError(f"{manifest_file}:{lineno}: empty study_id")
        if split not in SPLITS:
            raise ManifestError(f"{manifest_file}:{lineno}: unknown split {split!r}")
        if study_id in seen:
            raise IntegrityError(f"duplicate study_id {study_id!r} (line {lineno})")
        seen.add(study_id)
        records.append(StudyRecord(study_id, image_ref, _unescape(report), split))
    if not records:
        raise ManifestError(f"{manifest_file}: no records")
    return CorpusManifest(tuple(records), Path(root))


def write_manifest(records, manifest_file):
    with open(manifest_file, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(MANIFEST_HEADER) + "\n")
        for r in records:
            fh.write("\t".join([r.study_id, r.image_ref, r.split, _escape(r.report_text)]) + "\n")


def validate_manifest(manifest):
    """Collect every problem with ``manifest`` into a report. Never raises."""
    counts = Counter(r.split for r in manifest.records)
    split_counts = {s: counts.get(s, 0) for s in SPLITS}
    total = len(manifest.records)
    report = ValidationReport(total=total, split_counts=split_counts)
    for r in manifest.records:
        path = manifest.image_path(r)
        if not (path.is_file() and os.access(path, os.R_OK)):
            report.missing_files.append(str(path))
        if not r.report_text.strip():
            report.empty_reports.append(r.study_id)
    report.empty_splits = [s for s in SPLITS if split_counts[s] == 0]
    if total:
        report.split_percent = {s: 100.0 * split_counts[s] / total for s in SPLITS}
        report.ratio_ok = all(
            abs(report.split_percent[s] - TARGET_RATIO[s]) <= RATIO_TOLERANCE_PP for s in SPLITS
        )
    return report


def _length_stats(lengths, ddof):
    arr = np.asarray(lengths, dtype=np.float64)
    q25, q50, q75 = np.percentile(arr, [25, 50, 75])
    # a single observation has no spread under either convention
    std = float(arr.std(ddof=ddof)) if arr.size > ddof else 0.0
    return ReportLengthStats(
        count=int(arr.size),
        mean=float(arr.mean()),
        std=std,
        min=int(arr.min()),
        max=int(arr.max()),
        q25=float(q25),
        q50=float(q50),
        q75=float(q75),
    )


def report_length_stats(manifest, split, tokenization=words, ddof=1):
    """Word-count statistics of the reports in ``split``.

    ``split`` may also be ``"all"``. ``ddof=1`` gives the sample standard
    deviation, ``ddof=0`` the population one. Quantiles use linear interpolation.
    """
    records = manifest.records if split == "all" else manifest.split(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    return _length_stats([len(tokenization(r.report_text)) for r in records], ddof)


def strip_stopwords(text, stopwords):
    return " ".join(tok for tok in text.split() if tok.lower() not in stopwords)


def word_frequencies(manifest, split, remove_stopwords, stopwords=None):
    if remove_stopwords and stopwords is None:
        stopwords = load_stopwords()
    records = manifest.records if split == "all" else manifest.split(split)
    counts = Counter()
    for r in records:
        toks = words(r.report_text)
        if remove_stopwords:
            toks = [t for t in toks if t not in stopwords]
        counts.update(toks)
    return WordFrequencyTable(dict(counts), bool(remove_stopwords))


STATS_COLUMNS = ("Split", "Count", "Mean", "Standard Deviation", "Min", "Max", "25%", "50%", "75%")


def _stats_row(name, s):
    return [name, s.count, s.mean, s.std, s.min, s.max, s.q25, s.q50, s.q75]


def stats_to_csv(rows):
    """``rows`` is a list of ``(split_name, ReportLengthStats)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_COLUMNS)
    for name, s in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in _stats_row(name, s)])
    return buf.getvalue()


def format_table(columns, rows, floatfmt="{:.3f}"):
    """Render an aligned plain-text table."""
    cells = [[c if isinstance(c, str) else (floatfmt.format(c) if isinstance(c, float) else str(c)) for c in row]
             for row in rows]
    widths = [max(len(str(col)), *(len(r[i]) for r in cells)) if cells else len(str(col))
              for i, col in enumerate(columns)]
    lines = ["  ".join(str(col).ljust(widths[i]) if i == 0 else str(col).rjust(widths[i])
                       for i, col in enumerate(columns))]
    lines.append("  ".join("-" * w for w in widths))
    for r in cells:
        lines.append("  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)))
    return "\n".join(lines)


def stats_to_text(rows):
    return format_table(STATS_COLUMNS, [_stats_row(name.capitalize(), s) for name, s in rows])


def frequencies_to_csv(table):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["word", "count"])
    w.writerows(table.most_common())
    return buf.getvalue()
