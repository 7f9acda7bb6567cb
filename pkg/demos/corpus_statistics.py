"""
Corpus loading and report statistics
====================================

Build a small synthetic chest X-ray corpus, validate it, and look at report
lengths and word frequencies the way the dataset section of a paper would.
"""

import tempfile
from pathlib import Path

from xrayvlm.corpus import report_length_stats, stats_to_text, validate_manifest, word_frequencies
from xrayvlm.synthetic import make_synthetic_dataset

root = Path(tempfile.mkdtemp()) / "corpus"
manifest = make_synthetic_dataset(root, n=40, seed=0)

# structural checks: every image present, no empty report, split ratio near 70:20:10
report = validate_manifest(manifest)
print(report.split_counts, report.split_percent, "ok" if report.ok else "problems")

# report length per split, counted in words after lowercasing and dropping punctuation
rows = [(split, report_length_stats(manifest, split)) for split in ("train", "test", "validation")]
print(stats_to_text(rows))

# the most frequent words, with and without stopwords
print(word_frequencies(manifest, "all", remove_stopwords=False).most_common(8))
print(word_frequencies(manifest, "all", remove_stopwords=True).most_common(8))
