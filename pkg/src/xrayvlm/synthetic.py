"""Small synthetic image/report datasets for smoke runs and demos.

Each image is a dark field with bright blobs whose positions encode the
findings named in the paired report, so a model can learn the mapping.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import StudyRecord, load_manifest, write_manifest

FINDINGS = (
    ("the heart size is normal", (0.5, 0.55)),
    ("there is a small left pleural effusion", (0.75, 0.8)),
    ("there is a right upper lobe opacity", (0.25, 0.25)),
    ("the lungs are hyperexpanded", (0.5, 0.2)),
    ("no pneumothorax is seen", (0.25, 0.8)),
    ("degenerative changes of the spine", (0.5, 0.9)),
)
CLOSING = ("no acute cardiopulmonary disease", "findings are stable")


def _render(spots, size, rng):
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.1 + 0.05 * rng.standard_normal((size, size))
    for cy, cx in spots:
        img += 0.8 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 0.01)
    return (np.clip(img, 0, 1) * 255).astype(np.uint8)


def split_sizes(n):
    train = round(0.7 * n)
    test = round(0.2 * n)
    return train, test, n - train - test


def make_synthetic_dataset(root, n=16, seed=0, image_size=64):
    """Write ``n`` PNG/report pairs and ``manifest.tsv`` under ``root``; return the manifest."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_train, n_test, _ = split_sizes(n)
    records = []
    for i in range(n):
        k = int(rng.integers(1, 3))
        chosen = sorted(rng.choice(len(FINDINGS), size=k, replace=False).tolist())
        sentences = [FINDINGS[j][0] for j in chosen] + [CLOSING[i % 2]]
        report = ". ".join(s.capitalize() for s in sentences) + "."
        pixels = _render([FINDINGS[j][1] for j in chosen], image_size, rng)
        rel = f"images/study_{i:04d}.png"
        Image.fromarray(pixels).save(root / rel)
        split = "train" if i < n_train else ("test" if i < n_train + n_test else "validation")
        records.append(StudyRecord(f"study_{i:04d}", rel, report, split))
    write_manifest(records, root / "manifest.tsv")
    return load_manifest(root, root / "manifest.tsv")
