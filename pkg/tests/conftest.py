import numpy as np
import pytest
import torch
from PIL import Image

from xrayvlm.corpus import StudyRecord, load_manifest, write_manifest
from xrayvlm.decoders import DecoderConfig
from xrayvlm.encoders import EncoderConfig
from xrayvlm.synthetic import make_synthetic_dataset

PAIRINGS = [("vit", "gpt2"), ("vit", "bart"), ("swin", "bart"), ("swin", "gpt2")]


def tiny_encoder(kind, dim=8, **kw):
    if kind == "vit":
        base = dict(kind="vit", image_size=8, patch_size=4, in_chans=1, embed_dim=dim, depth=1, num_heads=2,
                    mlp_ratio=2.0)
    else:
        base = dict(kind="swin", image_size=8, patch_size=2, in_chans=1, embed_dim=dim // 2, depth=(2, 1),
                    num_heads=2, window_size=2, mlp_ratio=2.0)
    base.update(kw)
    return EncoderConfig(**base)


def tiny_decoder(kind, vocab_size=12, dim=8, max_len=6, **kw):
    base = dict(kind=kind, vocab_size=vocab_size, model_dim=dim, depth=1, num_heads=2, max_len=max_len,
                mlp_ratio=2.0)
    base.update(kw)
    return DecoderConfig(**base)


def randomize(module, seed=0, scale=0.3):
    """Fill every parameter (LayerNorm included) with non-trivial values."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            noise = torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale
            p.copy_(noise + 1.0 if "norm" in name and name.endswith("weight") else noise)
    return module


def state_numpy(module):
    return {k: v.detach().numpy().copy() for k, v in module.state_dict().items()}


def write_dataset(root, rows, size=8):
    """rows: (study_id, split, report); writes flat grey PNGs plus manifest.tsv."""
    (root / "img").mkdir(parents=True, exist_ok=True)
    records = []
    for sid, split, report in rows:
        rel = f"img/{sid}.png"
        Image.fromarray(np.full((size, size), 128, dtype=np.uint8)).save(root / rel)
        records.append(StudyRecord(sid, rel, report, split))
    write_manifest(records, root / "manifest.tsv")
    return load_manifest(root, root / "manifest.tsv")


@pytest.fixture
def small_manifest(tmp_path):
    return write_dataset(tmp_path, [
        ("a", "train", "no acute disease"),
        ("b", "train", "no effusion"),
        ("c", "test", "heart size normal"),
        ("d", "validation", "no acute disease"),
    ])


@pytest.fixture(scope="session")
def synthetic16(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic16")
    return make_synthetic_dataset(root, n=16, seed=0, image_size=32)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
