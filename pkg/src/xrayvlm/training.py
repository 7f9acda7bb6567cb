"""Cross-entropy training with a hand-written AdamW, validation, checkpoints and loss curves."""

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .decoders import DecoderConfig
from .encoders import EncoderConfig
from .model import PAIR_NAMES, build_model, default_decoder_config, default_encoder_config
from .tokenizer import PAD, Vocab, build_vocab, encode

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "xrayvlm-checkpoint"
CHECKPOINT_VERSION = 1

# epochs per decoder family, as used for the published runs
DEFAULT_EPOCHS = {"gpt2": 5, "bart": 8}


@dataclass
class RunConfig:
    encoder_kind: str = "vit"
    decoder_kind: str = "gpt2"
    epochs: int = None
    batch_size: int = 8
    learning_rate: float = 5e-5
    weight_decay: float = 0.01
    seed: int = 0
    max_len: int = 60
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = None
    freeze_encoder: bool = False
    min_freq: int = 1
    encoder: EncoderConfig = None
    decoder: DecoderConfig = None
    name: str = None

    def __post_init__(self):
        if (self.encoder_kind, self.decoder_kind) not in PAIR_NAMES:
            raise ValueError(f"unsupported pairing {self.encoder_kind}-{self.decoder_kind}")
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.decoder_kind]
        if self.encoder is None:
            self.encoder = default_encoder_config(self.encoder_kind)
        if self.decoder is None:
            self.decoder = default_decoder_config(self.decoder_kind, max_len=self.max_len)
        if self.name is None:
            self.name = PAIR_NAMES[(self.encoder_kind, self.decoder_kind)]
        if self.encoder.kind != self.encoder_kind or self.decoder.kind != self.decoder_kind:
            raise ValueError("sub-config kinds must match encoder_kind/decoder_kind")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        if self.decoder.max_len < self.max_len:
            raise ValueError("decoder max_len is shorter than the run max_len")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        enc = dict(d.pop("encoder"))
        for k in ("depth", "num_heads"):
            if isinstance(enc[k], list):
                enc[k] = tuple(enc[k])
        return cls(encoder=EncoderConfig(**enc), decoder=DecoderConfig(**d.pop("decoder")), **d)


@dataclass
class OptState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: torch.zeros_like(p) for k, p in params.items()},
                   {k: torch.zeros_like(p) for k, p in params.items()})


@dataclass
class RunResult:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int = None
    best_checkpoint: str = None
    config: RunConfig = field(default=None, repr=False)
    model: object = field(default=None, repr=False, compare=False)
    vocab: Vocab = field(default=None, repr=False, compare=False)


def xent_loss(logits, targets, pad_id=PAD):
    """Mean next-token negative log-likelihood over non-PAD targets."""
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {list(logits.shape)} do not match targets {list(targets.shape)}")
    keep = targets != pad_id
    if not keep.any():
        raise ValueError("no supervised positions")
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return nll[keep].mean()


@torch.no_grad()
def adamw_step(params, grads, state, lr, wd, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place AdamW update with decoupled weight decay.

    theta <- theta * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)
    """
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m, v = state.m[name], state.v[name]
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        step = (m / bc1) / ((v / bc2).sqrt() + eps)
        p.mul_(1.0 - lr * wd).sub_(lr * step)
    return params, state


def load_image(path, image_size, channels=1):
    """PNG -> [channels, image_size, image_size] in [0, 1], bilinear resize, grey replicated to RGB."""
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    img = img.convert("L" if channels == 1 else "RGB").resize((image_size, image_size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    t = torch.from_numpy(arr)
    if channels == 1:
        return t.unsqueeze(0)
    return t.permute(2, 0, 1).contiguous()


@dataclass
class Example:
    study_id: str
    image: torch.Tensor
    tokens: torch.Tensor
    text: str


def make_examples(manifest, split, vocab, enc_config, max_len):
    out = []
    for r in manifest.split(split):
        img = load_image(manifest.image_path(r), enc_config.image_size, enc_config.in_chans)
        seq = encode(r.report_text, vocab, max_len)
        out.append(Example(r.study_id, img, torch.tensor(seq.ids, dtype=torch.long), r.report_text))
    return out


def batches(examples, batch_size, order=None):
    idx = list(range(len(examples))) if order is None else list(order)
    for i in range(0, len(idx), batch_size):
        chunk = [examples[j] for j in idx[i:i + batch_size]]
        yield torch.stack([e.image for e in chunk]), torch.stack([e.tokens for e in chunk])


def _batch_loss(model, images, tokens):
    inputs, targets = tokens[:, :-1], tokens[:, 1:]
    logits = model(images, inputs)
    return xent_loss(logits, targets), int((targets != PAD).sum())


def trainable_params(model):
    return {n: p for n, p in model.named_parameters() if p.requires_grad}


def train_epoch(model, data, opt, config, epoch=0):
    """One pass in seeded-shuffled order; returns the token-weighted mean batch loss.

    ``data`` is a list of :class:`Example`; the last short batch is kept.
    """
    if not data:
        raise ValueError("no training batches")
    gen = torch.Generator().manual_seed(config.seed + epoch)
    order = torch.randperm(len(data), generator=gen).tolist()
    params = trainable_params(model)
    model.train()
    total, tokens = 0.0, 0
    for b, (images, toks) in enumerate(batches(data, config.batch_size, order)):
        model.zero_grad(set_to_none=True)
        try:
            loss, n = _batch_loss(model, images, toks)
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            if config.grad_clip:
                norm = torch.sqrt(sum((g * g).sum() for g in grads.values()))
                if norm > config.grad_clip:
                    grads = {k: g * (config.grad_clip / norm) for k, g in grads.items()}
            adamw_step(params, grads, opt, config.learning_rate, config.weight_decay,
                       config.beta1, config.beta2, config.eps)
        except FloatingPointError as exc:
            raise FloatingPointError(f"batch {b}: {exc}") from exc
        total += float(loss.detach()) * n
        tokens += n
    return total / tokens


@torch.no_grad()
def evaluate_loss(model, data, batch_size):
    model.eval()
    total, tokens = 0.0, 0
    for images, toks in batches(data, batch_size):
        loss, n = _batch_loss(model, images, toks)
        total += float(loss) * n
        tokens += n
    return total / tokens


def param_digest(model):
    h = hashlib.sha256()
    for name, p in model.state_dict().items():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, model, opt, config, vocab, epoch):
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "step": opt.t if opt else 0,
        "config": config.to_dict(),
        "vocab": list(vocab.tokens),
        "params": {n: {"shape": list(p.shape), "dtype": str(p.dtype)} for n, p in model.named_parameters()},
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    for n, p in model.named_parameters():
        arrays[f"param/{n}"] = p.detach().cpu().numpy()
        if opt is not None and n in opt.m:
            arrays[f"m/{n}"] = opt.m[n].cpu().numpy()
            arrays[f"v/{n}"] = opt.v[n].cpu().numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path):
    """Rebuild ``(model, vocab, config, opt_state, epoch)`` from a checkpoint file."""
    try:
        data = np.load(path, allow_pickle=False)
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format/version "
                             f"{meta.get('format')!r}/{meta.get('version')!r}")
        config = RunConfig.from_dict(meta["config"])
        vocab = Vocab(tuple(meta["vocab"]))
        model = build_model(config.encoder, dataclasses.replace(config.decoder, vocab_size=len(vocab)), config.seed)
        params = dict(model.named_parameters())
        if set(params) != set(meta["params"]):
            raise ValueError(f"{path}: parameter names do not match the model")
        opt = OptState({}, {}, meta["step"])
        with torch.no_grad():
            for n, p in params.items():
                arr = data[f"param/{n}"]
                if tuple(arr.shape) != tuple(p.shape):
                    raise ValueError(f"{path}: shape mismatch for {n}: file {arr.shape}, model {tuple(p.shape)}")
                p.copy_(torch.from_numpy(arr))
                if f"m/{n}" in data:
                    opt.m[n] = torch.from_numpy(data[f"m/{n}"].copy())
                    opt.v[n] = torch.from_numpy(data[f"v/{n}"].copy())
    return model, vocab, config, opt, meta["epoch"]


def fit(run, manifest, out_dir=None):
    """Train ``run`` on the manifest's train split, tracking validation loss per epoch.

    Checkpoints go to ``out_dir/checkpoints/epoch_XX.npz`` when ``out_dir`` is given.
    """
    vocab = build_vocab(manifest, run.min_freq)
    dec_cfg = dataclasses.replace(run.decoder, vocab_size=len(vocab))
    model = build_model(run.encoder, dec_cfg, run.seed)
    if run.freeze_encoder:
        for p in model.encoder.parameters():
            p.requires_grad_(False)
    enc_cfg = model.encoder.config
    train = make_examples(manifest, "train", vocab, enc_cfg, run.max_len)
    val = make_examples(manifest, "validation", vocab, enc_cfg, run.max_len)
    if not val:
        raise ValueError("validation split is empty")
    opt = OptState.zeros_like(trainable_params(model))
    result = RunResult(config=run, model=model, vocab=vocab)
    best = math.inf
    for epoch in range(run.epochs):
        t0 = time.perf_counter()
        tr = train_epoch(model, train, opt, run, epoch)
        va = evaluate_loss(model, val, run.batch_size)
        result.epoch_seconds.append(time.perf_counter() - t0)
        result.train_loss.append(tr)
        result.val_loss.append(va)
        log.info("%s epoch %d: train %.4f val %.4f", run.name, epoch + 1, tr, va)
        if out_dir is not None:
            ckpt = save_checkpoint(Path(out_dir) / "checkpoints" / f"epoch_{epoch + 1:02d}.npz",
                                   model, opt, run, vocab, epoch + 1)
        if va < best:
            best = va
            result.best_epoch = epoch + 1
            if out_dir is not None:
                result.best_checkpoint = str(ckpt)
    return result


CURVE_COLUMNS = ("epoch", "train_loss", "val_loss")


def export_loss_curves(result):
    """CSV text ``epoch,train_loss,val_loss``; floats use shortest round-trip repr."""
    if not result.train_loss:
        raise ValueError("empty run result")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for i, (tr, va) in enumerate(zip(result.train_loss, result.val_loss), start=1):
        w.writerow([i, repr(float(tr)), repr(float(va))])
    return buf.getvalue()


def read_loss_curves(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    return ([int(r["epoch"]) for r in rows], [float(r["train_loss"]) for r in rows],
            [float(r["val_loss"]) for r in rows])


def plot_loss_curves(csv_text, png_path, title=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs, tr, va = read_loss_curves(csv_text)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, tr, marker="o", label="Training loss")
    ax.plot(epochs, va, marker="o", label="Validation loss")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Loss")
    ax.set_title(title or "Training vs Validation Loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    return png_path
