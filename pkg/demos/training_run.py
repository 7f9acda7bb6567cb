"""
Training one pairing
====================

Fit ViT-GPT-2 on a synthetic corpus, write per-epoch checkpoints, export the
loss curves and reload the best checkpoint.
"""

import tempfile
from pathlib import Path

from xrayvlm.training import RunConfig, export_loss_curves, fit, load_checkpoint, plot_loss_curves
from xrayvlm.synthetic import make_synthetic_dataset

work = Path(tempfile.mkdtemp())
manifest = make_synthetic_dataset(work / "data", n=24, seed=0)

# Table-2 style settings, with a larger learning rate so a few epochs show movement
run = RunConfig("vit", "gpt2", epochs=3, learning_rate=1e-3, max_len=40)
result = fit(run, manifest, work / "run")

csv_text = export_loss_curves(result)
print(csv_text)
plot_loss_curves(csv_text, work / "run" / "loss.png", "Training vs Validation Loss of ViT B16-GPT-2 Model")

model, vocab, config, opt, epoch = load_checkpoint(result.best_checkpoint)
print("best epoch", epoch, "after", opt.t, "optimizer steps; artifacts in", work)
