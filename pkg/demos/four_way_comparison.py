"""
Four-way comparison from the command line
=========================================

Train all four encoder-decoder pairings on one corpus and emit the two
result tables. Equivalent shell usage:

    xrayvlm compare --config exp.cfg --data data --out out
"""

import tempfile
from pathlib import Path

from xrayvlm.cli import main
from xrayvlm.synthetic import make_synthetic_dataset

work = Path(tempfile.mkdtemp())
make_synthetic_dataset(work / "data", n=16, seed=0)

(work / "exp.cfg").write_text("""
[experiment]
seed = 0

[vit_gpt2]
encoder = vit
decoder = gpt2
epochs = 2

[vit_bart]
encoder = vit
decoder = bart
epochs = 2

[swin_bart]
encoder = swin
decoder = bart
epochs = 2

[swin_gpt2]
encoder = swin
decoder = gpt2
epochs = 2
""")

main(["compare", "--config", str(work / "exp.cfg"), "--data", str(work / "data"), "--out", str(work / "out")])
print("per-run loss curves, checkpoints and predictions under", work / "out")
