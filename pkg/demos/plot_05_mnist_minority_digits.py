"""
Minority digits on MNIST
========================

Train on 5 images each of digits 3, 4 and 7 and 5000 images of digit 9,
then test on every test image of those digits.  The weighted loss alone
barely helps the minority digits; adding weighted batch normalization does.

Set ``WBN_MNIST_DIR`` to the directory holding the four uncompressed IDX
files.  One repetition of 50 epochs takes under a minute per method.
"""

import os
from pathlib import Path

from wbn.data import load_idx
from wbn.harness import TrainConfig, repeat_experiment, summarize

root = Path(os.environ.get("WBN_MNIST_DIR", "/root/data/mnist"))
train_src = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
test_src = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte")

config = TrainConfig(
    subset_counts={"3": 5, "4": 5, "7": 5, "9": 5000},
    epochs=int(os.environ.get("WBN_EPOCHS", 50)),
    repetitions=int(os.environ.get("WBN_REPETITIONS", 1)),
    seed=0,
)
records = repeat_experiment(config, train_src, test_src, methods=("LF+BN", "WLF(ICF)+BN", "WLF(ICF)+WBN"))

###############################################################################
# Per-class and overall (macro) test accuracy in percent.

print(f"{'method':16s}     3     4     7     9 | overall")
for method, s in summarize(records).items():
    cells = " ".join(f"{a:5.1f}" for a in s["per_class"])
    print(f"{method:16s} {cells} | {s['overall']:5.1f}")
