import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("WBN_MNIST_DIR", "/root/data/mnist"))
MNIST_FILES = (
    "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte",
)

_criteria = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def record_criterion():
    """Register a one-line acceptance verdict printed at the end of the session."""

    def record(number, title, passed, detail=""):
        _criteria.append((number, title, passed, detail))

    return record


def mnist_available():
    return all((MNIST_DIR / f).exists() for f in MNIST_FILES)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_criteria):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] criterion {number}: {title} {detail}".rstrip())


def blob_dataset(seed=0, per_class=(40, 40, 40), n=6, spread=0.08):
    """Well-separated Gaussian blobs in ``[0, 1]^n``, one centre per class."""
    from wbn.data import LabeledDataset

    g = np.random.default_rng(seed)
    centres = g.uniform(0.2, 0.8, size=(len(per_class), n))
    labels = np.repeat(np.arange(len(per_class)), per_class)
    x = np.clip(centres[labels] + spread * g.standard_normal((labels.size, n)), 0, 1)
    return LabeledDataset(x, labels, tuple(str(k) for k in range(len(per_class))))


@pytest.fixture
def idx_config(tmp_path):
    """Small 10-class IDX dataset on disk and a matching JSON config path."""
    import json

    from wbn.data import LabeledDataset, write_idx

    for split, per in (("train", 30), ("t10k", 12)):
        src = blob_dataset(seed=len(split), per_class=(per,) * 10, n=16, spread=0.05)
        ds = LabeledDataset(src.inputs, src.labels, src.class_names, (4, 4))
        write_idx(tmp_path / f"{split}-images", tmp_path / f"{split}-labels", ds)
    cfg = {
        "dataset": {"kind": "mnist", "root": str(tmp_path),
                    "train_images": "train-images", "train_labels": "train-labels",
                    "test_images": "t10k-images", "test_labels": "t10k-labels"},
        "subset": {"counts": {"3": 4, "4": 4, "7": 4, "9": 25}, "seed": 0},
        "method": {"methods": ["LF+BN", "WLF(ICF)+WBN"]},
        "network": {"hidden": [8, 8]},
        "protocol": {"batch_size": 8, "epochs": 3, "repetitions": 2, "seed": 5},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path
