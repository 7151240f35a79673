"""Training and evaluation protocol for imbalanced classification experiments.

A run builds an imbalanced training subset, trains the classifier with one of
the method combinations below, and scores it on every test sample of the
participating classes.

=================  ==============  ===============  =============
method             sample weights  loss             hidden norm
=================  ==============  ===============  =============
LF+BN              --              mean             batch norm
WLF(ICF)+BN        ICF             weighted mean    batch norm
WLF(CBL)+BN        CBL             weighted mean    batch norm
WLF(ICF)+WBN       ICF             weighted mean    weighted BN
WLF(CBL)+WBN       CBL             weighted mean    weighted BN
WLF(UNIFORM)+WBN   all ones        weighted mean    weighted BN
WLF(UNIFORM)+BN    all ones        weighted mean    batch norm
=================  ==============  ===============  =============

The last two exist for reduction checks (they must reproduce LF+BN).
"""

from __future__ import annotations

import csv
import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as dataio
from .backprop import backward, batch_loss, param_grads
from .netcore import MovingStats, NetworkConfig, forward_full, predict
from .optim import AdamaxState, adamax_step, init_model
from .weighting import WeightScheme, compute_weights, default_cbl_beta

__all__ = [
    "STANDARD_METHODS",
    "Method",
    "parse_method",
    "ConfigError",
    "TrainingDiverged",
    "TrainConfig",
    "TrainResult",
    "Metrics",
    "RunRecord",
    "train",
    "evaluate",
    "metrics_from_predictions",
    "load_datasets",
    "run_once",
    "repeat_experiment",
    "summarize",
    "emit_report",
]

log = logging.getLogger(__name__)

STANDARD_METHODS = ("LF+BN", "WLF(ICF)+BN", "WLF(CBL)+BN", "WLF(ICF)+WBN", "WLF(CBL)+WBN")

_METHOD_RE = re.compile(r"^(LF|WLF\((ICF|CBL|UNIFORM)\))\+(BN|WBN)$")


class ConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class Method:
    name: str
    scheme: str
    weighted: bool
    norm: str


def parse_method(name):
    match = _METHOD_RE.match(name.strip().upper())
    if not match:
        raise ConfigError(f"unknown method {name!r}")
    loss, scheme, norm = match.groups()
    if loss == "LF" and norm == "WBN":
        raise ConfigError("WBN needs a weighted loss; use WLF(UNIFORM)+WBN for the unweighted case")
    return Method(
        name=match.group(0),
        scheme=scheme.lower() if scheme else "uniform",
        weighted=loss != "LF",
        norm=norm.lower(),
    )


@dataclass
class TrainConfig:
    """Everything needed to reproduce an experiment; JSON sections mirror the attribute groups."""

    # dataset
    dataset: dict = field(default_factory=dict)
    # subset
    subset_counts: dict = field(default_factory=dict)
    subset_seed: int = 0
    # method
    method: str = "LF+BN"
    methods: tuple = ()
    beta: float | None = None
    # network
    hidden: tuple = (300, 300)
    normalize_hidden: bool = True
    eps: float = 1e-8
    moving_variance_divisor: str = "R-1"
    legacy_variance_normalizer: bool = False
    dtype: str = "float64"
    # optimizer
    alpha: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    floor: float = 1e-8
    # protocol
    batch_size: int = 128
    epochs: int = 200
    repetitions: int = 30
    seed: int = 0
    run_seeds: tuple | None = None
    moving_stats: str = "last_epoch"
    workers: int = 1

    SECTIONS = {
        "dataset": ("dataset",),
        "subset": ("subset_counts", "subset_seed"),
        "method": ("method", "methods", "beta"),
        "network": ("hidden", "normalize_hidden", "eps", "moving_variance_divisor",
                    "legacy_variance_normalizer", "dtype"),
        "optimizer": ("alpha", "beta1", "beta2", "floor"),
        "protocol": ("batch_size", "epochs", "repetitions", "seed", "run_seeds",
                     "moving_stats", "workers"),
    }
    # short names accepted inside sections
    ALIASES = {("subset", "counts"): "subset_counts", ("subset", "seed"): "subset_seed",
               ("method", "name"): "method"}

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.methods = tuple(self.methods) if self.methods else ()
        if self.run_seeds is not None:
            self.run_seeds = tuple(int(s) for s in self.run_seeds)
        self.validate()

    def validate(self):
        for name in self.method_list():
            parse_method(name)
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0 or self.repetitions < 1:
            raise ConfigError("epochs must be >= 0 and repetitions >= 1")
        if self.moving_stats not in ("last_epoch", "frozen_pass"):
            raise ConfigError("moving_stats must be 'last_epoch' or 'frozen_pass'")
        if self.beta is not None and not 0 <= self.beta < 1:
            raise ConfigError("beta must lie in [0, 1)")
        if self.run_seeds is not None and len(self.run_seeds) < self.repetitions:
            raise ConfigError("run_seeds must provide one seed per repetition")

    def method_list(self):
        return self.methods or (self.method,)

    @classmethod
    def from_dict(cls, raw):
        kwargs = {}
        for section, body in raw.items():
            if section not in cls.SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            if section == "dataset":
                kwargs["dataset"] = dict(body)
                continue
            for key, value in body.items():
                attr = cls.ALIASES.get((section, key), key)
                if attr not in cls.SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in section {section!r}")
                kwargs[attr] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        flat = asdict(self)
        out = {"dataset": flat.pop("dataset")}
        for section, keys in self.SECTIONS.items():
            if section == "dataset":
                continue
            out[section] = {k: flat[k] for k in keys}
        return out

    def network_config(self, n, K, norm):
        return NetworkConfig.classifier(
            n, self.hidden, K,
            norm=norm if self.normalize_hidden else "none",
            eps=self.eps,
            legacy_variance_normalizer=self.legacy_variance_normalizer,
            moving_variance_divisor=self.moving_variance_divisor,
            dtype=self.dtype,
        )


@dataclass
class TrainResult:
    model: object
    epoch_losses: list
    step_losses: list


@dataclass
class Metrics:
    """Test accuracies in percent; ``overall`` is the unweighted mean over classes."""

    class_names: tuple
    confusion: np.ndarray
    per_class: np.ndarray
    overall: float
    pooled: float
    seed: int | None = None
    epochs: int | None = None


@dataclass
class RunRecord:
    method: str
    repetition: int
    seed: int
    metrics: Metrics


def _sample_weights(method, labels, K, beta):
    if method.scheme == "cbl":
        beta = default_cbl_beta(labels.size) if beta is None else beta
        scheme = WeightScheme("cbl", beta)
    else:
        scheme = WeightScheme(method.scheme)
    return compute_weights(scheme, labels, K).w


def train(config, dataset, seed=0, method=None, on_step=None):
    """Train one model on ``dataset`` with mini-batch Adamax.

    ``on_step(step, model, loss)`` is called after every parameter update.
    Moving statistics come from the batches of the last epoch, or from one
    extra pass with frozen parameters when ``config.moving_stats == "frozen_pass"``.
    """
    method = parse_method(method or config.method)
    rng = np.random.default_rng(seed)
    net_cfg = config.network_config(dataset.n, dataset.K, method.norm)
    model = init_model(net_cfg, rng, dataset.class_names)
    weights = _sample_weights(method, dataset.labels, dataset.K, config.beta)
    x_all = dataset.inputs.T.astype(net_cfg.dtype)
    t_all = dataset.one_hot().astype(net_cfg.dtype)
    opt = AdamaxState(config.alpha, config.beta1, config.beta2, config.floor)

    epoch_losses, step_losses = [], []
    stats = None
    step = 0
    for epoch in range(config.epochs):
        batches = dataio.partition_minibatches(
            dataset.N, config.batch_size, int(rng.integers(2**63))
        )
        last = epoch == config.epochs - 1
        if last and config.moving_stats == "last_epoch":
            stats = MovingStats(net_cfg.n_layers)
        total = 0.0
        for idx in batches:
            w = weights[idx]
            p, cache = forward_full(model, x_all[:, idx], w, regime="train")
            E = batch_loss(p, t_all[:, idx], w, method.weighted)
            if not np.isfinite(E):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {step} (method {method.name}, seed {seed})"
                )
            deltas = backward(model, cache, p, t_all[:, idx], method.weighted)
            grads = param_grads(model, cache, deltas)
            if stats is not None:
                stats.update(cache)
            adamax_step(opt, model.parameters(), grads.tensors())
            step += 1
            total += E
            step_losses.append(E)
            if on_step is not None:
                on_step(step, model, E)
        epoch_losses.append(total / len(batches))
        log.debug("epoch %d loss %.6f", epoch, epoch_losses[-1])

    if config.epochs > 0 and config.moving_stats == "frozen_pass":
        stats = MovingStats(net_cfg.n_layers)
        for idx in dataio.partition_minibatches(dataset.N, config.batch_size, int(rng.integers(2**63))):
            _, cache = forward_full(model, x_all[:, idx], weights[idx], regime="train")
            stats.update(cache)
    if stats is not None and any(l.normalized for l in model.layers):
        stats.apply(model)
    return TrainResult(model, epoch_losses, step_losses)


def metrics_from_predictions(labels, preds, class_names, seed=None, epochs=None):
    K = len(class_names)
    conf = np.zeros((K, K), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    support = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = 100.0 * np.diag(conf) / support
    present = support > 0
    overall = float(per_class[present].mean())
    pooled = 100.0 * float(np.trace(conf)) / float(support.sum())
    return Metrics(tuple(class_names), conf, per_class, overall, pooled, seed, epochs)


def evaluate(model, dataset, batch=4096):
    """Inference-regime accuracy on ``dataset`` (deterministic, no side effects)."""
    labels = dataset.labels
    names = model.class_names or dataset.class_names
    if model.class_names is not None:
        index = {name: i for i, name in enumerate(model.class_names)}
        missing = [c for c in dataset.class_names if c not in index]
        if missing:
            raise ValueError(f"test classes {missing} unknown to the model")
        labels = np.array([index[c] for c in dataset.class_names], dtype=np.int64)[labels]
    if len(names) != model.config.layer_sizes[-1]:
        raise ValueError("model output size does not match its class list")
    preds = []
    for start in range(0, dataset.N, batch):
        x = dataset.inputs[start:start + batch].T
        p, _ = forward_full(model, x, regime="infer")
        preds.append(predict(p))
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return metrics_from_predictions(labels, preds, names)


def _dataset_paths(spec, key):
    value = spec.get(key)
    if value is None:
        raise ConfigError(f"dataset section needs {key!r}")
    root = Path(spec.get("root", "."))
    if isinstance(value, (list, tuple)):
        return [root / v for v in value]
    return root / value


def load_datasets(config):
    """Return ``(train_source, test_source)`` as described by ``config.dataset``."""
    spec = config.dataset
    kind = spec.get("kind", "mnist").lower()
    if kind in ("mnist", "fashion-mnist"):
        names = spec.get("class_names") or (
            dataio.MNIST_CLASSES if kind == "mnist" else dataio.FASHION_MNIST_CLASSES
        )
        train_src = dataio.load_idx(
            _dataset_paths(spec, "train_images"), _dataset_paths(spec, "train_labels"), names
        )
        test_src = dataio.load_idx(
            _dataset_paths(spec, "test_images"), _dataset_paths(spec, "test_labels"), names
        )
    elif kind == "cifar10":
        names = spec.get("class_names") or dataio.CIFAR10_CLASSES
        train_src = dataio.load_cifar10_gray(_dataset_paths(spec, "train_batches"), names)
        test_src = dataio.load_cifar10_gray(_dataset_paths(spec, "test_batches"), names)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    return train_src, test_src


def _derive_seeds(config):
    if config.run_seeds is not None:
        return list(config.run_seeds[:config.repetitions])
    ss = np.random.SeedSequence(config.seed)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in ss.spawn(config.repetitions)]


def run_once(config, train_src, test_src, method, repetition, seed):
    """One repetition: fresh subset (seeded by ``seed``), train, evaluate."""
    subset_seed, train_seed = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    spec = dataio.SubsetSpec.from_names(config.subset_counts, train_src.class_names, int(subset_seed))
    train_set = dataio.build_imbalanced_subset(train_src, spec)
    test_set = dataio.select_classes(test_src, sorted(spec.counts))
    result = train(config, train_set, int(train_seed), method)
    metrics = evaluate(result.model, test_set)
    metrics.seed, metrics.epochs = seed, config.epochs
    return RunRecord(method, repetition, seed, metrics), result


def _run_job(args):
    config, train_src, test_src, method, rep, seed = args
    record, _ = run_once(config, train_src, test_src, method, rep, seed)
    return record


def repeat_experiment(config, train_src=None, test_src=None, methods=None):
    """Run every method for ``config.repetitions`` freshly drawn subsets.

    Repetition ``i`` uses the same derived seed for every method, so methods
    are compared on identical subsets and initializations.
    """
    if train_src is None:
        train_src, test_src = load_datasets(config)
    methods = tuple(methods or config.method_list())
    seeds = _derive_seeds(config)
    jobs = [(config, train_src, test_src, m, i, s) for m in methods for i, s in enumerate(seeds)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_run_job, jobs))
    records = []
    for job in jobs:
        records.append(_run_job(job))
        r = records[-1]
        log.info("%s rep %d: overall %.1f%%", r.method, r.repetition, r.metrics.overall)
    return records


def summarize(records):
    """Mean per-class / overall / pooled accuracy per method, in first-seen method order."""
    out = {}
    for method in dict.fromkeys(r.method for r in records):
        rows = [r.metrics for r in records if r.method == method]
        out[method] = {
            "per_class": np.mean([m.per_class for m in rows], axis=0),
            "overall": float(np.mean([m.overall for m in rows])),
            "pooled": float(np.mean([m.pooled for m in rows])),
            "runs": len(rows),
        }
    return out


def _fmt(x):
    return repr(float(x))


def emit_report(records, path):
    """Write one CSV row per (method, repetition) and a ``mean`` row per method."""
    if not records:
        raise ValueError("no runs to report")
    names = records[0].metrics.class_names
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "repetition", "seed", *names, "overall", "pooled"])
        for r in records:
            m = r.metrics
            writer.writerow([r.method, r.repetition, r.seed,
                             *map(_fmt, m.per_class), _fmt(m.overall), _fmt(m.pooled)])
        for method, s in summarize(records).items():
            writer.writerow([method, "mean", "",
                             *map(_fmt, s["per_class"]), _fmt(s["overall"]), _fmt(s["pooled"])])
    return path


def with_overrides(config, **overrides):
    """Copy of ``config`` with non-``None`` overrides applied."""
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
