"""Acceptance checks, one test per criterion; verdicts are printed in the terminal summary."""

import time

import mpmath
import numpy as np
import pytest

from conftest import MNIST_DIR, blob_dataset, mnist_available
from wbn.backprop import finite_diff_check
from wbn.data import LabeledDataset, SubsetSpec, build_imbalanced_subset, load_idx
from wbn.harness import TrainConfig, evaluate, repeat_experiment, summarize, train
from wbn.netcore import LayerParams, NetworkConfig, NetworkModel, normalize_forward_train
from wbn.verify import gradcheck_problem, legacy_bias_factor, unbiasedness_mc
from wbn.weighting import (
    cbl_effective_closed_form,
    cbl_weights,
    effective_sizes,
    icf_weights,
)

GRADCHECK_STACKS = [
    ("bn", "wbn", "none"),
    ("wbn", "wbn", "none"),
    ("bn", "bn", "none"),
    ("none", "none", "none"),
    ("wbn", "bn", "wbn"),
]


def test_criterion_1_gradient_exactness(record_criterion):
    start = time.perf_counter()
    worst, worst_case = 0.0, None
    for seed in range(20):
        for stack in GRADCHECK_STACKS:
            model, x, t, w = gradcheck_problem(seed, stack)
            report = finite_diff_check(model, x, t, w, weighted=True, h=1e-5)
            if report.max_error > worst:
                worst, worst_case = report.max_error, (seed, stack)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10
    record_criterion(1, "gradient exactness", ok,
                     f"(max rel error {worst:.2e} at {worst_case}, {elapsed:.1f} s)")
    assert worst <= 1e-6
    assert elapsed < 10


def test_criterion_2_standardization_identities(record_criterion):
    rng = np.random.default_rng(2)
    worst_mean = worst_second = 0.0
    for trial in range(100):
        B = int(rng.integers(2, 129))
        H = int(rng.integers(1, 20))
        lam = rng.standard_normal((H, B)) * 10 ** rng.uniform(-1, 2, (H, 1)) + rng.uniform(-5, 5, (H, 1))
        for mode in ("bn", "wbn"):
            w = np.exp(rng.uniform(np.log(0.1), np.log(10), B)) if mode == "wbn" else np.ones(B)
            _, y, _, _ = normalize_forward_train(lam, np.ones(H), 1e-12, w if mode == "wbn" else None, mode)
            Z = w.sum()
            G = (Z * Z - w @ w) / Z
            worst_mean = max(worst_mean, float(np.abs(y @ w / Z).max()))
            worst_second = max(worst_second, float(np.abs((y * y) @ w / G - 1).max()))
    ok = worst_mean <= 1e-8 and worst_second <= 1e-6
    record_criterion(2, "standardization identities", ok,
                     f"(max |mean| {worst_mean:.1e}, max |second moment - 1| {worst_second:.1e})")
    assert ok


def _param_rel_diff(a, b):
    return max(
        float(np.linalg.norm(x - y) / max(np.linalg.norm(y), 1e-300))
        for x, y in zip(a, b)
    )


def test_criterion_3_constant_weight_reduction(record_criterion):
    ds = blob_dataset(seed=3, per_class=(30, 50, 120), n=10, spread=0.15)
    assert ds.N == 200
    cfg = TrainConfig(hidden=(16, 16), batch_size=32, epochs=3)
    trajectories = {}
    for method in ("LF+BN", "WLF(UNIFORM)+WBN"):
        snaps = []
        result = train(cfg, ds, seed=11, method=method,
                       on_step=lambda step, model, E, s=snaps: s.append(([p.copy() for p in model.parameters()], E)))
        trajectories[method] = (snaps, result.model)
    (bn_snaps, bn_model), (wbn_snaps, wbn_model) = trajectories.values()
    assert len(bn_snaps) == len(wbn_snaps) == 3 * 7
    worst = 0.0
    for (pa, Ea), (pb, Eb) in zip(wbn_snaps, bn_snaps):
        worst = max(worst, _param_rel_diff(pa, pb), abs(Ea - Eb) / abs(Eb))
    for la, lb in zip(wbn_model.layers, bn_model.layers):
        if la.normalized:
            worst = max(worst, _param_rel_diff([la.M, la.V], [lb.M, lb.V]))
    ok = worst <= 1e-12
    record_criterion(3, "constant-weight reduction", ok, f"(max step rel diff {worst:.1e})")
    assert ok


def test_criterion_4_unbiasedness(record_criterion):
    start = time.perf_counter()
    w = [1.0, 2.0, 3.0, 4.0]
    fresh = unbiasedness_mc(3.0, 4.0, w, 1_000_000, np.random.default_rng(4))
    legacy = unbiasedness_mc(3.0, 4.0, w, 1_000_000, np.random.default_rng(4), legacy=True)
    elapsed = time.perf_counter() - start
    factor = legacy_bias_factor(w)
    assert factor == pytest.approx(7 / 9)
    # legacy mean should sit at its analytic value 4 * 7/9 = 28/9 within the same band
    legacy_z = abs(legacy.mean_v - 4 * factor) / legacy.se_v
    ok = fresh.passed and not legacy.passed and legacy_z <= 4 and elapsed < 30
    record_criterion(4, "weighted estimators unbiased", ok,
                     f"(E[m] {fresh.mean_m:.5f} z={fresh.z_m:.2f}, E[v] {fresh.mean_v:.5f} z={fresh.z_v:.2f}; "
                     f"legacy E[v] {legacy.mean_v:.5f} vs 28/9, z from 4 = {legacy.z_v:.0f}; {elapsed:.1f} s)")
    assert fresh.passed
    assert not legacy.passed
    assert legacy_z <= 4
    assert elapsed < 30


def _mp_effective(count, beta):
    mpmath.mp.dps = 50
    b = mpmath.mpf(beta)
    return float(count * (1 - b) / (1 - b ** count))


def test_criterion_5_weighting_identities(record_criterion):
    counts = np.array([5, 5, 5, 5000])
    labels = np.repeat(np.arange(4), counts)
    N = labels.size
    icf = icf_weights(counts, labels)
    icf_eff = effective_sizes(icf, labels, 4).effective
    icf_err = float(np.abs(icf_eff / N - 1).max())
    ok_icf = icf_err <= 1e-9 and icf.Z == pytest.approx(20060, rel=1e-12)

    cbl_err = 0.0
    for beta in (0.5, 0.9, 0.999, (N - 1) / N, 1 - 1e-6):
        stats = effective_sizes(cbl_weights(counts, labels, beta), labels, 4)
        oracle = np.array([_mp_effective(int(c), beta) for c in counts])
        cbl_err = max(cbl_err, float(np.abs(stats.effective / oracle - 1).max()))
        np.testing.assert_allclose(cbl_effective_closed_form(counts, beta), oracle, rtol=1e-12)

    limit = cbl_weights(counts, labels, 1 - 1e-9).w * N / icf.w
    limit_err = float(np.abs(limit - 1).max())
    ok = ok_icf and cbl_err <= 1e-12 and limit_err <= 1e-4
    record_criterion(5, "weighting identities", ok,
                     f"(ICF N_eff err {icf_err:.1e}, Z={icf.Z:g}; CBL err {cbl_err:.1e}; limit err {limit_err:.1e})")
    assert ok


@pytest.mark.slow
@pytest.mark.skipif(not mnist_available(), reason=f"MNIST IDX files not found in {MNIST_DIR}")
def test_criterion_6_mnist_directional(record_criterion):
    train_src = load_idx(MNIST_DIR / "train-images-idx3-ubyte", MNIST_DIR / "train-labels-idx1-ubyte")
    test_src = load_idx(MNIST_DIR / "t10k-images-idx3-ubyte", MNIST_DIR / "t10k-labels-idx1-ubyte")
    cfg = TrainConfig(subset_counts={"3": 5, "4": 5, "7": 5, "9": 5000}, batch_size=128,
                      epochs=50, repetitions=5, seed=2024)
    start = time.perf_counter()
    records = repeat_experiment(cfg, train_src, test_src, methods=("WLF(ICF)+BN", "WLF(ICF)+WBN"))
    elapsed = time.perf_counter() - start
    s = summarize(records)
    bn, wbn = s["WLF(ICF)+BN"], s["WLF(ICF)+WBN"]
    gap = wbn["overall"] - bn["overall"]
    minority_up = bool(np.all(wbn["per_class"][:3] > bn["per_class"][:3]))
    ok = gap >= 10 and minority_up
    fmt = lambda v: "/".join(f"{a:.1f}" for a in v)
    record_criterion(6, "MNIST WBN beats BN", ok,
                     f"(overall {wbn['overall']:.1f} vs {bn['overall']:.1f}, gap {gap:.1f} pts; "
                     f"per class {fmt(wbn['per_class'])} vs {fmt(bn['per_class'])}; {elapsed / 60:.1f} min)")
    assert gap >= 10
    assert minority_up


def _identity_model(K):
    cfg = NetworkConfig((K, K), ("identity",), ("none",))
    return NetworkModel(cfg, [LayerParams(np.eye(K), np.zeros(K))])


def _synthetic_eval(correct, support, names):
    """Inputs are one-hot class codes; misclassified samples point at the last class."""
    K = len(support)
    labels = np.repeat(np.arange(K), support)
    pred = labels.copy()
    for k in range(K):
        idx = np.flatnonzero(labels == k)[correct[k]:]
        pred[idx] = K - 1 if k != K - 1 else 0
    ds = LabeledDataset(np.eye(K)[pred], labels, names)
    return evaluate(_identity_model(K), ds)


def test_criterion_7_macro_average(record_criterion):
    mnist = _synthetic_eval([138, 33, 62, 1009], [1010, 982, 1028, 1009], ("3", "4", "7", "9"))
    fashion = _synthetic_eval([66, 214, 1000], [1000, 1000, 1000], ("sandal", "sneaker", "ankle boot"))
    np.testing.assert_array_equal(np.round(mnist.per_class, 1), [13.7, 3.4, 6.0, 100.0])
    np.testing.assert_array_equal(np.round(fashion.per_class, 1), [6.6, 21.4, 100.0])
    ok = round(mnist.overall, 1) == 30.8 and round(fashion.overall, 1) == 42.7
    record_criterion(7, "macro-average convention", ok,
                     f"(MNIST row {mnist.overall:.2f} -> {mnist.overall:.1f}, pooled {mnist.pooled:.1f}; "
                     f"Fashion row {fashion.overall:.2f} -> {fashion.overall:.1f})")
    assert ok
