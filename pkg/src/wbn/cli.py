"""Command-line interface: ``wbn <subcommand> [options]``.

Subcommands
-----------
train         train one or more methods, write checkpoints and a CSV report
eval          evaluate a checkpoint on the test split of a config
gradcheck     finite-difference check of the analytic gradients
statcheck     Monte-Carlo unbiasedness check of the weighted batch statistics
weights-info  class counts, weights, effective sizes and Z for a config
report        run every configured method and write the comparison table

Results go to standard output or files; diagnostics go to standard error.
The exit code is 0 on success and 1 on a failed check or an error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .backprop import finite_diff_check
from .data import SubsetSpec, build_imbalanced_subset, select_classes
from .netcore import load_model, save_model
from .verify import gradcheck_problem, unbiasedness_mc
from .weighting import WeightScheme, compute_weights, default_cbl_beta, effective_sizes

log = logging.getLogger("wbn")


def _load_config(args):
    cfg = harness.TrainConfig.from_json(args.config)
    overrides = {
        "epochs": getattr(args, "epochs", None),
        "repetitions": getattr(args, "repetitions", None),
        "seed": getattr(args, "seed", None),
        "workers": getattr(args, "threads", None),
    }
    method = getattr(args, "method", None)
    if method:
        overrides["method"], overrides["methods"] = method, ()
    cfg = harness.with_overrides(cfg, **overrides)
    cfg.validate()
    return cfg


def _slug(method):
    return method.replace("(", "_").replace(")", "").replace("+", "_").lower()


def _echo_config(cfg, out):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "effective_config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)


def cmd_train(args):
    cfg = _load_config(args)
    out = Path(args.out)
    _echo_config(cfg, out)
    train_src, test_src = harness.load_datasets(cfg)
    seeds = harness._derive_seeds(cfg)
    records = []
    for method in cfg.method_list():
        for rep, seed in enumerate(seeds):
            record, result = harness.run_once(cfg, train_src, test_src, method, rep, seed)
            records.append(record)
            save_model(result.model, out / f"{_slug(method)}_rep{rep}.wbnm")
            log.info("%s rep %d: overall %.1f%%", method, rep, record.metrics.overall)
    path = harness.emit_report(records, out / "report.csv")
    print(path)
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    model = load_model(args.checkpoint)
    _, test_src = harness.load_datasets(cfg)
    spec = SubsetSpec.from_names(cfg.subset_counts, test_src.class_names)
    metrics = harness.evaluate(model, select_classes(test_src, sorted(spec.counts)))
    print("class,accuracy")
    for name, acc in zip(metrics.class_names, metrics.per_class):
        print(f"{name},{acc:.4f}")
    print(f"overall,{metrics.overall:.4f}")
    print(f"pooled,{metrics.pooled:.4f}")
    return 0


def cmd_gradcheck(args):
    modes = tuple(args.modes.split(","))
    model, x, t, w = gradcheck_problem(args.seed, modes, dtype=args.dtype)
    report = finite_diff_check(model, x, t, w, weighted=not args.unweighted, h=args.h)
    sys.stdout.write(report.to_csv())
    tol = args.tol if args.tol is not None else (1e-6 if args.dtype == "float64" else 1e-2)
    ok = report.passed(tol)
    log.info("max relative error %.3e (tol %.1e): %s", report.max_error, tol, "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_statcheck(args):
    w = [float(v) for v in args.weights.split(",")]
    report = unbiasedness_mc(
        args.mu, args.var, w, args.trials, np.random.default_rng(args.seed), legacy=args.legacy
    )
    sys.stdout.write(report.to_csv())
    return 0 if report.passed else 1


def cmd_weights_info(args):
    cfg = _load_config(args)
    train_src, _ = harness.load_datasets(cfg)
    spec = SubsetSpec.from_names(cfg.subset_counts, train_src.class_names, cfg.subset_seed)
    subset = build_imbalanced_subset(train_src, spec)
    schemes = [args.scheme] if args.scheme else ["uniform", "icf", "cbl"]
    print("scheme,class,count,weight,effective_size,Z")
    for kind in schemes:
        beta = None
        if kind == "cbl":
            beta = cfg.beta if cfg.beta is not None else default_cbl_beta(subset.N)
        sw = compute_weights(WeightScheme(kind, beta), subset.labels, subset.K)
        stats = effective_sizes(sw, subset.labels, subset.K)
        for k, name in enumerate(subset.class_names):
            wk = sw.w[subset.labels == k][0]
            print(f"{kind},{name},{int(stats.counts[k])},{float(wk)!r},{float(stats.effective[k])!r},{float(sw.Z)!r}")
    return 0


def cmd_report(args):
    cfg = _load_config(args)
    if not cfg.methods and not args.method:
        cfg = harness.with_overrides(cfg, methods=harness.STANDARD_METHODS)
    out = Path(args.out)
    _echo_config(cfg, out)
    records = harness.repeat_experiment(cfg)
    path = harness.emit_report(records, out / "report.csv")
    for method, s in harness.summarize(records).items():
        cells = " ".join(f"{a:5.1f}" for a in s["per_class"])
        log.info("%-18s %s | overall %5.1f", method, cells, s["overall"])
    print(path)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="wbn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p, out=True):
        p.add_argument("--config", required=True)
        p.add_argument("--method")
        p.add_argument("--epochs", type=int)
        p.add_argument("--repetitions", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker processes for repetitions")
        if out:
            p.add_argument("--out", default="runs")

    p = sub.add_parser("train", help="train and save checkpoints")
    experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    experiment_flags(p, out=False)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modes", default="bn,wbn,none", help="norm mode per layer")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--unweighted", action="store_true", help="use the plain mean loss")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("statcheck", help="unbiasedness of weighted mean/variance")
    p.add_argument("--trials", type=int, default=1_000_000)
    p.add_argument("--mu", type=float, default=3.0)
    p.add_argument("--var", type=float, default=4.0)
    p.add_argument("--weights", default="1,2,3,4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--legacy", action="store_true", help="use the Z_r - 1 normalizer")
    p.set_defaults(func=cmd_statcheck)

    p = sub.add_parser("weights-info", help="print class weights and effective sizes")
    p.add_argument("--config", required=True)
    p.add_argument("--scheme", choices=("uniform", "icf", "cbl"))
    p.set_defaults(func=cmd_weights_info)

    p = sub.add_parser("report", help="run all methods and write the comparison CSV")
    experiment_flags(p)
    p.set_defaults(func=cmd_report)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (OSError, ValueError, FloatingPointError, KeyError) as exc:
        log.error("%s: %s", args.command, exc)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
