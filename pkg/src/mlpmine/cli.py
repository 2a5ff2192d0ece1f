"""Command-line interface.

Subcommands: ingest, train, grid, pca (fit/transform), prune, flops, eval.
Exit code is 0 on success and nonzero with a diagnostic on stderr on any
error.  All CSV output uses '.' decimals and LF line endings.
"""

import argparse
import json
import os
import sys

from . import harness
from .config import ExperimentConfig, apply_overrides, load_config, load_grid, set_field
from .dataio import (
    SplitSpec,
    load_bin,
    load_idx,
    normalize,
    pool_datasets,
    save_bin,
    stratified_split,
)
from .errors import ParameterError
from .layers import load_model
from .pca import cumulative_evr, load_pca, pca_fit, save_pca, transform
from .pruning import (
    RECONSTRUCTION_RMSE,
    apply_prune,
    export_curve_csv,
    export_report_csv,
    prune_by_mean_distance,
    prune_by_reconstruction_rmse,
)

CONFIG_FLAGS = [
    ("--architecture", "architecture", "comma list of widths, e.g. 784,128,128,128,47"),
    ("--activation", "activation", "hidden activation (relu)"),
    ("--dropout-keep", "dropout_keep", "per-hidden-layer keep probabilities, e.g. 0.75,0.75,1.0"),
    ("--penalty", "penalty", "weight penalty kind: none, L1 or L2"),
    ("--penalty-lambda", "penalty_lambda", "weight penalty strength"),
    ("--optimizer", "optimizer", "adam or sgd"),
    ("--learning-rate", "learning_rate", "optimizer learning rate"),
    ("--epochs", "epochs", "training epochs"),
    ("--batch-size", "batch_size", "mini-batch size"),
    ("--seed", "seed", "run seed"),
    ("--pca-components", "pca_components", "project onto this many components first"),
    ("--prune-method", "prune_method", "mean-distance or reconstruction-rmse"),
    ("--prune-keep-k", "prune_keep_k", "samples kept per class when pruning"),
    ("--prune-chain-after-mean", "prune_chain_after_mean", "run mean-distance pruning before RMSE pruning"),
    ("--early-stop-patience", "early_stop_patience", "stop after this many epochs without validation improvement"),
]


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a single config field (repeatable)",
    )
    for flag, _, help_text in CONFIG_FLAGS:
        parser.add_argument(flag, default=None, help=help_text)


def _resolve_config(args):
    config = ExperimentConfig()
    if args.config:
        config = load_config(args.config, base=config)
    config = apply_overrides(config, args.set)
    for flag, key, _ in CONFIG_FLAGS:
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            config = set_field(config, key, value)
    return config.validate()


def _epoch_logger(metrics):
    print(
        "epoch %3d  train loss %.4f acc %.4f | valid loss %.4f acc %.4f | %.2fs"
        % (
            metrics.epoch,
            metrics.train_loss,
            metrics.train_acc,
            metrics.valid_loss,
            metrics.valid_acc,
            metrics.epoch_seconds,
        ),
        flush=True,
    )


def cmd_ingest(args):
    pairs = [(args.images, args.labels)]
    if args.images2 or args.labels2:
        if not (args.images2 and args.labels2):
            raise ParameterError("--images2 and --labels2 must be given together")
        pairs.append((args.images2, args.labels2))

    datasets = [load_idx(img, lab) for img, lab in pairs]
    pooled = datasets[0] if len(datasets) == 1 else pool_datasets(datasets, name="idx-pool")
    print("loaded %d samples of dimension %d" % (pooled.n, pooled.d))
    pooled = normalize(pooled)
    spec = SplitSpec(args.train_count, args.valid_count, args.test_count, seed=args.seed)
    train, valid, test = stratified_split(pooled, spec)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, ds in (("train", train), ("valid", valid), ("test", test)):
        if ds.n == 0:
            print("skipping empty %s split" % name)
            continue
        path = os.path.join(args.out_dir, name + ".emds")
        save_bin(ds, path)
        print("wrote %s (%d samples)" % (path, ds.n))
    return 0


def cmd_train(args):
    config = _resolve_config(args)
    train_ds = load_bin(args.train, name="train")
    valid_ds = load_bin(args.valid, name="valid")
    test_ds = load_bin(args.test, name="test") if args.test else None
    os.makedirs(args.out_dir, exist_ok=True)
    result = harness.pipeline(
        config, train_ds, valid_ds, test_ds, out_dir=args.out_dir, log=_epoch_logger
    )
    summary = {
        "config": config.to_dict(),
        "diverged": result.diverged,
        "early_stopped": result.early_stopped,
        "epochs_run": len(result.history),
        "best_valid_acc": result.best_valid_acc,
        "best_valid_epoch": result.best_valid_epoch,
        "test_loss": result.test_loss,
        "test_acc": result.test_acc,
        "model_path": result.model_path,
    }
    with open(os.path.join(args.out_dir, "run.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    if result.diverged:
        print("run diverged after %d epochs (flagged, not an error)" % len(result.history))
    if result.best_valid_acc is not None:
        print(
            "best valid acc %.4f at epoch %d"
            % (result.best_valid_acc, result.best_valid_epoch)
        )
    if result.test_acc is not None:
        print("test loss %.4f acc %.4f" % (result.test_loss, result.test_acc))
    print("artifacts in %s" % args.out_dir)
    return 0


def cmd_grid(args):
    base = _resolve_config(args)
    grid = load_grid(args.grid)
    train_ds = load_bin(args.train, name="train")
    valid_ds = load_bin(args.valid, name="valid")
    entries = harness.grid_search(base, grid, train_ds, valid_ds, log=_run_logger)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "grid_results.csv")
    harness.emit_grid_csv(entries, out, list(grid.keys()))
    print("wrote %s (%d runs)" % (out, len(entries)))
    return 0


def _run_logger(params, result, error):
    label = " ".join("%s=%s" % kv for kv in params.items())
    if error is not None:
        print("run [%s] invalid: %s" % (label, error), flush=True)
    elif result.diverged:
        print("run [%s] diverged after %d epochs" % (label, len(result.history)), flush=True)
    else:
        print("run [%s] best valid acc %.4f" % (label, result.best_valid_acc), flush=True)


def cmd_pca(args):
    if args.pca_command == "fit":
        data = load_bin(args.data)
        model = pca_fit(data.features, args.components)
        save_pca(model, args.model)
        print("fitted %d components of %d dims" % (model.k, model.d))
        ratios = cumulative_evr(model)
        print("cumulative EVR at k=%d: %.4f" % (model.k, ratios[model.k - 1]))
        if args.evr_csv:
            harness.emit_evr_csv(model, args.evr_csv)
            print("wrote %s" % args.evr_csv)
    else:
        model = load_pca(args.model)
        data = load_bin(args.data)
        projected = transform(model, data.features)
        from .dataio import Dataset

        save_bin(Dataset(projected, data.labels, name="pca"), args.out)
        print("wrote %s (%d x %d)" % (args.out, projected.rows, projected.cols))
    return 0


def cmd_prune(args):
    data = load_bin(args.data, name="prune-input")
    if args.method == RECONSTRUCTION_RMSE:
        if args.chain_after_mean:
            pre = prune_by_mean_distance(
                data.features, data.labels, harness.CHAIN_MEAN_KEEP_K
            )
            data = apply_prune(data, pre, name=data.name + "-chain")
        if args.pca_model:
            model = load_pca(args.pca_model)
        else:
            model = pca_fit(data.features, args.components)
        report = prune_by_reconstruction_rmse(data.features, data.labels, model, args.keep_k)
    else:
        report = prune_by_mean_distance(data.features, data.labels, args.keep_k)
    pruned = apply_prune(data, report)
    os.makedirs(args.out_dir, exist_ok=True)
    export_report_csv(report, os.path.join(args.out_dir, "prune_report.csv"))
    export_curve_csv(report, os.path.join(args.out_dir, "prune_curve.csv"))
    save_bin(pruned, os.path.join(args.out_dir, "pruned.emds"))
    print(
        "kept %d of %d samples (%s, keep_k=%d); artifacts in %s"
        % (pruned.n, data.n, args.method, args.keep_k, args.out_dir)
    )
    return 0


def cmd_flops(args):
    if not args.architecture and not args.conv:
        raise ParameterError("give --architecture and/or --conv")
    if args.architecture:
        widths = [int(w) for w in args.architecture.split(",") if w.strip()]
        print("forward multiplications: %d" % harness.flop_count(widths))
    if args.conv:
        parts = [int(v) for v in args.conv.split(",")]
        if len(parts) not in (4, 5):
            raise ParameterError("--conv wants I,F,P,S or I,F,P,S,CHANNELS")
        i, f, p, s = parts[:4]
        out = harness.conv_out_dim(i, f, p, s)
        print("conv output dimension: %d" % out)
        if len(parts) == 5:
            print("conv multiplications: %d" % (out * out * f * f * parts[4]))
    return 0


def cmd_eval(args):
    model = load_model(args.model)
    data = load_bin(args.data)
    loss, acc = harness.evaluate(model, data)
    print("loss=%s accuracy=%s" % (repr(loss), repr(acc)))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mlpmine",
        description="From-scratch MLP training and data mining for Balanced EMNIST.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse IDX files, normalize, split, write EMDS")
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--labels", required=True, help="IDX label file")
    p.add_argument("--images2", help="second IDX image file to pool (e.g. the test file)")
    p.add_argument("--labels2", help="second IDX label file to pool")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train-count", type=int, default=100000)
    p.add_argument("--valid-count", type=int, default=15800)
    p.add_argument("--test-count", type=int, default=15800)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one configuration (with optional prune/PCA stages)")
    p.add_argument("--train", required=True, help="training EMDS file")
    p.add_argument("--valid", required=True, help="validation EMDS file")
    p.add_argument("--test", help="test EMDS file (evaluated once, after training)")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="cartesian grid search over config fields")
    p.add_argument("--grid", required=True, help="grid file: key=alt1|alt2 lines")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("pca", help="fit a PCA model or transform a dataset")
    pca_sub = p.add_subparsers(dest="pca_command", required=True)
    pf = pca_sub.add_parser("fit")
    pf.add_argument("--data", required=True, help="EMDS file to fit on")
    pf.add_argument("--components", type=int, required=True)
    pf.add_argument("--model", required=True, help="output .pcam path")
    pf.add_argument("--evr-csv", help="also write the cumulative-EVR curve here")
    pt = pca_sub.add_parser("transform")
    pt.add_argument("--model", required=True, help=".pcam model path")
    pt.add_argument("--data", required=True, help="EMDS file to project")
    pt.add_argument("--out", required=True, help="output EMDS path")
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("prune", help="score and prune a training set")
    p.add_argument("--data", required=True, help="EMDS file to prune")
    p.add_argument("--method", required=True, choices=["mean-distance", "reconstruction-rmse"])
    p.add_argument("--keep-k", type=int, required=True, help="samples kept per class")
    p.add_argument("--pca-model", help="existing .pcam model for RMSE scoring")
    p.add_argument("--components", type=int, default=78, help="fit this many components for RMSE scoring when no --pca-model is given")
    p.add_argument("--chain-after-mean", action="store_true", help="apply mean-distance keep-2000 pruning first")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("flops", help="forward multiplication counts")
    p.add_argument("--architecture", help="comma list of widths")
    p.add_argument("--conv", help="I,F,P,S or I,F,P,S,CHANNELS")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    p.add_argument("--model", required=True, help=".mlpm model file")
    p.add_argument("--data", required=True, help="EMDS file")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # diagnostics + nonzero exit, per the CLI contract
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
