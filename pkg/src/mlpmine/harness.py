"""Experiment harness: training loop, evaluation, grid search, the staged
prune/PCA pipeline, FLOP arithmetic and CSV emission.

Every epoch shuffles the training set with a generator seeded by
(config.seed XOR zero-based epoch index), trains over mini-batches, then
records metrics from full eval-mode passes over the train and validation
sets -- so dropout scaling is active in the recorded curves and train/valid
numbers are directly comparable.  epoch_seconds measures the training phase
of the epoch (shuffle + batches + updates), not the metric passes.

A run whose batch loss goes non-finite is terminated and flagged as
diverged rather than raising; diverged runs are legitimate reportable
outcomes of aggressive hyperparameters.
"""

import math
import os
import time
from array import array
from dataclasses import dataclass, field
from itertools import product

from .backend import kernels as K
from .config import set_field
from .dataio import Dataset, batches
from .errors import ParameterError, ShapeError
from .layers import build_network, save_model
from .linalg import DenseMatrix, RngState, gather_rows
from .losses import accumulate_penalty_grad, cross_entropy_softmax, penalty_value
from .optim import AdamConfig, AdamState, SgdConfig, adam_step, sgd_step
from .pca import cumulative_evr, pca_fit, save_pca, transform
from .pruning import (
    MEAN_DISTANCE,
    apply_prune,
    export_curve_csv,
    export_report_csv,
    prune_by_mean_distance,
    prune_by_reconstruction_rmse,
)

# keep_k of the fixed mean-distance stage used when RMSE pruning is chained
# after it (the 94k intermediate set)
CHAIN_MEAN_KEEP_K = 2000

EVAL_BATCH = 500


@dataclass
class EpochMetrics:
    epoch: int  # 1-based
    train_loss: float
    train_acc: float
    valid_loss: float
    valid_acc: float
    epoch_seconds: float


@dataclass
class RunResult:
    config: object
    history: list = field(default_factory=list)
    best_valid_acc: float = None
    best_valid_epoch: int = None
    test_loss: float = None
    test_acc: float = None
    model_path: str = None
    diverged: bool = False
    early_stopped: bool = False
    network: object = field(default=None, repr=False)


def _neg_log(p):
    if p > 0.0:
        return -math.log(p)
    if p == p:
        return math.inf
    return p


def evaluate(model, dataset):
    """Eval-mode (loss, accuracy) over a dataset; no penalty term, no side
    effects on the model's training caches."""
    if dataset.n == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    if dataset.d != model.architecture[0]:
        raise ShapeError(
            "dataset is %d-dimensional, network expects %d"
            % (dataset.d, model.architecture[0])
        )
    if max(dataset.labels) >= model.architecture[-1]:
        raise ShapeError(
            "label %d outside the network's %d outputs"
            % (max(dataset.labels), model.architecture[-1])
        )
    loss_sum = 0.0
    correct = 0
    for feats, labels in batches(dataset, EVAL_BATCH):
        logits = model.forward(feats, train=False)
        m, n = logits.rows, logits.cols
        probs = DenseMatrix(m, n)
        K.softmax_rows(logits.data, probs.data, m, n)
        preds = array("q", bytes(8 * m))
        K.argmax_rows(probs.data, preds, m, n)
        for i, lab in enumerate(labels):
            loss_sum += _neg_log(probs.data[i * n + lab])
            if preds[i] == lab:
                correct += 1
    return loss_sum / dataset.n, correct / dataset.n


def _make_optimizer(config, net):
    if config.optimizer == "adam":
        state = AdamState(net.param_arrays(), AdamConfig(config.learning_rate))
        return lambda params, grads: adam_step(params, grads, state)
    cfg = SgdConfig(config.learning_rate)
    return lambda params, grads: sgd_step(params, grads, cfg)


def train(config, train_ds, valid_ds, rng=None, log=None):
    """Train one configuration; returns a RunResult without test fields.

    ``log``, when given, is called with each EpochMetrics as it is recorded.
    """
    config.validate()
    if train_ds.d != config.architecture[0]:
        raise ShapeError(
            "training data is %d-dimensional, architecture expects %d"
            % (train_ds.d, config.architecture[0])
        )
    if rng is None:
        rng = RngState(config.seed)
    net = build_network(config.architecture, rng, config.dropout_keep)
    step = _make_optimizer(config, net)
    penalty = config.penalty()
    params = net.param_arrays()
    result = RunResult(config=config, network=net)

    best_es_loss = math.inf
    best_es_snapshot = None
    best_es_epoch = 0

    features = train_ds.features
    labels = train_ds.labels
    n = train_ds.n
    for epoch_idx in range(config.epochs):
        t0 = time.perf_counter()
        perm = list(range(n))
        RngState(config.seed ^ epoch_idx).shuffle(perm)
        for start in range(0, n, config.batch_size):
            idxs = perm[start : start + config.batch_size]
            x = gather_rows(features, idxs)
            y = [labels[i] for i in idxs]
            logits = net.forward(x, train=True, rng=rng)
            data_loss, grad_logits = cross_entropy_softmax(logits, y)
            batch_loss = data_loss + penalty_value(net.weight_matrices(), penalty)
            if not math.isfinite(batch_loss):
                result.diverged = True
                break
            grad_pairs = net.backward(grad_logits)
            grads = []
            for gw, gb in grad_pairs:
                grads.append(gw.data)
                grads.append(gb)
            accumulate_penalty_grad(grads[0::2], params[0::2], penalty)
            step(params, grads)
        epoch_seconds = time.perf_counter() - t0

        train_loss, train_acc = evaluate(net, train_ds)
        valid_loss, valid_acc = evaluate(net, valid_ds)
        metrics = EpochMetrics(
            epoch_idx + 1, train_loss, train_acc, valid_loss, valid_acc, epoch_seconds
        )
        result.history.append(metrics)
        if log is not None:
            log(metrics)
        if result.diverged:
            break

        if config.early_stop_patience is not None:
            if valid_loss < best_es_loss:
                best_es_loss = valid_loss
                best_es_snapshot = net.snapshot()
                best_es_epoch = epoch_idx + 1
            elif (
                best_es_snapshot is not None
                and (epoch_idx + 1) - best_es_epoch >= config.early_stop_patience
            ):
                net.restore(best_es_snapshot)
                result.early_stopped = True
                break

    finite = [m for m in result.history if not math.isnan(m.valid_acc)]
    if finite:
        best = max(finite, key=lambda m: m.valid_acc)
        result.best_valid_acc = best.valid_acc
        result.best_valid_epoch = best.epoch
    return result


def grid_search(base_config, grid, train_ds, valid_ds, log=None):
    """Cartesian-product search over textual field alternatives.

    Every run shares the datasets and the base seed.  Returns a list of
    entries {params, result, error}; entries are sorted by best validation
    accuracy (descending, invalid/diverged runs last, then by run order).
    """
    if not grid:
        raise ParameterError("empty grid")
    names = list(grid.keys())
    entries = []
    for run_idx, combo in enumerate(product(*(grid[name] for name in names))):
        params = dict(zip(names, combo))
        entry = {"order": run_idx, "params": params, "result": None, "error": None}
        try:
            cfg = base_config
            for key, raw in params.items():
                cfg = set_field(cfg, key, raw)
            cfg.validate()
        except ParameterError as exc:
            entry["error"] = str(exc)
        else:
            entry["result"] = train(cfg, train_ds, valid_ds)
        entries.append(entry)
        if log is not None:
            log(entry["params"], entry["result"], entry["error"])

    def sort_key(entry):
        res = entry["result"]
        if res is None or res.best_valid_acc is None:
            return (1, 0.0, entry["order"])
        return (0, -res.best_valid_acc, entry["order"])

    entries.sort(key=sort_key)
    return entries


def emit_grid_csv(entries, path, grid_names):
    with open(path, "w", newline="\n") as fh:
        header = ["rank"] + list(grid_names) + [
            "best_valid_acc",
            "best_valid_epoch",
            "final_train_acc",
            "final_valid_acc",
            "epochs_run",
            "status",
        ]
        fh.write(",".join(header) + "\n")
        for rank, entry in enumerate(entries, 1):
            res = entry["result"]
            cells = [str(rank)]
            cells += [entry["params"].get(name, "") for name in grid_names]
            if res is None:
                cells += ["", "", "", "", "0", "invalid"]
            else:
                last = res.history[-1] if res.history else None
                cells += [
                    _fmt_float(res.best_valid_acc) if res.best_valid_acc is not None else "",
                    str(res.best_valid_epoch) if res.best_valid_epoch is not None else "",
                    _fmt_float(last.train_acc) if last else "",
                    _fmt_float(last.valid_acc) if last else "",
                    str(len(res.history)),
                    "diverged" if res.diverged else "ok",
                ]
            fh.write(",".join(cells) + "\n")


def pipeline(config, train_ds, valid_ds, test_ds=None, out_dir=None, rng=None, log=None):
    """Staged run: optional pruning, optional PCA, training, one test pass.

    Pruning scores raw training features; the PCA stage then fits on the
    (possibly pruned) training split only and projects every split with
    that one model.  Stage artifacts and the trained model are written to
    out_dir when given.
    """
    config.validate()

    if config.prune_method is not None:
        if config.prune_method == MEAN_DISTANCE:
            report = prune_by_mean_distance(
                train_ds.features, train_ds.labels, config.prune_keep_k
            )
        else:
            if config.prune_chain_after_mean:
                pre = prune_by_mean_distance(
                    train_ds.features, train_ds.labels, CHAIN_MEAN_KEEP_K
                )
                train_ds = apply_prune(train_ds, pre, name=train_ds.name + "-chain")
            scorer = pca_fit(train_ds.features, config.pca_components)
            report = prune_by_reconstruction_rmse(
                train_ds.features, train_ds.labels, scorer, config.prune_keep_k
            )
        train_ds = apply_prune(train_ds, report)
        if out_dir is not None:
            export_report_csv(report, os.path.join(out_dir, "prune_report.csv"))
            export_curve_csv(report, os.path.join(out_dir, "prune_curve.csv"))

    if config.pca_components is not None:
        model = pca_fit(train_ds.features, config.pca_components)
        if out_dir is not None:
            save_pca(model, os.path.join(out_dir, "pca_model.pcam"))
            emit_evr_csv(model, os.path.join(out_dir, "pca_evr.csv"))
        train_ds = _project(train_ds, model)
        valid_ds = _project(valid_ds, model)
        if test_ds is not None:
            test_ds = _project(test_ds, model)

    result = train(config, train_ds, valid_ds, rng=rng, log=log)

    if test_ds is not None and not result.diverged:
        result.test_loss, result.test_acc = evaluate(result.network, test_ds)

    if out_dir is not None:
        result.model_path = os.path.join(out_dir, "model.mlpm")
        save_model(result.network, result.model_path)
        emit_curves(result, os.path.join(out_dir, "curves.csv"))
    return result


def _project(dataset, model):
    return Dataset(transform(model, dataset.features), dataset.labels, dataset.name + "-pca")


def flop_count(architecture):
    """Forward-pass multiplication count of a dense stack: sum of consecutive
    width products."""
    if len(architecture) < 2:
        raise ParameterError("architecture needs at least 2 widths")
    return sum(a * b for a, b in zip(architecture, architecture[1:]))


def conv_out_dim(i, f, p, s):
    """Output dimension of a convolution: floor((I - F + 2P) / S) + 1."""
    if s < 1:
        raise ParameterError("stride must be >= 1, got %d" % s)
    if i - f + 2 * p < 0:
        raise ParameterError("kernel %d does not fit input %d with padding %d" % (f, i, p))
    return (i - f + 2 * p) // s + 1


def _fmt_float(v):
    if v != v or v in (math.inf, -math.inf):
        return "nan"
    return repr(float(v))


def emit_curves(run, path, include_timing=True):
    """Write per-epoch metrics as CSV (one header row + one row per epoch).

    Non-finite values are written as the literal "nan".  With
    include_timing=False the wall-clock column is omitted, which makes the
    file byte-reproducible for a fixed config and seed.
    """
    cols = ["epoch", "train_loss", "train_acc", "valid_loss", "valid_acc"]
    if include_timing:
        cols.append("epoch_seconds")
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for m in run.history:
            cells = [
                str(m.epoch),
                _fmt_float(m.train_loss),
                _fmt_float(m.train_acc),
                _fmt_float(m.valid_loss),
                _fmt_float(m.valid_acc),
            ]
            if include_timing:
                cells.append(_fmt_float(m.epoch_seconds))
            fh.write(",".join(cells) + "\n")


def emit_evr_csv(model, path):
    """Cumulative explained-variance-ratio curve of a fitted PCA model."""
    ratios = cumulative_evr(model)
    with open(path, "w", newline="\n") as fh:
        fh.write("components,cumulative_evr\n")
        for i, r in enumerate(ratios, 1):
            fh.write("%d,%s\n" % (i, _fmt_float(r)))


def overfit_report(history):
    """Overtraining diagnostics from an epoch-metrics history.

    Returns a dict with the 1-based epoch of minimum validation loss, the
    final generalization gap (valid - train loss) and the rebound ratio
    (final valid loss over minimum valid loss).
    """
    if len(history) < 2:
        raise ParameterError("overfit report needs at least 2 epochs")
    min_epoch = min(range(len(history)), key=lambda i: (history[i].valid_loss, i))
    final = history[-1]
    min_valid = history[min_epoch].valid_loss
    return {
        "min_valid_loss_epoch": history[min_epoch].epoch,
        "final_generalization_gap": final.valid_loss - final.train_loss,
        "valid_loss_rebound": final.valid_loss / min_valid if min_valid > 0 else math.inf,
    }
