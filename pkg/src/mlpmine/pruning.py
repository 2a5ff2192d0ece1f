"""Training-set pruning: per-class mean-distance and PCA-reconstruction RMSE.

Both methods score every sample, then keep the keep_k lowest-scoring samples
of each class (all of them when a class is smaller than keep_k).  Ties break
toward the lowest original index and kept samples keep their original
relative order, so pruning is deterministic and row-order independent.
"""

import math
from array import array
from dataclasses import dataclass

from .backend import kernels as K
from .dataio import N_CLASSES
from .errors import DataError, ParameterError, ShapeError
from .linalg import DenseMatrix, gather_rows
from .pca import inverse_transform, transform

MEAN_DISTANCE = "mean-distance"
RECONSTRUCTION_RMSE = "reconstruction-rmse"


@dataclass
class ClassMeans:
    means: DenseMatrix  # n_classes x d
    counts: list


@dataclass
class PruneReport:
    method: str
    scores: array  # one score per original sample
    labels: list
    kept_by_class: list  # per class, kept original indices in ascending order
    kept_counts: list

    @property
    def kept_indices(self):
        """All kept indices, in original dataset order."""
        merged = []
        for idxs in self.kept_by_class:
            merged.extend(idxs)
        merged.sort()
        return merged


def _indices_by_class(labels, n_classes):
    by_class = [[] for _ in range(n_classes)]
    for i, lab in enumerate(labels):
        if not 0 <= lab < n_classes:
            raise DataError("label %d outside 0..%d" % (lab, n_classes - 1))
        by_class[lab].append(i)
    return by_class


def class_means(x, labels, n_classes=N_CLASSES):
    """Exact per-class arithmetic means; every class must be represented."""
    if x.rows != len(labels):
        raise ShapeError("%d rows vs %d labels" % (x.rows, len(labels)))
    by_class = _indices_by_class(labels, n_classes)
    means = DenseMatrix(n_classes, x.cols)
    counts = []
    for c, idxs in enumerate(by_class):
        if not idxs:
            raise DataError("class %d has no samples" % c)
        rows = gather_rows(x, idxs)
        sums = array("d", bytes(8 * x.cols))
        K.col_sums(rows.data, sums, rows.rows, rows.cols)
        K.scale_elem(sums, 1.0 / len(idxs), sums, len(sums))
        means.data[c * x.cols : (c + 1) * x.cols] = sums
        counts.append(len(idxs))
    return ClassMeans(means=means, counts=counts)


def mean_distances(x, labels, means):
    """Euclidean distance from each sample to its own class mean."""
    if means.means.cols != x.cols:
        raise ShapeError(
            "means have %d columns, data has %d" % (means.means.cols, x.cols)
        )
    d = x.cols
    out = array("d", bytes(8 * x.rows))
    for c, idxs in enumerate(_indices_by_class(labels, means.means.rows)):
        if not idxs:
            continue
        rows = gather_rows(x, idxs)
        mu = means.means.data[c * d : (c + 1) * d]
        sq = array("d", bytes(8 * len(idxs)))
        K.row_sq_dists(rows.data, mu, sq, rows.rows, d)
        for pos, i in enumerate(idxs):
            out[i] = math.sqrt(sq[pos])
    return out


def reconstruction_rmse(x, model):
    """Per-sample RMSE between each row and its PCA reconstruction."""
    recon = inverse_transform(model, transform(model, x))
    sq = array("d", bytes(8 * x.rows))
    K.rowwise_sq_err(x.data, recon.data, sq, x.rows, x.cols)
    inv_d = 1.0 / x.cols
    for i in range(x.rows):
        sq[i] = math.sqrt(sq[i] * inv_d)
    return sq


def _keep_lowest(scores, labels, keep_k, method, n_classes):
    if keep_k < 1:
        raise ParameterError("keep_k must be >= 1, got %d" % keep_k)
    kept_by_class = []
    for idxs in _indices_by_class(labels, n_classes):
        ranked = sorted(idxs, key=lambda i: (scores[i], i))
        kept = sorted(ranked[:keep_k])
        kept_by_class.append(kept)
    return PruneReport(
        method=method,
        scores=array("d", scores),
        labels=list(labels),
        kept_by_class=kept_by_class,
        kept_counts=[len(k) for k in kept_by_class],
    )


def prune_by_mean_distance(x, labels, keep_k, n_classes=N_CLASSES):
    """Keep the keep_k samples of each class closest to the class mean."""
    means = class_means(x, labels, n_classes)
    scores = mean_distances(x, labels, means)
    return _keep_lowest(scores, labels, keep_k, MEAN_DISTANCE, n_classes)


def prune_by_reconstruction_rmse(x, labels, model, keep_k, n_classes=N_CLASSES):
    """Keep the keep_k samples of each class with smallest reconstruction RMSE."""
    scores = reconstruction_rmse(x, model)
    return _keep_lowest(scores, labels, keep_k, RECONSTRUCTION_RMSE, n_classes)


def apply_prune(dataset, report, name=None):
    """Dataset restricted to the kept samples, original order preserved."""
    kept = report.kept_indices
    return dataset.take(
        kept, name=name if name is not None else dataset.name + "-pruned"
    )


def sorted_score_curve(report):
    """Per-class ascending score sequences plus their cross-class average.

    Returns (per_class, average); the average is taken rank-by-rank and
    truncated to the smallest class size.
    """
    per_class = []
    for idxs in _indices_by_class(report.labels, len(report.kept_by_class)):
        per_class.append(sorted(report.scores[i] for i in idxs))
    nonempty = [c for c in per_class if c]
    if not nonempty:
        raise DataError("report holds no samples")
    depth = min(len(c) for c in nonempty)
    average = [
        math.fsum(c[r] for c in nonempty) / len(nonempty) for r in range(depth)
    ]
    return per_class, average


def export_report_csv(report, path):
    """CSV with one row per sample: class,rank,sample_index,score,kept."""
    kept_sets = [set(k) for k in report.kept_by_class]
    with open(path, "w", newline="\n") as fh:
        fh.write("class,rank,sample_index,score,kept\n")
        for c, idxs in enumerate(_indices_by_class(report.labels, len(report.kept_by_class))):
            ranked = sorted(idxs, key=lambda i: (report.scores[i], i))
            for rank, i in enumerate(ranked):
                fh.write(
                    "%d,%d,%d,%s,%d\n"
                    % (c, rank, i, repr(report.scores[i]), 1 if i in kept_sets[c] else 0)
                )


def export_curve_csv(report, path):
    """CSV of the sorted per-class score curves and their average."""
    per_class, average = sorted_score_curve(report)
    depth = max(len(c) for c in per_class)
    with open(path, "w", newline="\n") as fh:
        header = ["rank"] + ["class_%d" % c for c in range(len(per_class))] + ["average"]
        fh.write(",".join(header) + "\n")
        for r in range(depth):
            cells = [str(r)]
            for c in per_class:
                cells.append(repr(c[r]) if r < len(c) else "")
            cells.append(repr(average[r]) if r < len(average) else "")
            fh.write(",".join(cells) + "\n")
