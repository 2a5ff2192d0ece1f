import math

import pytest

from mlpmine.dataio import Dataset
from mlpmine.errors import DataError, ParameterError
from mlpmine.linalg import DenseMatrix, RngState
from mlpmine.pca import pca_fit
from mlpmine.pruning import (
    apply_prune,
    class_means,
    export_curve_csv,
    export_report_csv,
    mean_distances,
    prune_by_mean_distance,
    prune_by_reconstruction_rmse,
    reconstruction_rmse,
    sorted_score_curve,
)

from conftest import rand_matrix


def test_class_means_single_sample_per_class():
    x = DenseMatrix.from_rows([[1.0, 2.0], [5.0, 6.0]])
    cm = class_means(x, [0, 1], n_classes=2)
    assert list(cm.means.row(0)) == [1.0, 2.0]
    assert list(cm.means.row(1)) == [5.0, 6.0]
    assert cm.counts == [1, 1]


def test_class_means_two_sample_average():
    x = DenseMatrix.from_rows([[0.0, 0.0], [2.0, 2.0]])
    cm = class_means(x, [0, 0], n_classes=1)
    assert list(cm.means.row(0)) == [1.0, 1.0]


def test_class_means_empty_class_names_label():
    x = DenseMatrix.from_rows([[1.0], [2.0]])
    with pytest.raises(DataError, match="class 1"):
        class_means(x, [0, 0], n_classes=2)


def test_class_means_match_naive_accumulation():
    rng = RngState(3)
    n, d, classes = 40, 5, 4
    x = rand_matrix(rng, n, d)
    labels = [rng.randbelow(classes) for _ in range(n)]
    while len(set(labels)) < classes:  # ensure all classes present
        labels[rng.randbelow(n)] = rng.randbelow(classes)
    cm = class_means(x, labels, n_classes=classes)
    for c in range(classes):
        idxs = [i for i, l in enumerate(labels) if l == c]
        for j in range(d):
            want = math.fsum(x.get(i, j) for i in idxs) / len(idxs)
            assert abs(cm.means.get(c, j) - want) < 1e-10


def test_mean_distances():
    x = DenseMatrix.from_rows([[3.0, 4.0], [0.0, 0.0]])
    cm = class_means(x, [0, 0], n_classes=1)
    # force the 3-4-5 triangle: mean at origin
    cm.means.set(0, 0, 0.0)
    cm.means.set(0, 1, 0.0)
    dists = mean_distances(x, [0, 0], cm)
    assert abs(dists[0] - 5.0) < 1e-12
    assert dists[1] == 0.0


def test_sample_equal_to_mean_has_zero_distance():
    x = DenseMatrix.from_rows([[2.0, 2.0], [2.0, 2.0]])
    cm = class_means(x, [0, 0], n_classes=1)
    dists = mean_distances(x, [0, 0], cm)
    assert dists[0] == 0.0 and dists[1] == 0.0


def test_distance_ordering_matches_bruteforce():
    rng = RngState(5)
    n, d = 100, 6
    x = rand_matrix(rng, n, d)
    labels = [i % 3 for i in range(n)]
    cm = class_means(x, labels, n_classes=3)
    dists = mean_distances(x, labels, cm)
    for c in range(3):
        idxs = [i for i in range(n) if labels[i] == c]
        brute = []
        for i in idxs:
            s = math.fsum((x.get(i, j) - cm.means.get(c, j)) ** 2 for j in range(d))
            brute.append((math.sqrt(s), i))
        ours = sorted(idxs, key=lambda i: (dists[i], i))
        assert ours == [i for _, i in sorted(brute)]


def test_prune_keep_all_is_identity():
    rng = RngState(6)
    x = rand_matrix(rng, 20, 3)
    labels = [i % 2 for i in range(20)]
    report = prune_by_mean_distance(x, labels, keep_k=50, n_classes=2)
    assert report.kept_indices == list(range(20))
    assert report.kept_counts == [10, 10]


def test_prune_drops_farthest():
    x = DenseMatrix.from_rows([[0.0], [1.0], [5.0]])
    # mean is 2.0 -> distances 2, 1, 3; farthest is index 2
    report = prune_by_mean_distance(x, [0, 0, 0], keep_k=2, n_classes=1)
    assert report.kept_by_class[0] == [0, 1]


def test_prune_tie_breaks_to_lowest_index_and_keeps_order():
    x = DenseMatrix.from_rows([[1.0], [3.0], [1.0], [3.0], [2.0]])
    # mean 2.0: distances 1,1,1,1,0 -> keep 3: index 4 (0), then ties 0,1,2,3
    report = prune_by_mean_distance(x, [0] * 5, keep_k=3, n_classes=1)
    assert report.kept_by_class[0] == [0, 1, 4]  # ascending original order


def test_prune_scores_of_kept_not_above_dropped():
    rng = RngState(7)
    x = rand_matrix(rng, 60, 4)
    labels = [i % 3 for i in range(60)]
    report = prune_by_mean_distance(x, labels, keep_k=12, n_classes=3)
    for c, kept in enumerate(report.kept_by_class):
        dropped = [i for i in range(60) if labels[i] == c and i not in set(kept)]
        worst_kept = max(report.scores[i] for i in kept)
        for i in dropped:
            assert report.scores[i] >= worst_kept - 1e-15


def test_prune_row_order_independent():
    rng = RngState(8)
    x = rand_matrix(rng, 50, 4)
    labels = [i % 2 for i in range(50)]
    ds = Dataset(x, labels, name="toy")
    report = prune_by_mean_distance(ds.features, ds.labels, keep_k=15, n_classes=2)
    kept_rows = {tuple(ds.features.row(i)) for i in report.kept_indices}

    perm = list(range(50))
    RngState(99).shuffle(perm)
    shuffled = ds.take(perm)
    report2 = prune_by_mean_distance(shuffled.features, shuffled.labels, 15, n_classes=2)
    kept_rows2 = {tuple(shuffled.features.row(i)) for i in report2.kept_indices}
    assert kept_rows == kept_rows2


def test_prune_keeps_subset_with_original_features():
    rng = RngState(9)
    x = rand_matrix(rng, 30, 3)
    labels = [i % 2 for i in range(30)]
    ds = Dataset(x, labels, name="t")
    report = prune_by_mean_distance(x, labels, keep_k=8, n_classes=2)
    pruned = apply_prune(ds, report)
    assert pruned.n == 16
    for new_i, orig_i in enumerate(report.kept_indices):
        assert list(pruned.features.row(new_i)) == list(x.row(orig_i))
        assert pruned.labels[new_i] == labels[orig_i]


def test_prune_balanced_at_min_class_count():
    rng = RngState(10)
    x = rand_matrix(rng, 30, 3)
    labels = [0] * 18 + [1] * 12
    report = prune_by_mean_distance(x, labels, keep_k=12, n_classes=2)
    assert report.kept_counts == [12, 12]


def test_reconstruction_rmse_full_rank_is_zero():
    rng = RngState(11)
    x = rand_matrix(rng, 25, 5)
    model = pca_fit(x, 5)
    rmse = reconstruction_rmse(x, model)
    assert all(v < 1e-8 for v in rmse)


def test_reconstruction_rmse_zero_for_in_span_sample():
    rng = RngState(12)
    base = rand_matrix(rng, 40, 4)
    model = pca_fit(base, 2)
    # a point on the component plane through the mean
    z = DenseMatrix.from_rows([[1.7, -0.6]])
    from mlpmine.pca import inverse_transform

    on_plane = inverse_transform(model, z)
    rmse = reconstruction_rmse(on_plane, model)
    assert rmse[0] < 1e-10


def test_reconstruction_rmse_matches_formula_oracle():
    rng = RngState(13)
    x = rand_matrix(rng, 20, 6)
    model = pca_fit(x, 3)
    from mlpmine.pca import inverse_transform, transform

    recon = inverse_transform(model, transform(model, x))
    rmse = reconstruction_rmse(x, model)
    for i in range(20):
        want = math.sqrt(
            math.fsum((x.get(i, j) - recon.get(i, j)) ** 2 for j in range(6)) / 6
        )
        assert abs(rmse[i] - want) < 1e-12


def test_rmse_prune_drops_out_of_span_sample():
    # class where two samples lie in the retained span and one is orthogonal
    base_rows = [[t, t, 0.0] for t in (-3, -2, -1, 1, 2, 3)]
    x = DenseMatrix.from_rows(base_rows + [[0.0, 0.0, 4.0]])
    labels = [0] * 7
    model = pca_fit(DenseMatrix.from_rows(base_rows), 1)
    report = prune_by_reconstruction_rmse(x, labels, model, keep_k=6, n_classes=1)
    assert 6 not in report.kept_by_class[0]  # the orthogonal sample went first


def test_rmse_prune_keep_all():
    rng = RngState(14)
    x = rand_matrix(rng, 12, 4)
    model = pca_fit(x, 2)
    report = prune_by_reconstruction_rmse(x, [0] * 12, model, keep_k=99, n_classes=1)
    assert report.kept_indices == list(range(12))


def test_keep_k_validation():
    x = DenseMatrix.from_rows([[1.0]])
    with pytest.raises(ParameterError):
        prune_by_mean_distance(x, [0], keep_k=0, n_classes=1)


def test_sorted_score_curve():
    x = DenseMatrix.from_rows([[4.0], [0.0], [2.0]])
    report = prune_by_mean_distance(x, [0, 0, 0], keep_k=3, n_classes=1)
    per_class, average = sorted_score_curve(report)
    assert per_class[0] == sorted(per_class[0])
    assert average == per_class[0]

    flat = DenseMatrix.from_rows([[1.0], [1.0], [1.0]])
    rep2 = prune_by_mean_distance(flat, [0, 0, 0], keep_k=3, n_classes=1)
    _, avg2 = sorted_score_curve(rep2)
    assert avg2 == [0.0, 0.0, 0.0]  # constant data: zero distance everywhere


def test_sorted_score_curve_two_class_hand_check():
    x = DenseMatrix.from_rows([[0.0], [2.0], [10.0], [0.0], [4.0]])
    labels = [0, 0, 0, 1, 1]
    report = prune_by_mean_distance(x, labels, keep_k=5, n_classes=2)
    per_class, average = sorted_score_curve(report)
    assert len(per_class) == 2
    assert len(average) == 2  # truncated to the smaller class
    for c in per_class:
        assert c == sorted(c)
    assert average[0] == (per_class[0][0] + per_class[1][0]) / 2.0


def test_csv_exports(tmp_path):
    rng = RngState(15)
    x = rand_matrix(rng, 10, 3)
    labels = [i % 2 for i in range(10)]
    report = prune_by_mean_distance(x, labels, keep_k=3, n_classes=2)

    rp = tmp_path / "report.csv"
    export_report_csv(report, rp)
    lines = rp.read_text().splitlines()
    assert lines[0] == "class,rank,sample_index,score,kept"
    assert len(lines) == 11
    kept_flags = [int(l.split(",")[4]) for l in lines[1:]]
    assert sum(kept_flags) == 6

    cp = tmp_path / "curve.csv"
    export_curve_csv(report, cp)
    lines = cp.read_text().splitlines()
    assert lines[0] == "rank,class_0,class_1,average"
    assert len(lines) == 6  # 5 ranks max per class
