"""Shared test helpers: deterministic random data and finite differences."""

from mlpmine.dataio import Dataset
from mlpmine.linalg import DenseMatrix, RngState, sample_uniform


def rand_matrix(rng, rows, cols, lo=-1.0, hi=1.0):
    return sample_uniform(rng, rows, cols, lo, hi)


def central_diff(f, buf, index, eps=1e-5):
    """Central finite difference of scalar f() w.r.t. buf[index]."""
    orig = buf[index]
    buf[index] = orig + eps
    hi = f()
    buf[index] = orig - eps
    lo = f()
    buf[index] = orig
    return (hi - lo) / (2.0 * eps)


def assert_grad_close(analytic, numeric, rel=1e-6, atol=1e-9):
    err = abs(analytic - numeric)
    scale = max(abs(analytic), abs(numeric))
    assert err <= rel * scale + atol, (
        "gradient mismatch: analytic %r vs numeric %r (err %.3g)" % (analytic, numeric, err)
    )


def make_blobs(n_per_class, centers, spread=0.1, seed=7, name="blobs"):
    """Synthetic dataset: uniform noise around fixed class centers.

    centers is a list of coordinate lists; class c gets n_per_class samples
    at centers[c] + U(-spread, spread) per coordinate.
    """
    rng = RngState(seed)
    d = len(centers[0])
    rows = []
    labels = []
    for c, center in enumerate(centers):
        noise = sample_uniform(rng, n_per_class, d, -spread, spread)
        for i in range(n_per_class):
            rows.append([center[j] + noise.get(i, j) for j in range(d)])
            labels.append(c)
    perm = list(range(len(rows)))
    rng.shuffle(perm)
    feats = DenseMatrix.from_rows([rows[i] for i in perm])
    return Dataset(feats, [labels[i] for i in perm], name=name)
