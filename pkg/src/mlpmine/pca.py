"""Principal component analysis via covariance eigendecomposition.

The fit accumulates the d x d sample covariance in one pass over the data
(chunked X^T X on centered rows, normalized by n - 1) and diagonalizes it
with a cyclic Jacobi sweep, so cost is O(n d^2) + O(d^3) regardless of n.
Component signs follow a fixed convention: the largest-magnitude entry of
each component is positive, which makes fits reproducible.
"""

import math
import struct
import sys
from array import array
from dataclasses import dataclass, field

from .backend import kernels as K
from .errors import FormatError, ParameterError, ShapeError
from .linalg import DenseMatrix

PCA_MAGIC = b"PCAM"
PCA_VERSION = 1

_CHUNK_ROWS = 1024


@dataclass
class PcaModel:
    """Mean vector, orthonormal component rows and their variances.

    ``spectrum`` holds every eigenvalue (descending) when the model was fit
    in-process; models loaded from disk only carry the k kept variances.
    """

    mean: array
    components: DenseMatrix  # k x d, rows orthonormal
    explained_variance: array  # length k, non-increasing
    total_variance: float
    spectrum: array = field(default=None, repr=False)

    @property
    def d(self):
        return self.components.cols

    @property
    def k(self):
        return self.components.rows


def _column_means(x):
    sums = array("d", bytes(8 * x.cols))
    K.col_sums(x.data, sums, x.rows, x.cols)
    inv = 1.0 / x.rows
    K.scale_elem(sums, inv, sums, len(sums))
    return sums


def _neg(vec):
    out = array("d", vec)
    K.scale_elem(out, -1.0, out, len(out))
    return out


def _center(x, mean):
    centered = x.copy()
    K.add_bias_rows(centered.data, _neg(mean), centered.rows, centered.cols)
    return centered


def pca_fit(x, k):
    """Fit the top-k principal components of the rows of x."""
    n, d = x.rows, x.cols
    if n < 2:
        raise ParameterError("PCA needs at least 2 samples, got %d" % n)
    if not 1 <= k <= d:
        raise ParameterError("component count %d outside 1..%d" % (k, d))

    mean = _column_means(x)
    neg_mean = _neg(mean)
    cov = DenseMatrix(d, d)
    for start in range(0, n, _CHUNK_ROWS):
        stop = min(start + _CHUNK_ROWS, n)
        chunk = DenseMatrix(stop - start, d, x.data[start * d : stop * d])
        K.add_bias_rows(chunk.data, neg_mean, chunk.rows, d)
        K.matmul_tn(chunk.data, chunk.data, cov.data, d, chunk.rows, d, 1)
    K.scale_elem(cov.data, 1.0 / (n - 1), cov.data, d * d)

    eigvals = array("d", bytes(8 * d))
    vecs = DenseMatrix(d, d)  # eigenvectors in columns
    sweeps = K.jacobi_eigh(cov.data, eigvals, vecs.data, d, 1e-12, 100)
    if sweeps < 0:
        raise ArithmeticError("Jacobi eigendecomposition failed to converge")

    order = sorted(range(d), key=lambda i: (-eigvals[i], i))
    spectrum = array("d", (max(eigvals[i], 0.0) for i in order))
    total = math.fsum(spectrum)

    components = DenseMatrix(k, d)
    for row, i in enumerate(order[:k]):
        col = vecs.data[i :: d]
        # sign convention: largest-magnitude entry positive (first on ties)
        best = 0
        for j in range(1, d):
            if abs(col[j]) > abs(col[best]):
                best = j
        if col[best] < 0.0:
            K.scale_elem(col, -1.0, col, d)
        components.data[row * d : (row + 1) * d] = col

    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=array("d", spectrum[:k]),
        total_variance=total,
        spectrum=spectrum,
    )


def transform(model, x):
    """Project rows onto the components: (x - mean) . components^T."""
    if x.cols != model.d:
        raise ShapeError("data has %d columns, model expects %d" % (x.cols, model.d))
    centered = _center(x, model.mean)
    comp_t = DenseMatrix(model.d, model.k)
    K.transpose(model.components.data, comp_t.data, model.k, model.d)
    out = DenseMatrix(x.rows, model.k)
    K.matmul_nn(centered.data, comp_t.data, out.data, x.rows, model.d, model.k)
    return out


def inverse_transform(model, z):
    """Reconstruct from projections: z . components + mean."""
    if z.cols != model.k:
        raise ShapeError("projections have %d columns, model has k=%d" % (z.cols, model.k))
    out = DenseMatrix(z.rows, model.d)
    K.matmul_nn(z.data, model.components.data, out.data, z.rows, model.k, model.d)
    K.add_bias_rows(out.data, model.mean, out.rows, out.cols)
    return out


def cumulative_evr(model_or_spectrum):
    """Cumulative explained-variance ratios of a model or a raw spectrum.

    For a full spectrum the last value is 1.0; for a model restricted to k
    components the series stops at the k-component ratio.
    """
    if isinstance(model_or_spectrum, PcaModel):
        model = model_or_spectrum
        spectrum = model.spectrum if model.spectrum is not None else model.explained_variance
        total = model.total_variance
    else:
        spectrum = model_or_spectrum
        total = math.fsum(spectrum)
    if total <= 0.0:
        raise ParameterError("spectrum has no variance")
    out = array("d", bytes(8 * len(spectrum)))
    acc = 0.0
    for i, v in enumerate(spectrum):
        acc += v
        out[i] = acc / total
    return out


def choose_k(spectrum, threshold):
    """Smallest k whose cumulative explained-variance ratio reaches threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ParameterError("threshold must lie in (0, 1], got %r" % threshold)
    ratios = cumulative_evr(spectrum)
    for i, r in enumerate(ratios):
        if r >= threshold - 1e-12:
            return i + 1
    return len(ratios)


def _doubles_to_le_bytes(buf):
    b = array("d", buf)
    if sys.byteorder == "big":
        b.byteswap()
    return b.tobytes()


def _doubles_from_le_bytes(raw):
    b = array("d", raw)
    if sys.byteorder == "big":
        b.byteswap()
    return b


def save_pca(model, path):
    """Serialize: magic "PCAM", version u16, d u32, k u32, then mean,
    components (row-major), explained_variance and total_variance as
    little-endian f64."""
    with open(path, "wb") as fh:
        fh.write(PCA_MAGIC)
        fh.write(struct.pack("<HII", PCA_VERSION, model.d, model.k))
        fh.write(_doubles_to_le_bytes(model.mean))
        fh.write(_doubles_to_le_bytes(model.components.data))
        fh.write(_doubles_to_le_bytes(model.explained_variance))
        fh.write(struct.pack("<d", model.total_variance))


def load_pca(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != PCA_MAGIC:
        raise FormatError("bad magic %r in %s" % (raw[:4], path))
    version, d, k = struct.unpack_from("<HII", raw, 4)
    if version != PCA_VERSION:
        raise FormatError("unsupported PCA model version %d" % version)
    off = 14
    expected = off + 8 * (d + k * d + k) + 8
    if len(raw) != expected:
        raise FormatError(
            "corrupt %s: expected %d bytes, found %d" % (path, expected, len(raw))
        )
    mean = _doubles_from_le_bytes(raw[off : off + 8 * d])
    off += 8 * d
    components = DenseMatrix(k, d, _doubles_from_le_bytes(raw[off : off + 8 * k * d]))
    off += 8 * k * d
    explained = _doubles_from_le_bytes(raw[off : off + 8 * k])
    off += 8 * k
    (total,) = struct.unpack_from("<d", raw, off)
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=explained,
        total_variance=total,
        spectrum=None,
    )
