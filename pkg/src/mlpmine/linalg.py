"""Dense row-major matrices and seeded randomness.

Everything else in the package is built on DenseMatrix (a flat
``array('d')`` buffer plus a shape) and RngState (a SplitMix64 generator,
so identical seeds give identical streams in both kernel backends).
"""

import math
from array import array

from .backend import kernels as K
from .errors import ParameterError, ShapeError


class DenseMatrix:
    """Row-major matrix of 64-bit floats."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows, cols, data=None):
        if rows < 0 or cols < 0:
            raise ParameterError("negative matrix dimension (%d, %d)" % (rows, cols))
        if data is None:
            data = array("d", bytes(8 * rows * cols))
        elif not isinstance(data, array) or data.typecode != "d":
            data = array("d", data)
        if len(data) != rows * cols:
            raise ShapeError(
                "data length %d does not match shape (%d, %d)" % (len(data), rows, cols)
            )
        self.rows = rows
        self.cols = cols
        self.data = data

    @classmethod
    def from_rows(cls, rows):
        r = len(rows)
        c = len(rows[0]) if r else 0
        data = array("d")
        for row in rows:
            if len(row) != c:
                raise ShapeError("ragged rows: expected %d columns" % c)
            data.extend(float(v) for v in row)
        return cls(r, c, data)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def get(self, i, j):
        return self.data[i * self.cols + j]

    def set(self, i, j, value):
        self.data[i * self.cols + j] = value

    def row(self, i):
        return self.data[i * self.cols : (i + 1) * self.cols]

    def to_rows(self):
        return [list(self.row(i)) for i in range(self.rows)]

    def copy(self):
        return DenseMatrix(self.rows, self.cols, array("d", self.data))

    def all_finite(self):
        return all(map(math.isfinite, self.data))

    def __eq__(self, other):
        return (
            isinstance(other, DenseMatrix)
            and self.shape == other.shape
            and self.data == other.data
        )

    def __repr__(self):
        return "DenseMatrix(%d, %d)" % (self.rows, self.cols)


def matmul(a, b):
    """Standard matrix product a . b."""
    if a.cols != b.rows:
        raise ShapeError("matmul shape mismatch: %s x %s" % (a.shape, b.shape))
    out = DenseMatrix(a.rows, b.cols)
    K.matmul_nn(a.data, b.data, out.data, a.rows, a.cols, b.cols)
    return out


def transpose(a):
    out = DenseMatrix(a.cols, a.rows)
    K.transpose(a.data, out.data, a.rows, a.cols)
    return out


def map_elementwise(a, f):
    """Apply a scalar function to every entry (same shape result)."""
    out = a.copy()
    data = out.data
    for i in range(len(data)):
        data[i] = f(data[i])
    return out


def zip_elementwise(a, b, f):
    """Entrywise f(a_ij, b_ij); shapes must match."""
    if a.shape != b.shape:
        raise ShapeError("zip_elementwise shape mismatch: %s vs %s" % (a.shape, b.shape))
    out = DenseMatrix(a.rows, a.cols)
    ad, bd, od = a.data, b.data, out.data
    for i in range(len(od)):
        od[i] = f(ad[i], bd[i])
    return out


def reduce_axis(a, axis, op):
    """Reduce across rows or cols with sum/mean/max/argmax.

    axis="rows" collapses the rows (result has one entry per column);
    axis="cols" collapses the columns (one entry per row).  Argmax ties
    break toward the lowest index.
    """
    if a.rows == 0 or a.cols == 0:
        raise ParameterError("reduce_axis on an empty matrix")
    if axis not in ("rows", "cols"):
        raise ParameterError("axis must be 'rows' or 'cols', got %r" % axis)
    if op not in ("sum", "mean", "max", "argmax"):
        raise ParameterError("unknown reduction %r" % op)

    if axis == "cols":
        groups = (a.row(i) for i in range(a.rows))
    else:
        groups = (a.data[j :: a.cols] for j in range(a.cols))

    out = []
    for seq in groups:
        if op == "sum":
            out.append(math.fsum(seq))
        elif op == "mean":
            out.append(math.fsum(seq) / len(seq))
        elif op == "max":
            out.append(max(seq))
        else:
            best_i, best_v = 0, seq[0]
            for i in range(1, len(seq)):
                if seq[i] > best_v:
                    best_i, best_v = i, seq[i]
            out.append(best_i)
    return out


class RngState:
    """Deterministic SplitMix64 generator; single-owner, never shared."""

    __slots__ = ("seed", "state")

    def __init__(self, seed):
        self.seed = seed & K.MASK64
        self.state = self.seed

    def next_u64(self):
        self.state, z = K.splitmix64_next(self.state)
        return z

    def uniform(self, lo=0.0, hi=1.0):
        buf = array("d", (0.0,))
        self.state = K.fill_uniform(self.state, buf, lo, hi)
        return buf[0]

    def randbelow(self, n):
        """Uniform-ish integer in [0, n); bias is < n / 2**64."""
        if n <= 0:
            raise ParameterError("randbelow needs n >= 1, got %d" % n)
        return self.next_u64() % n

    def shuffle(self, seq):
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]


def sample_uniform(rng, rows, cols, lo, hi):
    """Matrix of i.i.d. uniform draws in [lo, hi)."""
    if not lo < hi:
        raise ParameterError("uniform range needs lo < hi, got [%r, %r)" % (lo, hi))
    out = DenseMatrix(rows, cols)
    rng.state = K.fill_uniform(rng.state, out.data, lo, hi)
    return out


def gather_rows(a, indices):
    """New matrix holding the given rows of ``a`` in the given order."""
    out = array("d")
    c = a.cols
    data = a.data
    for i in indices:
        out += data[i * c : (i + 1) * c]
    return DenseMatrix(len(indices), c, out)
