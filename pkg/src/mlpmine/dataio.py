"""Balanced EMNIST ingestion: IDX parsing, normalization, stratified
splitting, shuffling, batching and the compact EMDS binary container.

Features are held as 64-bit floats in memory; the EMDS on-disk format
stores them as little-endian 32-bit floats (raw pixels and PCA projections
both fit; 8-bit storage could not hold projections).
"""

import struct
import sys
from array import array
from dataclasses import dataclass

from .backend import kernels as K
from .errors import DataError, FormatError, ParameterError, StateError
from .linalg import DenseMatrix, RngState, gather_rows

N_CLASSES = 47

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

EMDS_MAGIC = b"EMDS"
EMDS_VERSION = 1


class Dataset:
    """Feature matrix plus integer labels in 0..46 and a provenance name."""

    __slots__ = ("features", "labels", "name")

    def __init__(self, features, labels, name=""):
        if features.rows != len(labels):
            raise DataError(
                "%d feature rows vs %d labels" % (features.rows, len(labels))
            )
        for lab in labels:
            if not 0 <= lab < N_CLASSES:
                raise DataError("label %d outside 0..%d" % (lab, N_CLASSES - 1))
        self.features = features
        self.labels = list(labels)
        self.name = name

    @property
    def n(self):
        return self.features.rows

    @property
    def d(self):
        return self.features.cols

    def take(self, indices, name=None):
        """Sub-dataset holding the given rows, in the given order."""
        feats = gather_rows(self.features, indices)
        labels = [self.labels[i] for i in indices]
        return Dataset(feats, labels, self.name if name is None else name)

    def __repr__(self):
        return "Dataset(%r, n=%d, d=%d)" % (self.name, self.n, self.d)


def _read_exact(fh, count, path):
    data = fh.read(count)
    if len(data) != count:
        raise FormatError("truncated file %s: wanted %d bytes, got %d" % (path, count, len(data)))
    return data


def _transpose_image(raw, side):
    # EMNIST ships images transposed; strided slices flip them at C speed.
    return b"".join(raw[j::side] for j in range(side))


def load_idx(images_path, labels_path, transpose_images=True):
    """Parse an uncompressed IDX image/label pair into a raw-pixel Dataset.

    Big-endian headers: images carry magic 0x00000803 and dims (n, 28, 28),
    labels carry magic 0x00000801 and dim (n).  Pixels arrive as bytes in
    0..255 and are NOT normalized here.  transpose_images flips each 28x28
    image, undoing the transposed storage of the EMNIST distribution.
    """
    with open(images_path, "rb") as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                "bad images magic 0x%08x in %s (expected 0x%08x)"
                % (magic, images_path, IDX_IMAGES_MAGIC)
            )
        if rows != 28 or cols != 28:
            raise FormatError(
                "expected 28x28 images in %s, got %dx%d" % (images_path, rows, cols)
            )
        pixels = _read_exact(fh, n * rows * cols, images_path)
        if fh.read(1):
            raise FormatError("trailing bytes in %s" % images_path)

    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                "bad labels magic 0x%08x in %s (expected 0x%08x)"
                % (magic, labels_path, IDX_LABELS_MAGIC)
            )
        label_bytes = _read_exact(fh, n_labels, labels_path)
        if fh.read(1):
            raise FormatError("trailing bytes in %s" % labels_path)

    if n != n_labels:
        raise DataError(
            "%s holds %d images but %s holds %d labels"
            % (images_path, n, labels_path, n_labels)
        )

    side = rows
    stride = side * side
    data = array("d")
    for i in range(n):
        img = pixels[i * stride : (i + 1) * stride]
        if transpose_images:
            img = _transpose_image(img, side)
        data.extend(img)
    features = DenseMatrix(n, stride, data)
    return Dataset(features, list(label_bytes), name="idx")


def pool_datasets(datasets, name="pool"):
    """Concatenate datasets row-wise; dimensions must agree."""
    if not datasets:
        raise ParameterError("nothing to pool")
    d = datasets[0].d
    merged = array("d")
    labels = []
    for ds in datasets:
        if ds.d != d:
            raise DataError("cannot pool %d-dim data with %d-dim data" % (ds.d, d))
        merged += ds.features.data
        labels += ds.labels
    return Dataset(DenseMatrix(len(labels), d, merged), labels, name=name)


def normalize(dataset):
    """Scale raw byte pixels into [0, 1] by dividing by 255.

    Rejects data that already looks normalized (all entries <= 1) so the
    scaling cannot be applied twice.
    """
    data = dataset.features.data
    if not data:
        raise DataError("cannot normalize an empty dataset")
    lo, hi = K.minmax(data, len(data))
    if hi <= 1.0:
        raise StateError("dataset %r already normalized (max entry %r)" % (dataset.name, hi))
    if lo < 0.0 or hi > 255.0:
        raise DataError("raw pixels must lie in 0..255, found range [%r, %r]" % (lo, hi))
    scaled = array("d", data)
    K.scale_elem(scaled, 1.0 / 255.0, scaled, len(scaled))
    feats = DenseMatrix(dataset.features.rows, dataset.features.cols, scaled)
    return Dataset(feats, dataset.labels, dataset.name)


@dataclass
class SplitSpec:
    train_count: int
    valid_count: int
    test_count: int
    seed: int = 1

    def __post_init__(self):
        for c in (self.train_count, self.valid_count, self.test_count):
            if c < 0:
                raise ParameterError("split counts must be >= 0")


def _largest_remainder(class_counts, want):
    """Integer per-class allocation proportional to class_counts, exact sum."""
    total = sum(class_counts)
    if want > total:
        raise ParameterError("cannot allocate %d samples from %d available" % (want, total))
    if total == 0:
        return [0] * len(class_counts)
    base = [(want * c) // total for c in class_counts]
    remainders = [(want * c) % total for c in class_counts]
    leftover = want - sum(base)
    order = sorted(range(len(class_counts)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def stratified_split(dataset, spec):
    """Split into (train, valid, test) with per-class proportional allocation.

    Samples inside each class are shuffled with the SplitSpec seed before
    allocation, so the split is deterministic for a fixed seed.
    """
    want = spec.train_count + spec.valid_count + spec.test_count
    if want > dataset.n:
        raise ParameterError(
            "split wants %d samples but dataset %r holds %d" % (want, dataset.name, dataset.n)
        )
    by_class = [[] for _ in range(N_CLASSES)]
    for i, lab in enumerate(dataset.labels):
        by_class[lab].append(i)

    rng = RngState(spec.seed)
    for idxs in by_class:
        rng.shuffle(idxs)

    cursors = [0] * N_CLASSES
    remaining = [len(idxs) for idxs in by_class]
    splits = []
    for count, tag in (
        (spec.train_count, "train"),
        (spec.valid_count, "valid"),
        (spec.test_count, "test"),
    ):
        takes = _largest_remainder(remaining, count)
        picked = []
        for c in range(N_CLASSES):
            start = cursors[c]
            picked.extend(by_class[c][start : start + takes[c]])
            cursors[c] += takes[c]
            remaining[c] -= takes[c]
        rng.shuffle(picked)
        splits.append(dataset.take(picked, name="%s-%s" % (dataset.name, tag)))
    return tuple(splits)


def shuffle(dataset, seed):
    """Seeded Fisher-Yates permutation applied to rows and labels together."""
    perm = list(range(dataset.n))
    RngState(seed).shuffle(perm)
    return dataset.take(perm)


def batches(dataset, batch_size):
    """Yield (features, labels) chunks in order; the last chunk may be short."""
    if batch_size < 1:
        raise ParameterError("batch size must be >= 1, got %d" % batch_size)
    d = dataset.d
    data = dataset.features.data
    for start in range(0, dataset.n, batch_size):
        stop = min(start + batch_size, dataset.n)
        feats = DenseMatrix(stop - start, d, data[start * d : stop * d])
        yield feats, dataset.labels[start:stop]


def _f32_bytes(doubles):
    buf = array("f", doubles)
    if sys.byteorder == "big":
        buf.byteswap()
    return buf.tobytes()


def save_bin(dataset, path):
    """Write the EMDS container.

    Layout: magic "EMDS", version u16, n u32, d u32, label width u8 (= 1),
    features as little-endian f32 row-major, then labels as single bytes.
    """
    if dataset.n < 1:
        raise ParameterError("refusing to write an empty dataset")
    header = EMDS_MAGIC + struct.pack("<HIIB", EMDS_VERSION, dataset.n, dataset.d, 1)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(_f32_bytes(dataset.features.data))
        fh.write(bytes(dataset.labels))


def load_bin(path, name=None):
    with open(path, "rb") as fh:
        header = _read_exact(fh, 15, path)
        if header[:4] != EMDS_MAGIC:
            raise FormatError("bad magic %r in %s" % (header[:4], path))
        version, n, d, label_width = struct.unpack("<HIIB", header[4:])
        if version != EMDS_VERSION:
            raise FormatError("unsupported EMDS version %d in %s" % (version, path))
        if label_width != 1:
            raise FormatError("unsupported label width %d in %s" % (label_width, path))
        body = fh.read()
    expected = 4 * n * d + n
    if len(body) != expected:
        raise FormatError(
            "corrupt %s: header promises %d body bytes, file has %d"
            % (path, expected, len(body))
        )
    f32 = array("f")
    f32.frombytes(body[: 4 * n * d])
    if sys.byteorder == "big":
        f32.byteswap()
    features = DenseMatrix(n, d, array("d", f32))
    labels = list(body[4 * n * d :])
    return Dataset(features, labels, name=name if name is not None else path)
