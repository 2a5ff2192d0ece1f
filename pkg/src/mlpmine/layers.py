"""Network layers with exact backpropagation.

Affine, ReLU and dropout layers cache what their backward pass needs during
a train-mode forward; backward consumes the cache, so a second backward (or
a backward after an eval-mode forward) raises StateError.

Dropout follows the scale-at-eval convention: train mode multiplies by a
binary keep-mask sampled as (uniform <= p), eval mode returns p * inputs
with no randomness.  Activations are never rescaled at train time.
"""

import math
import struct
import sys
from array import array

from .backend import kernels as K
from .errors import FormatError, ParameterError, ShapeError, StateError
from .linalg import DenseMatrix, sample_uniform

MODEL_MAGIC = b"MLPM"
MODEL_VERSION = 1

_TAG_AFFINE = 0
_TAG_RELU = 1
_TAG_DROPOUT = 2


class AffineLayer:
    """Fully connected layer: out = x . W + b."""

    def __init__(self, weights, biases):
        if weights.cols != len(biases):
            raise ShapeError(
                "bias length %d does not match fan_out %d" % (len(biases), weights.cols)
            )
        self.weights = weights
        self.biases = array("d", biases)
        self.cached_input = None

    @classmethod
    def with_glorot_init(cls, fan_in, fan_out, rng):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights = sample_uniform(rng, fan_in, fan_out, -limit, limit)
        return cls(weights, array("d", bytes(8 * fan_out)))

    @property
    def fan_in(self):
        return self.weights.rows

    @property
    def fan_out(self):
        return self.weights.cols

    def forward(self, x, train, rng=None):
        if x.cols != self.fan_in:
            raise ShapeError(
                "affine input has %d columns, expected %d" % (x.cols, self.fan_in)
            )
        out = DenseMatrix(x.rows, self.fan_out)
        K.matmul_nn(x.data, self.weights.data, out.data, x.rows, x.cols, self.fan_out)
        K.add_bias_rows(out.data, self.biases, out.rows, out.cols)
        if train:
            self.cached_input = x
        return out

    def backward(self, grad_out, need_input_grad=True):
        """Returns (grad_in, grad_weights, grad_biases); grad_in is None when
        not requested (first layer of a network)."""
        x = self.cached_input
        if x is None:
            raise StateError("affine backward without a train-mode forward")
        if grad_out.cols != self.fan_out:
            raise ShapeError(
                "grad has %d columns, expected %d" % (grad_out.cols, self.fan_out)
            )
        m = grad_out.rows
        grad_w = DenseMatrix(self.fan_in, self.fan_out)
        K.matmul_tn(x.data, grad_out.data, grad_w.data, self.fan_in, m, self.fan_out)
        grad_b = array("d", bytes(8 * self.fan_out))
        K.col_sums(grad_out.data, grad_b, m, self.fan_out)
        grad_in = None
        if need_input_grad:
            wt = DenseMatrix(self.fan_out, self.fan_in)
            K.transpose(self.weights.data, wt.data, self.fan_in, self.fan_out)
            grad_in = DenseMatrix(m, self.fan_in)
            K.matmul_nn(grad_out.data, wt.data, grad_in.data, m, self.fan_out, self.fan_in)
        self.cached_input = None
        return grad_in, grad_w, grad_b


class ReluLayer:
    """Elementwise max(0, x); the derivative at exactly 0 is taken as 0."""

    def __init__(self):
        self.cached_input = None

    def forward(self, x, train, rng=None):
        out = DenseMatrix(x.rows, x.cols)
        K.relu_fwd(x.data, out.data, len(x.data))
        if train:
            self.cached_input = x
        return out

    def backward(self, grad_out):
        x = self.cached_input
        if x is None:
            raise StateError("relu backward without a train-mode forward")
        if grad_out.shape != x.shape:
            raise ShapeError("relu grad shape %s, expected %s" % (grad_out.shape, x.shape))
        out = DenseMatrix(x.rows, x.cols)
        K.relu_bwd(x.data, grad_out.data, out.data, len(x.data))
        self.cached_input = None
        return out


class DropoutLayer:
    def __init__(self, keep_prob):
        if not 0.0 < keep_prob <= 1.0:
            raise ParameterError("dropout keep probability must be in (0, 1], got %r" % keep_prob)
        self.keep_prob = keep_prob
        self.cached_mask = None

    def forward(self, x, train, rng=None):
        n = len(x.data)
        out = DenseMatrix(x.rows, x.cols)
        if not train:
            K.scale_elem(x.data, self.keep_prob, out.data, n)
            return out
        u = array("d", bytes(8 * n))
        rng.state = K.fill_uniform(rng.state, u, 0.0, 1.0)
        mask = DenseMatrix(x.rows, x.cols)
        K.mask_leq(u, self.keep_prob, mask.data, n)
        K.mul_elem(mask.data, x.data, out.data, n)
        self.cached_mask = mask
        return out

    def backward(self, grad_out):
        mask = self.cached_mask
        if mask is None:
            raise StateError("dropout backward without a train-mode forward")
        if grad_out.shape != mask.shape:
            raise ShapeError(
                "dropout grad shape %s, expected %s" % (grad_out.shape, mask.shape)
            )
        out = DenseMatrix(grad_out.rows, grad_out.cols)
        K.mul_elem(mask.data, grad_out.data, out.data, len(out.data))
        self.cached_mask = None
        return out


class Network:
    """Ordered layer stack with a widths list (input, hidden..., output)."""

    def __init__(self, layers, architecture):
        self.layers = list(layers)
        self.architecture = list(architecture)
        affines = self.affine_layers()
        for prev, nxt in zip(affines, affines[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ShapeError(
                    "affine layers disagree: fan_out %d feeds fan_in %d"
                    % (prev.fan_out, nxt.fan_in)
                )

    def affine_layers(self):
        return [l for l in self.layers if isinstance(l, AffineLayer)]

    def param_arrays(self):
        """Flat list of parameter buffers: weights, biases per affine layer."""
        out = []
        for layer in self.affine_layers():
            out.append(layer.weights.data)
            out.append(layer.biases)
        return out

    def weight_matrices(self):
        return [l.weights for l in self.affine_layers()]

    def snapshot(self):
        return [array("d", p) for p in self.param_arrays()]

    def restore(self, snap):
        for p, s in zip(self.param_arrays(), snap):
            p[:] = s

    def forward(self, x, train, rng=None):
        if x.cols != self.architecture[0]:
            raise ShapeError(
                "input has %d columns, network expects %d" % (x.cols, self.architecture[0])
            )
        out = x
        for layer in self.layers:
            out = layer.forward(out, train, rng)
        return out

    def backward(self, grad_logits):
        """Backpropagate to all parameters.

        Returns one (grad_weights, grad_biases) pair per affine layer, in
        forward order.  The gradient w.r.t. the network input is not computed.
        """
        affines = self.affine_layers()
        first_affine = affines[0] if affines else None
        grads = {}
        grad = grad_logits
        for layer in reversed(self.layers):
            if isinstance(layer, AffineLayer):
                grad, gw, gb = layer.backward(grad, need_input_grad=layer is not first_affine)
                grads[id(layer)] = (gw, gb)
            else:
                grad = layer.backward(grad)
        return [grads[id(l)] for l in affines]


def build_network(architecture, rng, dropout_keep=None):
    """Affine/ReLU stack from a widths list, dropout after selected hidden ReLUs.

    dropout_keep gives one keep probability per hidden layer; entries equal
    to 1.0 insert no dropout layer.  Weights are Glorot-uniform, biases zero.
    """
    if len(architecture) < 2:
        raise ParameterError("architecture needs at least input and output widths")
    hidden = architecture[1:-1]
    if dropout_keep is not None and len(dropout_keep) != len(hidden):
        raise ParameterError(
            "got %d keep probabilities for %d hidden layers"
            % (len(dropout_keep), len(hidden))
        )
    layers = []
    for i, width in enumerate(hidden):
        layers.append(AffineLayer.with_glorot_init(architecture[i], width, rng))
        layers.append(ReluLayer())
        if dropout_keep is not None and dropout_keep[i] != 1.0:
            layers.append(DropoutLayer(dropout_keep[i]))
    layers.append(AffineLayer.with_glorot_init(architecture[-2], architecture[-1], rng))
    return Network(layers, architecture)


def _doubles_to_bytes(buf):
    raw = buf.tobytes()
    if sys.byteorder == "big":
        swapped = array("d", raw)
        swapped.byteswap()
        raw = swapped.tobytes()
    return raw


def _doubles_from_bytes(raw):
    buf = array("d", raw)
    if sys.byteorder == "big":
        buf.byteswap()
    return buf


def save_model(net, path):
    """Serialize a network to the flat binary model format.

    Layout: magic "MLPM", version u16, layer count u16, then per layer a
    kind tag u8 followed by kind-specific payload -- affine: fan_in u32,
    fan_out u32, row-major weights then biases as f64; relu: nothing;
    dropout: keep probability as one f64.  All integers and floats are
    little-endian; round trips are bit-exact.
    """
    parts = [MODEL_MAGIC, struct.pack("<HH", MODEL_VERSION, len(net.layers))]
    for layer in net.layers:
        if isinstance(layer, AffineLayer):
            parts.append(struct.pack("<BII", _TAG_AFFINE, layer.fan_in, layer.fan_out))
            parts.append(_doubles_to_bytes(layer.weights.data))
            parts.append(_doubles_to_bytes(layer.biases))
        elif isinstance(layer, ReluLayer):
            parts.append(struct.pack("<B", _TAG_RELU))
        elif isinstance(layer, DropoutLayer):
            parts.append(struct.pack("<Bd", _TAG_DROPOUT, layer.keep_prob))
        else:
            raise ParameterError("cannot serialize layer %r" % layer)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MODEL_MAGIC:
        raise FormatError("bad model magic %r in %s" % (raw[:4], path))
    version, n_layers = struct.unpack_from("<HH", raw, 4)
    if version != MODEL_VERSION:
        raise FormatError("unsupported model version %d" % version)
    off = 8
    layers = []
    try:
        for _ in range(n_layers):
            (tag,) = struct.unpack_from("<B", raw, off)
            off += 1
            if tag == _TAG_AFFINE:
                fan_in, fan_out = struct.unpack_from("<II", raw, off)
                off += 8
                w_len = 8 * fan_in * fan_out
                weights = DenseMatrix(
                    fan_in, fan_out, _doubles_from_bytes(raw[off : off + w_len])
                )
                off += w_len
                biases = _doubles_from_bytes(raw[off : off + 8 * fan_out])
                off += 8 * fan_out
                if len(biases) != fan_out:
                    raise FormatError("truncated affine layer in %s" % path)
                layers.append(AffineLayer(weights, biases))
            elif tag == _TAG_RELU:
                layers.append(ReluLayer())
            elif tag == _TAG_DROPOUT:
                (keep,) = struct.unpack_from("<d", raw, off)
                off += 8
                layers.append(DropoutLayer(keep))
            else:
                raise FormatError("unknown layer tag %d in %s" % (tag, path))
    except FormatError:
        raise
    except (struct.error, ValueError) as exc:
        raise FormatError("truncated or corrupt model file %s: %s" % (path, exc))
    if off != len(raw):
        raise FormatError("%d trailing bytes in %s" % (len(raw) - off, path))

    affines = [l for l in layers if isinstance(l, AffineLayer)]
    if not affines:
        raise FormatError("model file %s holds no affine layers" % path)
    architecture = [affines[0].fan_in] + [l.fan_out for l in affines]
    return Network(layers, architecture)
