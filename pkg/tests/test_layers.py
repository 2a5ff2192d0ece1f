import math
from array import array

import pytest

from mlpmine.errors import FormatError, ParameterError, ShapeError, StateError
from mlpmine.layers import (
    AffineLayer,
    DropoutLayer,
    Network,
    ReluLayer,
    build_network,
    load_model,
    save_model,
)
from mlpmine.linalg import DenseMatrix, RngState
from mlpmine.losses import PenaltyConfig, cross_entropy_softmax, penalty_value

from conftest import assert_grad_close, central_diff, rand_matrix


def scalar_loss(net, x, labels, penalty=None):
    logits = net.forward(x, train=True)
    loss, grad = cross_entropy_softmax(logits, labels)
    if penalty is not None:
        loss += penalty_value(net.weight_matrices(), penalty)
    return loss, grad


def test_affine_identity_weights():
    w = DenseMatrix.from_rows([[1, 0], [0, 1]])
    layer = AffineLayer(w, [0.0, 0.0])
    x = rand_matrix(RngState(1), 3, 2)
    assert layer.forward(x, train=False) == x


def test_affine_hand_checked():
    layer = AffineLayer(DenseMatrix.from_rows([[1, 0], [0, 1]]), [10.0, 20.0])
    out = layer.forward(DenseMatrix.from_rows([[1, 2]]), train=False)
    assert out.to_rows() == [[11.0, 22.0]]


def test_affine_forward_matches_naive_oracle():
    rng = RngState(42)
    for _ in range(10):
        m, fi, fo = 1 + rng.randbelow(5), 1 + rng.randbelow(6), 1 + rng.randbelow(6)
        layer = AffineLayer.with_glorot_init(fi, fo, rng)
        x = rand_matrix(rng, m, fi)
        out = layer.forward(x, train=False)
        for i in range(m):
            for j in range(fo):
                want = layer.biases[j]
                for l in range(fi):
                    want += x.get(i, l) * layer.weights.get(l, j)
                assert abs(out.get(i, j) - want) < 1e-12


def test_affine_shape_error():
    layer = AffineLayer.with_glorot_init(3, 2, RngState(0))
    with pytest.raises(ShapeError):
        layer.forward(DenseMatrix(1, 4), train=False)


def test_affine_backward_zero_grad():
    rng = RngState(8)
    layer = AffineLayer.with_glorot_init(4, 3, rng)
    x = rand_matrix(rng, 2, 4)
    layer.forward(x, train=True)
    grad_in, gw, gb = layer.backward(DenseMatrix(2, 3))
    assert all(v == 0.0 for v in grad_in.data)
    assert all(v == 0.0 for v in gw.data)
    assert all(v == 0.0 for v in gb)


def test_affine_backward_scalar_case():
    layer = AffineLayer(DenseMatrix.from_rows([[2.0]]), [0.0])
    x = DenseMatrix.from_rows([[3.0]])
    layer.forward(x, train=True)
    _, gw, gb = layer.backward(DenseMatrix.from_rows([[5.0]]))
    assert gw.get(0, 0) == 15.0  # x * grad_out
    assert gb[0] == 5.0


def test_affine_cache_discipline():
    layer = AffineLayer.with_glorot_init(2, 2, RngState(1))
    x = DenseMatrix.from_rows([[1.0, 2.0]])
    layer.forward(x, train=False)
    with pytest.raises(StateError):
        layer.backward(DenseMatrix(1, 2))
    layer.forward(x, train=True)
    layer.backward(DenseMatrix(1, 2))
    with pytest.raises(StateError):  # cache invalidated by the first backward
        layer.backward(DenseMatrix(1, 2))


def test_relu_forward_backward():
    relu = ReluLayer()
    x = DenseMatrix.from_rows([[-1.0, 0.0, 2.0]])
    out = relu.forward(x, train=True)
    assert out.to_rows() == [[0.0, 0.0, 2.0]]
    grad = relu.backward(DenseMatrix.from_rows([[1.0, 1.0, 1.0]]))
    assert grad.to_rows() == [[0.0, 0.0, 1.0]]  # derivative at exactly 0 is 0
    with pytest.raises(StateError):
        relu.backward(DenseMatrix(1, 3))


def test_dropout_eval_scales_by_keep_prob():
    layer = DropoutLayer(0.75)
    out = layer.forward(DenseMatrix.from_rows([[4.0, 8.0]]), train=False)
    assert out.to_rows() == [[3.0, 6.0]]
    again = layer.forward(DenseMatrix.from_rows([[4.0, 8.0]]), train=False)
    assert again.to_rows() == [[3.0, 6.0]]  # eval mode is deterministic
    assert layer.cached_mask is None  # and samples no mask


def test_dropout_train_keep_all():
    layer = DropoutLayer(1.0)
    x = rand_matrix(RngState(3), 4, 5)
    out = layer.forward(x, train=True, rng=RngState(10))
    assert out == x


def test_dropout_train_zero_or_identity_and_kept_fraction():
    layer = DropoutLayer(0.5)
    x = rand_matrix(RngState(5), 250, 400, 1.0, 2.0)  # 1e5 entries, all nonzero
    out = layer.forward(x, train=True, rng=RngState(77))
    kept = 0
    for got, orig in zip(out.data, x.data):
        assert got == 0.0 or got == orig  # no train-time rescaling
        if got != 0.0:
            kept += 1
    assert 0.49 <= kept / len(x.data) <= 0.51


def test_dropout_kept_fraction_within_3_sigma():
    n = 120_000
    for seed, p in [(1, 0.25), (2, 0.5), (3, 0.75), (4, 0.9)]:
        layer = DropoutLayer(p)
        x = DenseMatrix(300, 400, array("d", [1.0] * n))
        out = layer.forward(x, train=True, rng=RngState(seed))
        kept = sum(1 for v in out.data if v != 0.0)
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(kept / n - p) <= 3 * sigma


def test_dropout_backward_uses_stored_mask():
    layer = DropoutLayer(0.6)
    x = rand_matrix(RngState(9), 6, 7, 1.0, 2.0)
    layer.forward(x, train=True, rng=RngState(123))
    mask = layer.cached_mask.copy()
    grads = rand_matrix(RngState(10), 6, 7)
    back = layer.backward(grads)
    for g_out, g_in, m in zip(back.data, grads.data, mask.data):
        assert g_out == g_in * m
    with pytest.raises(StateError):
        layer.backward(grads)


def test_dropout_mask_all_ones_and_zeros():
    layer = DropoutLayer(1.0)
    g = rand_matrix(RngState(2), 3, 3)
    layer.forward(rand_matrix(RngState(1), 3, 3), train=True, rng=RngState(4))
    assert layer.backward(g) == g

    # p in (0,1] cannot be 0, so force a zero mask directly to cover the rule
    layer = DropoutLayer(0.5)
    layer.forward(rand_matrix(RngState(1), 3, 3), train=True, rng=RngState(4))
    layer.cached_mask = DenseMatrix(3, 3)
    back = layer.backward(g)
    assert all(v == 0.0 for v in back.data)


def test_dropout_parameter_validation():
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ParameterError):
            DropoutLayer(bad)


def test_network_identity_and_bias_rows():
    eye = DenseMatrix.from_rows([[1, 0], [0, 1]])
    net = Network([AffineLayer(eye, [0.0, 0.0])], [2, 2])
    x = rand_matrix(RngState(6), 5, 2)
    assert net.forward(x, train=False) == x

    zero_w = DenseMatrix(3, 2)
    net = Network([AffineLayer(zero_w, [1.5, -2.5])], [3, 2])
    out = net.forward(rand_matrix(RngState(6), 4, 3), train=False)
    assert out.to_rows() == [[1.5, -2.5]] * 4


def test_network_forward_smoke_finite():
    rng = RngState(11)
    net = build_network([784, 100, 47], rng)
    x = rand_matrix(rng, 100, 784, 0.0, 1.0)
    logits = net.forward(x, train=False)
    assert logits.shape == (100, 47)
    assert logits.all_finite()


def test_network_backward_zero_grad():
    rng = RngState(13)
    net = build_network([6, 5, 4, 47], rng)
    x = rand_matrix(rng, 3, 6)
    net.forward(x, train=True)
    grads = net.backward(DenseMatrix(3, 47))
    for gw, gb in grads:
        assert all(v == 0.0 for v in gw.data)
        assert all(v == 0.0 for v in gb)


def _check_network_gradients(net, x, labels, penalty=None, rel=1e-6):
    loss, grad_logits = scalar_loss(net, x, labels, penalty)
    grad_pairs = net.backward(grad_logits)
    if penalty is not None:
        from mlpmine.losses import accumulate_penalty_grad

        accumulate_penalty_grad(
            [gw.data for gw, _ in grad_pairs],
            [l.weights.data for l in net.affine_layers()],
            penalty,
        )
    for (gw, gb), layer in zip(grad_pairs, net.affine_layers()):
        for buf, gbuf in ((layer.weights.data, gw.data), (layer.biases, gb)):
            for idx in range(len(buf)):
                numeric = central_diff(
                    lambda: scalar_loss(net, x, labels, penalty)[0], buf, idx
                )
                assert_grad_close(gbuf[idx], numeric, rel=rel)


def test_whole_network_finite_differences():
    rng = RngState(2718)
    for trial in range(3):
        net = build_network([6, 5, 4], rng)
        x = rand_matrix(rng, 3, 6)
        labels = [rng.randbelow(4) for _ in range(3)]
        _check_network_gradients(net, x, labels)


def test_finite_differences_with_penalties():
    rng = RngState(31415)
    for kind, lam in (("L1", 1e-3), ("L2", 1e-2)):
        net = build_network([5, 4, 3], rng)
        x = rand_matrix(rng, 2, 5)
        labels = [rng.randbelow(3) for _ in range(2)]
        _check_network_gradients(net, x, labels, PenaltyConfig(kind, lam))


def test_network_with_p1_dropout_equals_plain_network_exactly():
    rng = RngState(5)
    with_do = build_network([6, 8, 8, 4], rng, dropout_keep=None)
    # same weights, dropout layers with p=1 inserted after each hidden relu
    layers = []
    for layer in with_do.layers:
        layers.append(layer)
        if isinstance(layer, ReluLayer):
            layers.append(DropoutLayer(1.0))
    doped = Network(layers, with_do.architecture)

    x = rand_matrix(RngState(70), 5, 6)
    out_plain = with_do.forward(x, train=True, rng=RngState(99))
    out_doped = doped.forward(x, train=True, rng=RngState(99))
    assert out_plain == out_doped


def test_dropout_eval_backward_equals_scaled_plain_network():
    # eval-mode dropout multiplies activations by p, so its gradient equals a
    # mask-free network whose downstream weights absorb the factor p
    rng = RngState(404)
    p = 0.75
    net = build_network([5, 6, 3], rng, dropout_keep=[p])
    x = rand_matrix(RngState(1), 4, 5)
    labels = [0, 1, 2, 1]

    a1, a2 = net.affine_layers()
    scaled_w = a2.weights.copy()
    for i in range(len(scaled_w.data)):
        scaled_w.data[i] *= p
    plain = Network(
        [
            AffineLayer(a1.weights.copy(), array("d", a1.biases)),
            ReluLayer(),
            AffineLayer(scaled_w, array("d", a2.biases)),
        ],
        net.architecture,
    )

    eval_logits = net.forward(x, train=False)
    plain_logits = plain.forward(x, train=True)
    for a, b in zip(eval_logits.data, plain_logits.data):
        assert abs(a - b) < 1e-12
    # and the scaled plain network passes finite differences
    _check_network_gradients(plain, x, labels)


def test_train_mode_dropout_gradients_with_frozen_mask():
    rng = RngState(1001)
    net = build_network([5, 6, 3], rng, dropout_keep=[0.7])

    x = rand_matrix(RngState(2), 3, 5)
    labels = [2, 0, 1]

    def loss_with_fixed_mask():
        logits = net.forward(x, train=True, rng=RngState(555))
        return cross_entropy_softmax(logits, labels)[0]

    loss = loss_with_fixed_mask()
    assert math.isfinite(loss)
    logits = net.forward(x, train=True, rng=RngState(555))
    _, grad_logits = cross_entropy_softmax(logits, labels)
    grad_pairs = net.backward(grad_logits)
    for (gw, gb), layer in zip(grad_pairs, net.affine_layers()):
        for buf, gbuf in ((layer.weights.data, gw.data), (layer.biases, gb)):
            for idx in range(0, len(buf), 3):  # sample every third parameter
                numeric = central_diff(loss_with_fixed_mask, buf, idx)
                assert_grad_close(gbuf[idx], numeric)


def test_build_network_validation():
    rng = RngState(1)
    with pytest.raises(ParameterError):
        build_network([5], rng)
    with pytest.raises(ParameterError):
        build_network([5, 4, 3], rng, dropout_keep=[0.5, 0.5])
    net = build_network([5, 4, 3], rng, dropout_keep=[1.0])
    assert not any(isinstance(l, DropoutLayer) for l in net.layers)


def test_model_serialization_round_trip(tmp_path):
    rng = RngState(321)
    net = build_network([7, 6, 5, 47], rng, dropout_keep=[0.75, 1.0])
    path = tmp_path / "model.mlpm"
    save_model(net, path)
    loaded = load_model(path)
    assert loaded.architecture == net.architecture
    assert len(loaded.layers) == len(net.layers)
    for a, b in zip(net.layers, loaded.layers):
        assert type(a) is type(b)
        if isinstance(a, AffineLayer):
            assert a.weights == b.weights
            assert a.biases == b.biases
        if isinstance(a, DropoutLayer):
            assert a.keep_prob == b.keep_prob
    # bit-exact: a second save produces identical bytes
    path2 = tmp_path / "model2.mlpm"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_model_load_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.mlpm"
    bad.write_bytes(b"NOPE" + bytes(10))
    with pytest.raises(FormatError):
        load_model(bad)
    rng = RngState(1)
    net = build_network([3, 2, 47], rng)
    good = tmp_path / "good.mlpm"
    save_model(net, good)
    truncated = tmp_path / "trunc.mlpm"
    truncated.write_bytes(good.read_bytes()[:-5])
    with pytest.raises(FormatError):
        load_model(truncated)
