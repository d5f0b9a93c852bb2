import math

import numpy as np
import pytest

from magclimb.errors import ShapeError
from magclimb.neural import (
    Adam,
    AdamState,
    AdaptiveReLU,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    LSTM,
    LstmState,
    MaxPool1D,
    ModelGraph,
    RNN,
    Softmax,
    adam_step,
    cross_entropy,
    gradient_check,
    lstm_step,
    softmax,
    softmax_cross_entropy_grad,
)

F64 = np.float64


def _graph(layers, rng_seed=0):
    graph = ModelGraph(layers, dtype=F64)
    graph.init_params(np.random.default_rng(rng_seed))
    return graph


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def test_conv_hand_dot_products():
    conv = Conv1D(1, 1, 3, padding="valid", dtype=F64)
    conv.kernel[:, 0, 0] = [1.0, 0.0, -1.0]
    x = np.array([[[1.0], [2.0], [3.0], [4.0]]])
    out = conv.forward(x)
    assert np.allclose(out[0, :, 0], [-2.0, -2.0])


def test_conv_identity_kernel_same_padding():
    conv = Conv1D(1, 1, 3, padding="same", dtype=F64)
    conv.kernel[:, 0, 0] = [0.0, 1.0, 0.0]
    x = np.random.default_rng(0).standard_normal((2, 7, 1))
    assert np.allclose(conv.forward(x), x)


def test_conv_linearity():
    conv = Conv1D(2, 3, 3, padding="valid", dtype=F64)
    conv.init_params(np.random.default_rng(1))
    conv.bias[:] = 0.0
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 9, 2))
    y = rng.standard_normal((2, 9, 2))
    combined = conv.forward(1.7 * x - 0.4 * y)
    assert np.allclose(combined, 1.7 * conv.forward(x) - 0.4 * conv.forward(y),
                       atol=1e-12)


def test_conv_same_padding_preserves_length():
    for width in (2, 3, 4, 5):
        conv = Conv1D(1, 2, width, padding="same", dtype=F64)
        conv.init_params(np.random.default_rng(3))
        assert conv.forward(np.zeros((1, 11, 1))).shape == (1, 11, 2)


def test_conv_valid_too_short():
    conv = Conv1D(1, 1, 5, padding="valid", dtype=F64)
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((1, 3, 1)))


# ---------------------------------------------------------------------------
# activations and pooling
# ---------------------------------------------------------------------------

def test_adaptive_relu_values():
    act = AdaptiveReLU(1, init_slope=0.1, dtype=F64)
    out = act.forward(np.array([[[3.0], [-2.0]]]))
    assert np.allclose(out[0, :, 0], [3.0, -0.2])


def test_adaptive_relu_slope_one_is_identity():
    act = AdaptiveReLU(4, init_slope=1.0, dtype=F64)
    x = np.random.default_rng(4).standard_normal((2, 5, 4))
    assert np.allclose(act.forward(x), x)


def test_maxpool_window_one_is_identity():
    pool = MaxPool1D(1)
    x = np.random.default_rng(5).standard_normal((2, 6, 3))
    fwd = pool.forward(x)
    assert np.array_equal(fwd, x)
    grad = np.random.default_rng(6).standard_normal(fwd.shape)
    assert np.array_equal(pool.backward(grad), grad)


def test_maxpool_values():
    pool = MaxPool1D(2)
    x = np.array([[[1.0], [3.0], [2.0], [5.0]]])
    assert np.allclose(pool.forward(x)[0, :, 0], [3.0, 5.0])


def test_maxpool_backward_routes_to_argmax():
    pool = MaxPool1D(2)
    x = np.array([[[1.0], [3.0], [2.0], [5.0]]])
    pool.forward(x)
    grad = pool.backward(np.array([[[10.0], [20.0]]]))
    assert np.allclose(grad[0, :, 0], [0.0, 10.0, 0.0, 20.0])


def test_maxpool_tie_goes_to_earliest():
    pool = MaxPool1D(2)
    x = np.array([[[7.0], [7.0]]])
    pool.forward(x)
    grad = pool.backward(np.array([[[1.0]]]))
    assert np.allclose(grad[0, :, 0], [1.0, 0.0])


def test_dropout_infer_is_identity():
    drop = Dropout(0.5)
    x = np.random.default_rng(7).standard_normal((4, 6, 2))
    assert drop.forward(x, train=False) is x


def test_dropout_rate_zero_is_identity():
    drop = Dropout(0.0)
    x = np.random.default_rng(8).standard_normal((4, 6, 2))
    assert drop.forward(x, train=True) is x


def test_dropout_preserves_mean():
    drop = Dropout(0.2)
    drop.rng = np.random.default_rng(9)
    x = np.ones((100, 100))
    out = drop.forward(x, train=True)
    assert np.mean(out) / np.mean(x) == pytest.approx(1.0, abs=0.02)


def test_dropout_backward_uses_same_mask():
    drop = Dropout(0.3)
    drop.rng = np.random.default_rng(10)
    x = np.ones((20, 20))
    out = drop.forward(x, train=True)
    grad = drop.backward(np.ones_like(x))
    assert np.array_equal(grad, out)


# ---------------------------------------------------------------------------
# recurrent cells
# ---------------------------------------------------------------------------

def test_lstm_step_zero_weights_zero_cell():
    cell = LSTM(2, 3, dtype=F64)
    state = lstm_step(np.zeros((1, 2)), LstmState(np.zeros((1, 3)), np.zeros((1, 3))),
                      cell)
    assert np.allclose(state.cell, 0.0)
    assert np.allclose(state.hidden, 0.0)


def test_lstm_step_zero_weights_carries_half_cell():
    cell = LSTM(2, 3, dtype=F64)
    prev = LstmState(np.zeros((1, 3)), np.full((1, 3), 2.0))
    state = lstm_step(np.zeros((1, 2)), prev, cell)
    assert np.allclose(state.cell, 1.0)  # forget gate 0.5 times cell 2.0
    assert np.allclose(state.hidden, 0.5 * math.tanh(1.0))
    assert np.allclose(state.hidden, 0.38079, atol=1e-5)


def test_lstm_gates_bounded():
    cell = LSTM(3, 4, dtype=F64)
    cell.init_params(np.random.default_rng(11))
    x = 100.0 * np.random.default_rng(12).standard_normal((5, 10, 3))
    hs = cell.forward(x)
    assert np.all(hs > -1.0) and np.all(hs < 1.0)


def test_rnn_hidden_bounded():
    rnn = RNN(2, 5, dtype=F64)
    rnn.init_params(np.random.default_rng(13))
    hs = rnn.forward(np.random.default_rng(14).standard_normal((3, 8, 2)))
    assert np.all(np.abs(hs) < 1.0)


# ---------------------------------------------------------------------------
# dense, softmax, cross-entropy
# ---------------------------------------------------------------------------

def test_dense_identity():
    dense = Dense(3, 3, dtype=F64)
    dense.weight[:] = np.eye(3)
    x = np.random.default_rng(15).standard_normal((4, 3))
    assert np.allclose(dense.forward(x), x)


def test_dense_hand_values():
    dense = Dense(2, 1, dtype=F64)
    dense.weight[:, 0] = [1.0, 1.0]
    dense.bias[0] = 0.5
    assert dense.forward(np.array([[1.0, 2.0]]))[0, 0] == pytest.approx(3.5)


def test_dense_linear_in_input():
    dense = Dense(4, 2, dtype=F64)
    dense.init_params(np.random.default_rng(16))
    dense.bias[:] = 0.0
    rng = np.random.default_rng(17)
    x, y = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    assert np.allclose(dense.forward(2.0 * x + y),
                       2.0 * dense.forward(x) + dense.forward(y), atol=1e-12)


def test_softmax_uniform():
    assert np.allclose(softmax(np.zeros((1, 3))), 1.0 / 3.0)


def test_softmax_shift_invariance():
    x = np.random.default_rng(18).standard_normal((4, 5))
    assert np.allclose(softmax(x), softmax(x + 100.0), atol=1e-12)


def test_softmax_extreme_logits_stable():
    out = softmax(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(1.0)


def test_softmax_rows_sum_to_one():
    x = 50.0 * np.random.default_rng(19).standard_normal((10, 7))
    assert np.allclose(softmax(x).sum(axis=1), 1.0, atol=1e-12)
    assert np.all(softmax(x) > 0.0)


def test_cross_entropy_perfect_prediction():
    targets = np.eye(3)
    assert cross_entropy(targets, targets) == pytest.approx(0.0, abs=1e-10)


def test_cross_entropy_uniform():
    probs = np.full((2, 3), 1.0 / 3.0)
    targets = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    assert cross_entropy(probs, targets) == pytest.approx(math.log(3.0), abs=1e-12)


def test_fused_softmax_ce_gradient_matches_finite_difference():
    rng = np.random.default_rng(20)
    logits = rng.standard_normal((4, 3))
    targets = np.eye(3)[rng.integers(0, 3, size=4)]
    probs = softmax(logits)
    analytic = softmax_cross_entropy_grad(probs, targets)
    eps = 1e-6
    for i in range(logits.shape[0]):
        for j in range(logits.shape[1]):
            hi, lo = logits.copy(), logits.copy()
            hi[i, j] += eps
            lo[i, j] -= eps
            numeric = (cross_entropy(softmax(hi), targets)
                       - cross_entropy(softmax(lo), targets)) / (2 * eps)
            assert analytic[i, j] == pytest.approx(numeric, abs=1e-8)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_first_step_hand_check():
    theta = np.array([1.0])
    state = adam_step([theta], [np.array([1.0])], AdamState(lr=0.001))
    assert theta[0] == pytest.approx(0.999, abs=1e-9)
    assert state.t == 1


def test_adam_zero_gradient_no_motion():
    theta = np.array([0.7, -0.3])
    before = theta.copy()
    adam_step([theta], [np.zeros(2)], AdamState())
    assert np.array_equal(theta, before)


def test_adam_constant_gradient_reaches_unit_step():
    theta = np.array([0.0])
    state = AdamState(lr=0.001)
    prev = theta[0]
    for _ in range(2000):
        prev = theta[0]
        adam_step([theta], [np.array([3.0])], state)
    assert prev - theta[0] == pytest.approx(0.001, rel=1e-3)  # lr * sign(g)


def test_adam_wrapper_matches_functional():
    rng = np.random.default_rng(21)
    p1 = rng.standard_normal(5)
    p2 = p1.copy()
    g = rng.standard_normal(5)
    opt = Adam([p1], lr=0.01)
    state = AdamState(lr=0.01)
    for _ in range(3):
        opt.step([g])
        adam_step([p2], [g], state)
    assert np.allclose(p1, p2, atol=1e-15)


# ---------------------------------------------------------------------------
# gradient checks, layer by layer
# ---------------------------------------------------------------------------

def _away_from_kinks(x, margin=0.15):
    x = np.asarray(x)
    x[np.abs(x) < margin] += 2 * margin
    return x


def test_gradcheck_dense():
    graph = _graph([Dense(4, 3, dtype=F64)])
    x = np.random.default_rng(22).standard_normal((3, 4))
    assert gradient_check(graph, x) < 1e-6


def test_gradcheck_conv_valid_and_same():
    for padding in ("valid", "same"):
        graph = _graph([Conv1D(2, 3, 3, padding=padding, dtype=F64)])
        x = np.random.default_rng(23).standard_normal((2, 8, 2))
        assert gradient_check(graph, x) < 1e-6


def test_gradcheck_adaptive_relu_including_slope():
    graph = _graph([Conv1D(1, 2, 3, padding="same", dtype=F64),
                    AdaptiveReLU(2, dtype=F64)])
    x = _away_from_kinks(np.random.default_rng(24).standard_normal((2, 9, 1)))
    assert gradient_check(graph, x) < 1e-6


def test_gradcheck_maxpool():
    graph = _graph([MaxPool1D(2)])
    x = np.random.default_rng(25).standard_normal((2, 8, 3))
    assert gradient_check(graph, x) < 1e-6


def test_gradcheck_lstm():
    graph = _graph([LSTM(2, 4, dtype=F64)])
    x = np.random.default_rng(26).standard_normal((2, 6, 2))
    assert gradient_check(graph, x) < 1e-5


def test_gradcheck_rnn_full_bptt():
    graph = _graph([RNN(2, 4, dtype=F64)])
    x = np.random.default_rng(27).standard_normal((2, 6, 2))
    assert gradient_check(graph, x) < 1e-5


def test_gradcheck_softmax_cross_entropy_head():
    graph = _graph([Dense(4, 3, dtype=F64), Softmax()])
    x = np.random.default_rng(28).standard_normal((5, 4))
    targets = np.eye(3)[np.random.default_rng(29).integers(0, 3, size=5)]
    assert gradient_check(graph, x, targets) < 1e-6


def test_gradcheck_full_sequence_chain():
    graph = _graph([
        Conv1D(1, 3, 3, padding="same", dtype=F64),
        AdaptiveReLU(3, dtype=F64),
        MaxPool1D(2),
        LSTM(3, 4, dtype=F64),
        Flatten(),
        Dense(4 * 8, 3, dtype=F64),
        Softmax(),
    ])
    x = _away_from_kinks(np.random.default_rng(30).standard_normal((2, 16, 1)))
    targets = np.eye(3)[np.random.default_rng(31).integers(0, 3, size=2)]
    assert gradient_check(graph, x, targets) < 1e-4


# ---------------------------------------------------------------------------
# model graph plumbing
# ---------------------------------------------------------------------------

def test_forward_is_deterministic():
    graph = _graph([Dense(3, 2, dtype=F64), Softmax()])
    x = np.random.default_rng(32).standard_normal((4, 3))
    assert np.array_equal(graph.forward(x), graph.forward(x))


def test_dropout_deterministic_given_seed():
    def run():
        graph = ModelGraph([Dense(3, 3, dtype=F64), Dropout(0.4)], dtype=F64)
        graph.init_params(np.random.default_rng(0))
        graph.set_rng(np.random.default_rng(99))
        x = np.random.default_rng(33).standard_normal((5, 3))
        return graph.forward(x, train=True)

    assert np.array_equal(run(), run())


def test_save_load_round_trip(tmp_path):
    graph = ModelGraph([
        Conv1D(1, 4, 3, padding="same"),
        AdaptiveReLU(4),
        MaxPool1D(2),
        LSTM(4, 5),
        Flatten(),
        Dense(5 * 4, 3),
        Softmax(),
    ])
    graph.init_params(np.random.default_rng(34))
    x = np.random.default_rng(35).standard_normal((2, 8, 1)).astype(np.float32)
    expected = graph.forward(x)

    prefix = str(tmp_path / "model")
    manifest_path, blob_path = graph.save(prefix)
    assert manifest_path.endswith(".json") and blob_path.endswith(".bin")
    loaded = ModelGraph.load(prefix)
    assert np.array_equal(loaded.forward(x), expected)
    for (na, a), (nb, b) in zip(graph.param_items(), loaded.param_items()):
        assert na == nb
        assert np.array_equal(a, b)


def test_blob_is_little_endian_float32(tmp_path):
    graph = ModelGraph([Dense(2, 2)], dtype=np.float32)
    graph.init_params(np.random.default_rng(36))
    prefix = str(tmp_path / "m")
    graph.save(prefix)
    raw = np.fromfile(prefix + ".bin", dtype="<f4")
    assert raw.size == 2 * 2 + 2
    assert np.allclose(raw[:4], graph.layers[0].weight.reshape(-1))
