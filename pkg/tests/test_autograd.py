import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwe import autograd as ag
from bwe.autograd import checkpoint as ckpt
from bwe.autograd import AutogradError, Parameter, RunningStats, Tape, Tensor

from gradcheck import check, numeric_grad, rand_tensor, relative_error

TOL = 1e-4


def conv_reference(x, w, b, stride):
    """Nested-loop cross-correlation with the documented padding rule."""
    batch, in_ch, length = x.shape
    out_ch, _, k = w.shape
    out_len = -(-length // stride)
    total = max(0, (out_len - 1) * stride + k - length)
    left = (total + 1) // 2
    y = np.zeros((batch, out_ch, out_len))
    for n in range(batch):
        for o in range(out_ch):
            for t in range(out_len):
                acc = b[o] if b is not None else 0.0
                for c in range(in_ch):
                    for j in range(k):
                        pos = t * stride + j - left
                        if 0 <= pos < length:
                            acc += w[o, c, j] * x[n, c, pos]
                y[n, o, t] = acc
    return y


# -- conv1d --

def test_conv_identity_kernel():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 11)))
    w = Tensor(np.eye(3)[:, :, None])
    b = Tensor(np.zeros(3))
    np.testing.assert_array_equal(ag.conv1d(x, w, b).data, x.data)


def test_conv_hand_example():
    x = Tensor(np.array([[[1.0, 2, 3, 4]]]))
    w = Tensor(np.ones((1, 1, 3)))
    np.testing.assert_allclose(ag.conv1d(x, w, stride=1).data, [[[3, 6, 9, 7]]])


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("k", [1, 3, 5, 7, 9])
def test_conv_shape_contract(stride, k):
    rng = np.random.default_rng(k)
    for length in range(1, 65):
        x = Tensor(rng.standard_normal((1, 2, length)))
        w = Tensor(rng.standard_normal((3, 2, k)))
        assert ag.conv1d(x, w, stride=stride).shape == (1, 3, -(-length // stride))


@pytest.mark.parametrize("stride,k,length", [(1, 3, 9), (1, 5, 4), (2, 4, 9), (2, 9, 16), (2, 3, 7), (2, 1, 5)])
def test_conv_matches_nested_loops(stride, k, length):
    rng = np.random.default_rng(stride * 100 + k)
    x = rng.standard_normal((2, 3, length))
    w = rng.standard_normal((4, 3, k))
    b = rng.standard_normal(4)
    got = ag.conv1d(Tensor(x), Tensor(w), Tensor(b), stride).data
    np.testing.assert_allclose(got, conv_reference(x, w, b, stride), rtol=1e-12, atol=1e-12)


def test_stride2_padding_is_left_heavy():
    assert ag.same_padding(16, 9, 2) == (4, 3)
    assert ag.same_padding(16, 4, 2) == (1, 1)
    assert ag.same_padding(17, 4, 2) == (2, 1)
    assert ag.same_padding(10, 1, 2) == (0, 0)


@pytest.mark.parametrize("stride,k", [(1, 1), (1, 3), (1, 7), (2, 2), (2, 5), (2, 9)])
def test_conv_gradients(stride, k):
    rng = np.random.default_rng(k + 10 * stride)
    x = rand_tensor(rng, 2, 3, 13)
    w = rand_tensor(rng, 4, 3, k)
    b = rand_tensor(rng, 4)
    assert check(lambda: ag.conv1d(x, w, b, stride), [x, w, b]) < TOL


def test_conv_errors():
    x = Tensor(np.zeros((1, 2, 8)))
    with pytest.raises(AutogradError):
        ag.conv1d(x, Tensor(np.zeros((1, 3, 3))))
    with pytest.raises(AutogradError):
        ag.conv1d(x, Tensor(np.zeros((1, 2, 3))), stride=3)
    with pytest.raises(AutogradError):
        ag.conv1d(x, Tensor(np.zeros((1, 2, 4))), stride=1)


# -- sub-pixel shuffle --

def test_subpixel_example():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    x = Tensor(np.array([[[a, b], [c, d]]]))
    np.testing.assert_array_equal(ag.subpixel_shuffle(x).data, [[[a, c, b, d]]])


def test_subpixel_rejects_odd_channels():
    with pytest.raises(AutogradError):
        ag.subpixel_shuffle(Tensor(np.zeros((1, 3, 4))))


@settings(max_examples=50, deadline=None)
@given(batch=st.integers(1, 3), half_ch=st.integers(1, 4), length=st.integers(1, 17))
def test_subpixel_inverse_and_norm(batch, half_ch, length):
    x = Tensor(np.random.default_rng(length).standard_normal((batch, 2 * half_ch, length)))
    y = ag.subpixel_shuffle(x)
    assert y.shape == (batch, half_ch, 2 * length)
    np.testing.assert_array_equal(ag.space_to_channel(y).data, x.data)
    assert np.sort(y.data.ravel()).tolist() == np.sort(x.data.ravel()).tolist()
    assert np.linalg.norm(y.data) == pytest.approx(np.linalg.norm(x.data), rel=1e-14)


def test_subpixel_gradients():
    rng = np.random.default_rng(5)
    x = rand_tensor(rng, 2, 6, 5)
    assert check(lambda: ag.subpixel_shuffle(x), [x]) < TOL
    y = rand_tensor(rng, 2, 3, 8)
    assert check(lambda: ag.space_to_channel(y), [y]) < TOL


# -- relu --

def test_relu_values():
    np.testing.assert_array_equal(ag.relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0, 0, 2])
    x = np.array([0.5, 1.0, 3.0])
    np.testing.assert_array_equal(ag.relu(Tensor(x)).data, x)


def test_relu_gradient_mask():
    rng = np.random.default_rng(6)
    x = rand_tensor(rng, 2, 3, 10, away_from_zero=True)
    assert check(lambda: ag.relu(x), [x]) < TOL
    x.grad = None
    with Tape() as tape:
        loss = ag.tensor_sum(ag.relu(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, (x.data > 0).astype(float))


# -- batch norm --

def _bn_inputs(rng, ch=3):
    x = Tensor(rng.standard_normal((4, ch, 9)) * 3 + 1.5)
    return x, Tensor(np.ones(ch)), Tensor(np.zeros(ch))


def test_batch_norm_training_statistics():
    x, g, b = _bn_inputs(np.random.default_rng(7))
    y = ag.batch_norm(x, g, b, RunningStats.zeros(3, np.float64), training=True).data
    np.testing.assert_allclose(y.mean(axis=(0, 2)), 0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 2)), 1, atol=1e-5 + 1e-4)


def test_batch_norm_eval_identity():
    x, g, b = _bn_inputs(np.random.default_rng(8))
    stats = RunningStats(np.zeros(3), np.ones(3), updates=1)
    y = ag.batch_norm(x, g, b, stats, training=False).data
    np.testing.assert_allclose(y, x.data / np.sqrt(1 + 1e-5), rtol=1e-12)
    np.testing.assert_allclose(y, x.data, rtol=1e-5)


def test_batch_norm_running_stats_momentum():
    x, g, b = _bn_inputs(np.random.default_rng(9))
    stats = RunningStats.zeros(3, np.float64)
    ag.batch_norm(x, g, b, stats, training=True)
    n = 4 * 9
    np.testing.assert_allclose(stats.mean, 0.1 * x.data.mean(axis=(0, 2)))
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.data.var(axis=(0, 2)) * n / (n - 1))
    assert stats.updates == 1


def test_batch_norm_eval_with_initial_stats():
    x, g, b = _bn_inputs(np.random.default_rng(10))
    y = ag.batch_norm(x, g, b, RunningStats.zeros(3, np.float64), training=False).data
    expected = x.data / np.sqrt(1 + 1e-5) * g.data[None, :, None] + b.data[None, :, None]
    np.testing.assert_allclose(y, expected, rtol=1e-12)


def test_batch_norm_errors():
    x, g, b = _bn_inputs(np.random.default_rng(10))
    with pytest.raises(AutogradError):
        ag.batch_norm(x, Tensor(np.ones(2)), b, RunningStats.zeros(3), training=False)
    single = Tensor(np.ones((1, 3, 1)))
    with pytest.raises(AutogradError):
        ag.batch_norm(single, g, b, RunningStats.zeros(3), training=True)


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradients(training):
    rng = np.random.default_rng(11)
    x = rand_tensor(rng, 3, 2, 5)
    gamma = rand_tensor(rng, 2)
    beta = rand_tensor(rng, 2)
    stats = RunningStats(rng.standard_normal(2), rng.uniform(0.5, 2, 2), updates=3)

    def run():
        # fresh copy so finite differences do not drift the running stats
        s = RunningStats(stats.mean.copy(), stats.var.copy(), stats.updates)
        return ag.batch_norm(x, gamma, beta, s, training)

    assert check(run, [x, gamma, beta]) < TOL


# -- dropout --

def test_dropout_eval_and_p0_are_identity():
    x = Tensor(np.random.default_rng(12).standard_normal((2, 3, 50)))
    rng = np.random.default_rng(0)
    assert ag.dropout(x, 0.5, training=False, rng=rng).data is x.data
    np.testing.assert_array_equal(ag.dropout(x, 0.0, training=True, rng=rng).data, x.data)
    np.testing.assert_array_equal(ag.dropout(x, 0.0, training=False, rng=rng).data, x.data)


def test_dropout_monte_carlo():
    x = Tensor(np.random.default_rng(13).uniform(0.5, 1.5, (1, 1, 10 ** 6)))
    y = ag.dropout(x, 0.5, training=True, rng=np.random.default_rng(14)).data
    survived = np.mean(y != 0)
    assert abs(survived - 0.5) <= 0.002
    assert y.mean() == pytest.approx(x.data.mean(), rel=0.01)
    np.testing.assert_allclose(y[y != 0], 2 * x.data[y != 0])


def test_dropout_fixed_mask_gradient():
    x = rand_tensor(np.random.default_rng(15), 2, 3, 7)
    assert check(lambda: ag.dropout(x, 0.5, True, np.random.default_rng(99)), [x]) < TOL


def test_dropout_rejects_bad_probability():
    x = Tensor(np.zeros((1, 1, 4)))
    for p in (-0.1, 1.0):
        with pytest.raises(AutogradError):
            ag.dropout(x, p, True, np.random.default_rng(0))


# -- mse --

def test_mse_values():
    a = Tensor(np.array([[[1.0, 1.0]]]))
    assert ag.mse_loss(a, a).item() == 0.0
    assert ag.mse_loss(a, Tensor(np.zeros((1, 1, 2)))).item() == 1.0
    with pytest.raises(AutogradError):
        ag.mse_loss(a, Tensor(np.zeros((1, 1, 3))))


def test_mse_gradient():
    rng = np.random.default_rng(16)
    p, t = rand_tensor(rng, 2, 2, 6), rand_tensor(rng, 2, 2, 6)
    with Tape() as tape:
        loss = ag.mse_loss(p, t)
    p.requires_grad = True
    with Tape() as tape:
        loss = ag.mse_loss(p, t)
    tape.backward(loss)
    num = numeric_grad(lambda: ag.mse_loss(p, t).item(), p)
    assert relative_error(p.grad, num) < 1e-6
    np.testing.assert_allclose(p.grad, 2 * (p.data - t.data) / p.size)


# -- backward semantics --

def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(17).standard_normal((2, 3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = ag.tensor_sum(x)
    ag.backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


def test_fan_out_accumulates():
    rng = np.random.default_rng(18)
    x = rand_tensor(rng, 1, 2, 9)
    w = rand_tensor(rng, 2, 2, 3)
    assert check(lambda: ag.add(ag.relu(ag.conv1d(x, w)), x), [x, w]) < TOL
    # grad is the sum of both paths
    x.grad = w.grad = None
    with Tape() as tape:
        y = ag.relu(ag.conv1d(x, w))
        loss = ag.tensor_sum(ag.add(y, x))
    tape.backward(loss)
    x_only = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape2:
        loss2 = ag.tensor_sum(ag.relu(ag.conv1d(x_only, Tensor(w.data))))
    tape2.backward(loss2)
    np.testing.assert_allclose(x.grad, x_only.grad + 1.0)


def test_disconnected_parameter_keeps_zero_gradient():
    used = Parameter("used", np.ones((1, 1, 1)), np.float64)
    unused = Parameter("unused", np.ones((1, 1, 1)), np.float64)
    used.zero_grad()
    unused.zero_grad()
    x = Tensor(np.ones((1, 1, 4)))
    with Tape() as tape:
        loss = ag.tensor_sum(ag.conv1d(x, used.tensor))
    tape.backward(loss)
    assert used.grad.item() == 4.0
    assert unused.grad.item() == 0.0


def test_backward_errors():
    x = Tensor(np.ones((1, 1, 3)), requires_grad=True)
    with Tape() as tape:
        y = ag.scale(x, 2.0)
    with pytest.raises(AutogradError):
        tape.backward(y)
    with Tape() as tape:
        loss = ag.tensor_sum(x)
    tape.backward(loss)
    with pytest.raises(AutogradError):
        tape.backward(loss)
    tape.reset()
    with tape:
        loss = ag.tensor_sum(x)
    tape.backward(loss)


def test_tape_visits_each_node_once():
    x = Tensor(np.ones((1, 2, 4)), requires_grad=True)
    calls = []
    with Tape() as tape:
        h = ag.relu(x)
        loss = ag.tensor_sum(ag.add(h, h))
    for node in tape.nodes:
        fn = node.backward_fn
        node.backward_fn = (lambda f, op: lambda g: (calls.append(op), f(g))[1])(fn, node.op)
    tape.backward(loss)
    assert sorted(calls) == sorted(n.op for n in tape.nodes)
    np.testing.assert_array_equal(x.grad, 2 * np.ones((1, 2, 4)))


def test_no_tape_means_no_recording():
    x = Tensor(np.ones((1, 1, 3)), requires_grad=True)
    y = ag.relu(x)
    assert not y.requires_grad


# -- Adam --

def test_adam_first_step():
    p = Parameter("p", np.array([0.3]), np.float64)
    p.tensor.grad = np.array([1.0])
    ag.adam_step([p], lr=5e-4)
    assert p.data[0] - 0.3 == pytest.approx(-5e-4, abs=1e-9)
    assert p.step_count == 1


def test_adam_zero_gradient_leaves_parameter():
    p = Parameter("p", np.array([0.3, -1.0]), np.float64)
    p.zero_grad()
    ag.adam_step([p], lr=5e-4)
    np.testing.assert_array_equal(p.data, [0.3, -1.0])


def test_adam_two_step_trace():
    lr, b1, b2, eps, g = 5e-4, 0.9, 0.999, 1e-8, 0.25
    theta, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    p = Parameter("p", np.array([1.0]), np.float64)
    for _ in range(2):
        p.tensor.grad = np.array([g])
        ag.adam_step([p], lr, b1, b2, eps)
    assert p.data[0] == theta


def test_adam_requires_gradients():
    with pytest.raises(AutogradError):
        ag.adam_step([Parameter("p", np.zeros(2))], lr=1e-3)


# -- checkpoint format --

def _params(rng):
    ps = [Parameter("a.weight", rng.standard_normal((2, 3, 4))), Parameter("a.bias", rng.standard_normal(2))]
    for p in ps:
        p.adam_m[...] = rng.standard_normal(p.shape)
        p.adam_v[...] = rng.uniform(0, 1, p.shape)
        p.step_count = 7
    return ps


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(19)
    ps = _params(rng)
    path = tmp_path / "p.bin"
    ckpt.save_parameters(path, ps, {"bn.mean": np.arange(3.0)}, {"note": "x"})
    data = ckpt.load_file(path)
    fresh = _params(np.random.default_rng(20))
    ckpt.restore_parameters(fresh, data)
    for a, b in zip(ps, fresh):
        np.testing.assert_array_equal(a.data, b.data)
        np.testing.assert_array_equal(a.adam_m, b.adam_m)
        np.testing.assert_array_equal(a.adam_v, b.adam_v)
        assert b.step_count == 7
    assert data.meta == {"note": "x"}
    np.testing.assert_array_equal(data.by_name()["bn.mean"].values, np.arange(3.0))


def test_checkpoint_header_layout(tmp_path):
    path = tmp_path / "p.bin"
    ckpt.save_parameters(path, _params(np.random.default_rng(21)))
    raw = path.read_bytes()
    assert raw[:4] == b"BWEC"
    assert struct.unpack("<II", raw[4:12]) == (ckpt.FORMAT_VERSION, 2)
    (name_len,) = struct.unpack("<I", raw[12:16])
    assert raw[16:16 + name_len] == b"a.weight"


def test_checkpoint_truncated_and_version_errors(tmp_path):
    path = tmp_path / "p.bin"
    ckpt.save_parameters(path, _params(np.random.default_rng(22)))
    raw = path.read_bytes()
    with pytest.raises(ckpt.CheckpointError, match="truncated"):
        ckpt.decode(raw[:-30])
    bad = raw[:4] + struct.pack("<I", 99) + raw[8:]
    with pytest.raises(ckpt.CheckpointError, match="version"):
        ckpt.decode(bad)
    with pytest.raises(ckpt.CheckpointError, match="magic"):
        ckpt.decode(b"XXXX" + raw[4:])
