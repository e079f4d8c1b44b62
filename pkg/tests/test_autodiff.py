import numpy as np
import pytest

from adaptgauge import autodiff as ad
from adaptgauge.autodiff import ShapeError, Value
from adaptgauge.nn import (BatchNorm1d, Conv1d, Dense, LSTMCell, Module,
                           cross_entropy)

from gradcheck import check_model_gradients, fd_gradients, max_rel_error


def test_matmul_identity():
    a = np.arange(9.0).reshape(3, 3) + 1
    out = ad.matmul(Value(np.eye(3)), Value(a))
    assert np.array_equal(out.data, a)


def test_softmax_symmetry():
    out = ad.softmax(Value(np.zeros((1, 4))))
    assert np.allclose(out.data, 0.25, atol=1e-15)


def test_softmax_rows_and_range():
    rng = np.random.default_rng(0)
    logits = rng.normal(0, 3, size=(50, 7))
    p = ad.softmax(Value(logits)).data
    assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12
    assert p.min() > 0.0 and p.max() < 1.0


def test_softmax_empty_axis_rejected():
    with pytest.raises(ShapeError):
        ad.softmax(Value(np.zeros((3, 0))))


def test_shape_mismatch_diagnostic_names_op():
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Value(np.zeros((2, 3))), Value(np.zeros((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(Value(np.zeros((2, 3))), Value(np.zeros((3, 2))))


def test_backward_sum_gives_ones():
    w = Value(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    ad.sum_all(w).backward()
    assert np.array_equal(w.grad, np.ones(3))


def test_backward_mse_at_optimum_is_zero():
    t = np.array([0.3, -0.7, 2.0])
    w = Value(t.copy(), requires_grad=True)
    diff = w - Value(t)
    ad.mean_all(ad.mul(diff, diff)).backward()
    assert np.allclose(w.grad, 0.0)


def test_backward_rejects_nonscalar():
    w = Value(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        ad.scale(w, 2.0).backward()


def test_repeated_backward_accumulates():
    w = Value(np.ones(4), requires_grad=True)
    ad.sum_all(w).backward()
    ad.sum_all(w).backward()
    assert np.array_equal(w.grad, 2 * np.ones(4))


def test_fanout_gradients_add():
    w = Value(np.array([2.0]), requires_grad=True)
    out = ad.add(ad.mul(w, w), ad.scale(w, 3.0))  # w^2 + 3w -> 2w + 3 = 7
    ad.sum_all(out).backward()
    assert np.allclose(w.grad, 7.0)


def test_grad_reversal_exact():
    x = Value(np.random.default_rng(1).normal(size=(4, 5)), requires_grad=True)
    lam = 0.7
    out = ad.grad_reversal(x, lam)
    assert out.data.tobytes() == x.data.tobytes()
    upstream = np.random.default_rng(2).normal(size=(4, 5))
    loss = ad.sum_all(ad.mul(out, Value(upstream)))
    loss.backward()
    assert np.array_equal(x.grad, -lam * upstream)


def test_log_floor_handles_zero():
    out = ad.log(Value(np.array([[0.0, 1.0]])))
    assert np.isfinite(out.data).all()
    assert out.data[0, 1] == 0.0


def test_two_layer_relu_l1_gradcheck():
    # random 2-layer network with relu and L1 loss vs finite differences
    rng = np.random.default_rng(3)

    class Net(Module):
        def __init__(self):
            super().__init__()
            self.a = self.add_child("a", Dense(rng, 5, 6))
            self.b = self.add_child("b", Dense(rng, 6, 2))

        def __call__(self, x):
            return self.b(ad.relu(self.a(x)))

    net = Net()
    x = rng.normal(size=(4, 5))
    t = rng.normal(size=(4, 2))

    def build():
        return ad.mean_all(ad.absolute(net(Value(x)) - Value(t)))

    assert check_model_gradients(net, build) < 1e-4


def test_conv1d_gradcheck_matches_spec_example():
    # random 2-channel length-16 input, h=1e-5 central differences
    rng = np.random.default_rng(4)
    conv = Conv1d(rng, 2, 3, 5, stride=1)
    x = Value(rng.normal(size=(2, 2, 16)), requires_grad=True)

    def build():
        return ad.mean_all(ad.mul(conv(x), conv(x)))

    assert check_model_gradients(conv, build, h=1e-5) < 1e-4
    # input gradient too
    conv.zero_grad()
    x.grad = None
    loss = ad.mean_all(ad.mul(conv(x), conv(x)))
    loss.backward()
    numeric = fd_gradients(
        lambda: float(ad.mean_all(ad.mul(conv(x), conv(x))).data), {"x": x})
    assert max_rel_error({"x": x.grad}, numeric) < 1e-4


def test_batchnorm_train_vs_eval():
    rng = np.random.default_rng(5)
    bn = BatchNorm1d(3)
    x = rng.normal(2.0, 3.0, size=(16, 3, 10))
    bn.train()
    out = bn(Value(x)).data
    assert abs(out.mean()) < 1e-9 and abs(out.std() - 1.0) < 1e-2
    # eval mode uses running stats and must not mutate them
    bn.eval()
    before = bn.running_mean.copy()
    bn(Value(x))
    assert np.array_equal(bn.running_mean, before)


def test_lstm_state_shapes_and_gradcheck():
    rng = np.random.default_rng(6)
    cell = LSTMCell(rng, 3, 4)
    assert cell.b.data[4:8].tolist() == [1.0] * 4  # forget-gate bias
    x = rng.normal(size=(2, 3))

    def build():
        h, c = cell.zero_state(2)
        h, c = cell(Value(x), h, c)
        h, c = cell(Value(0.5 * x), h, c)
        return ad.sum_all(ad.mul(h, h))

    assert check_model_gradients(cell, build) < 1e-4


def test_cross_entropy_uniform():
    logits = Value(np.zeros((4, 5)))
    loss = cross_entropy(logits, np.array([0, 1, 2, 3]))
    assert abs(float(loss.data) - np.log(5.0)) < 1e-12


@pytest.mark.parametrize("op_name", ["tile_cols", "concat_rows", "slice_cols",
                                     "mean_axis0", "tanh", "sigmoid"])
def test_misc_op_gradcheck(op_name):
    rng = np.random.default_rng(hash(op_name) % 2 ** 31)
    x = Value(rng.normal(size=(3, 4)), requires_grad=True)
    y = Value(rng.normal(size=(3, 4)), requires_grad=True)

    def apply():
        if op_name == "tile_cols":
            return ad.tile_cols(x, 3)
        if op_name == "concat_rows":
            return ad.concat_rows(x, y)
        if op_name == "slice_cols":
            return ad.slice_cols(x, 1, 3)
        if op_name == "mean_axis0":
            out = ad.mean_axis0(x)
            return ad.reshape(out, (1, out.data.size))
        return getattr(ad, op_name)(x)

    weights = np.random.default_rng(0).normal(size=apply().data.shape)

    def build():
        return ad.sum_all(ad.mul(apply(), Value(weights)))

    x.grad = None
    y.grad = None
    loss = build()
    loss.backward()
    analytic = {"x": x.grad.copy()}
    numeric = fd_gradients(lambda: float(build().data), {"x": x})
    assert max_rel_error(analytic, numeric) < 1e-4
