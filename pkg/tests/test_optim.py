import numpy as np
import pytest

from adaptgauge import autodiff as ad
from adaptgauge.autodiff import Value
from adaptgauge.nn import Dense, Module
from adaptgauge.optim import SGD, Adam, clip_grad_norm, make_optimizer


def _param(v):
    p = Value(np.array(v), requires_grad=True)
    return {"w": p}, p


def test_sgd_hand_example():
    params, w = _param([1.0])
    w.zero_grad()
    w.grad[:] = 2.0
    SGD(params, lr=0.1).step()
    assert np.allclose(w.data, 0.8)


def test_sgd_zero_gradient_no_change():
    params, w = _param([1.5, -2.0])
    w.zero_grad()
    SGD(params, lr=0.5).step()
    assert np.array_equal(w.data, np.array([1.5, -2.0]))


def test_adam_first_step_magnitude():
    # bias correction makes the first update lr * g/(|g| + eps): magnitude ~ lr
    for g in (3.0, -0.004, 1e3):
        params, w = _param([0.0])
        w.zero_grad()
        w.grad[:] = g
        Adam(params, lr=0.01).step()
        assert np.allclose(w.data, -0.01 * np.sign(g), atol=1e-4)


def test_adam_matches_reference_formula():
    rng = np.random.default_rng(0)
    params, w = _param(rng.normal(size=4))
    start = w.data.copy()
    adam = Adam(params, lr=0.05)
    m = np.zeros(4)
    v = np.zeros(4)
    ref = start.copy()
    for t in range(1, 6):
        g = rng.normal(size=4)
        w.zero_grad()
        w.grad[:] = g
        adam.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(w.data, ref, atol=1e-12)


def test_nonpositive_learning_rate_rejected():
    params, _ = _param([1.0])
    with pytest.raises(ValueError):
        SGD(params, lr=0.0)
    with pytest.raises(ValueError):
        Adam(params, lr=-1e-3)
    with pytest.raises(ValueError):
        make_optimizer("sgd", params, 0.0)


def test_unknown_optimizer_rejected():
    params, _ = _param([1.0])
    with pytest.raises(ValueError, match="unknown optimizer"):
        make_optimizer("rmsprop", params, 0.1)


def test_clip_grad_norm():
    params, w = _param([3.0, 4.0])
    w.zero_grad()
    w.grad[:] = [3.0, 4.0]  # norm 5
    norm = clip_grad_norm(params, 2.5)
    assert abs(norm - 5.0) < 1e-12
    assert np.allclose(np.linalg.norm(w.grad), 2.5)
    # under the limit: untouched
    w.grad[:] = [0.3, 0.4]
    clip_grad_norm(params, 2.5)
    assert np.allclose(w.grad, [0.3, 0.4])


def test_training_determinism_bit_identical():
    def train_once():
        rng = np.random.default_rng(42)

        class Net(Module):
            def __init__(self):
                super().__init__()
                self.d = self.add_child("d", Dense(rng, 3, 2))

        net = Net()
        opt = Adam(net.parameters(), lr=0.01)
        data_rng = np.random.default_rng(7)
        for _ in range(20):
            x = data_rng.normal(size=(4, 3))
            t = data_rng.normal(size=(4, 2))
            net.zero_grad()
            diff = net._children["d"](Value(x)) - Value(t)
            ad.mean_all(ad.mul(diff, diff)).backward()
            opt.step()
        return {k: p.data.tobytes() for k, p in net.parameters().items()}

    assert train_once() == train_once()
