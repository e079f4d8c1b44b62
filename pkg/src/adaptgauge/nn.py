"""Network layers built on the autodiff kernel.

Layers own named parameters (insertion-ordered dict of name -> Value) so
checkpointing and optimizers can walk them deterministically.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Value


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal parameter container with a train/eval mode flag."""

    def __init__(self):
        self._params: dict[str, Value] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def register(self, name: str, data: np.ndarray) -> Value:
        p = Value(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = p
        return p

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def parameters(self) -> dict[str, Value]:
        out = dict(self._params)
        for cname, child in self._children.items():
            for pname, p in child.parameters().items():
                out[f"{cname}.{pname}"] = p
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def train(self):
        self.training = True
        for c in self._children.values():
            c.train()

    def eval(self):
        self.training = False
        for c in self._children.values():
            c.eval()

    def state_checksum(self) -> float:
        """Order-sensitive digest of all parameter values, for purity tests."""
        total = 0.0
        for i, (name, p) in enumerate(sorted(self.parameters().items())):
            total += (i + 1) * float(np.sum(p.data * np.arange(1, p.data.size + 1).reshape(p.data.shape)))
        return total


class Dense(Module):
    def __init__(self, rng, in_dim: int, out_dim: int):
        super().__init__()
        self.w = self.register("w", kaiming_uniform(rng, (in_dim, out_dim), in_dim))
        self.b = self.register("b", np.zeros(out_dim))

    def __call__(self, x: Value) -> Value:
        return ad.add(ad.matmul(x, self.w), self.b)


class Conv1d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int, stride: int = 1):
        super().__init__()
        fan_in = in_ch * kernel
        self.w = self.register("w", kaiming_uniform(rng, (out_ch, in_ch, kernel), fan_in))
        self.b = self.register("b", np.zeros(out_ch))
        self.stride = stride

    def __call__(self, x: Value) -> Value:
        return ad.conv1d(x, self.w, self.b, stride=self.stride)


class BatchNorm1d(Module):
    """Per-channel batchnorm with running statistics (momentum 0.9)."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.gamma = self.register("gamma", np.ones(channels))
        self.beta = self.register("beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Value) -> Value:
        axes = (0,) if x.data.ndim == 2 else (0, 2)
        if self.training:
            mean = x.data.mean(axis=axes)
            var = x.data.var(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
            return ad.batchnorm(x, self.gamma, self.beta, mean, var, self.eps, True)
        return ad.batchnorm(x, self.gamma, self.beta, self.running_mean,
                            self.running_var, self.eps, False)

    # Running stats are state, not parameters; expose them for checkpoints.
    def extra_state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_extra_state(self, state):
        self.running_mean = np.array(state["running_mean"], dtype=np.float64)
        self.running_var = np.array(state["running_var"], dtype=np.float64)


class LSTMCell(Module):
    """Single LSTM cell; gate order i, f, g, o along the 4H axis.

    Forget-gate bias starts at 1.0 to keep early memory open.
    """

    def __init__(self, rng, in_dim: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.wx = self.register("wx", kaiming_uniform(rng, (in_dim, 4 * hidden), in_dim))
        self.wh = self.register("wh", kaiming_uniform(rng, (hidden, 4 * hidden), hidden))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.b = self.register("b", bias)

    def __call__(self, x: Value, h: Value, c: Value) -> tuple[Value, Value]:
        z = ad.add(ad.add(ad.matmul(x, self.wx), ad.matmul(h, self.wh)), self.b)
        hd = self.hidden
        i = ad.sigmoid(ad.slice_cols(z, 0, hd))
        f = ad.sigmoid(ad.slice_cols(z, hd, 2 * hd))
        g = ad.tanh(ad.slice_cols(z, 2 * hd, 3 * hd))
        o = ad.sigmoid(ad.slice_cols(z, 3 * hd, 4 * hd))
        c_next = ad.add(ad.mul(f, c), ad.mul(i, g))
        h_next = ad.mul(o, ad.tanh(c_next))
        return h_next, c_next

    def zero_state(self, batch: int) -> tuple[Value, Value]:
        return (Value(np.zeros((batch, self.hidden))),
                Value(np.zeros((batch, self.hidden))))


def cross_entropy(logits: Value, labels: np.ndarray) -> Value:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    n, k = logits.data.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    logp = ad.log(ad.softmax(logits))
    return ad.scale(ad.sum_all(ad.mul(logp, Value(onehot))), -1.0 / n)


def l2_penalty(params: dict[str, Value], weight: float) -> Value:
    total = None
    for name, p in params.items():
        if name.endswith(".w") or name.endswith(".wx") or name.endswith(".wh"):
            term = ad.sum_all(ad.mul(p, p))
            total = term if total is None else ad.add(total, term)
    if total is None:
        return Value(0.0)
    return ad.scale(total, weight)
