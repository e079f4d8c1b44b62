"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np


def fd_gradients(loss_fn, params, h=1e-5):
    """Numeric d(loss)/d(param) for every entry of every named parameter.

    loss_fn() must recompute the scalar loss from current parameter data.
    """
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric, floor=1e-3):
    worst = 0.0
    for name in analytic:
        a = analytic[name]
        n = numeric[name]
        rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(rel.max()))
    return worst


def check_model_gradients(model, loss_builder, h=1e-5, floor=1e-3):
    """Backward pass vs finite differences for every parameter of a module.

    loss_builder() must build the graph loss Value from scratch each call.
    """
    model.zero_grad()
    loss = loss_builder()
    loss.backward()
    analytic = {k: p.grad.copy() for k, p in model.parameters().items()}
    numeric = fd_gradients(lambda: float(loss_builder().data),
                           model.parameters(), h=h)
    return max_rel_error(analytic, numeric, floor=floor)
