"""Shared oracles for the test suite."""
import numpy as np

from tresdiag import numerics as nx
from tresdiag.model import forward_batch, loss_classification, loss_regression, loss_total, one_hot
from tresdiag.numerics import Rng, finite_diff_gradient, relative_error


def model_loss(model, values, labels, sizes, training=False, seed=0, record=False):
    rng = Rng(seed).child("dropout") if training else None
    res = forward_batch(model, values, training=training, rng=rng, record=record)
    cl = loss_classification(res.logits, one_hot(labels, model.arch.num_classes))
    re = loss_regression(res.size, sizes)
    return res.graph, loss_total(cl, re)


def model_gradient_error(model, values, labels, sizes, training=False) -> float:
    """Max relative error between taped and central-difference gradients over all weights."""
    graph, total = model_loss(model, values, labels, sizes, training, record=True)
    taped = nx.backward(graph, total)
    worst = 0.0
    for name, w in model.weights.items():
        def f(theta, name=name):
            saved = model.weights[name]
            model.weights[name] = theta
            try:
                return model_loss(model, values, labels, sizes, training)[1].item()
            finally:
                model.weights[name] = saved
        fd = finite_diff_gradient(f, w)
        worst = max(worst, relative_error(taped[name], fd))
    return worst


def random_batch(model, n=3, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n, model.arch.n_params, model.arch.n_times))
    labels = rng.integers(0, model.arch.num_classes, n)
    sizes = rng.uniform(0.05, 1.0, n)
    return values, labels, sizes


def rigged_model(k=2, n_params=6, n_times=20):
    """Pass-through trunk that only sees parameter ``k``; both heads read its time mean.

    Every convolution is the identity tap, the other parameters are scaled to
    ~1e-9 by the input normalization, the size output is relu(mean of row k)
    and the class logits are (+s, -s) of the same quantity.
    """
    from tresdiag.model import build_model, reduced_arch
    arch = reduced_arch(n_params=n_params, n_times=n_times, filters=1, dense_width=2,
                        positional_encoding=False)
    m = build_model(arch, Rng(0))
    for name, w in m.weights.items():
        w[...] = 0.0
        if name.endswith(".w") and w.ndim == 4:
            w[0, 0, 0, w.shape[3] // 2] = 1.0
    m.weights["dense.w"][k, 0] = 1.0
    m.weights["head_size.w"][0, 0] = 1.0
    m.weights["head_cls.w"][0] = [1.0, -1.0]
    std = np.full(n_params, 1e9)
    std[k] = 1.0
    return m.with_norm_stats(np.zeros(n_params), std)


def cases_for(model, n=10, seed=0, offset=0.5):
    from tresdiag.datagen import BreakSpec, TransientCase
    rng = np.random.default_rng(seed)
    shape = (model.arch.n_params, model.arch.n_times)
    return [TransientCase(rng.normal(offset, 1.0, size=shape), BreakSpec("cold_leg", 0.5), i, i,
                          model.channels) for i in range(n)]
