"""Fixtures and oracles shared by the unit and acceptance suites."""

import numpy as np

from supergnn.graphgen import make_graph
from supergnn.model import forward_nodes
from supergnn.numerics import autodiff as ad


def random_graph(rng, n=6, dim=3, k=2, id=0):
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.4]
    return make_graph(n, pairs, rng.standard_normal((n, dim)), rng.integers(0, 2, k), id=id)


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def simplex(r):
    """r + 1 unit vectors in R^r with pairwise cosine -1/r."""
    e = np.eye(r + 1) - 1.0 / (r + 1)
    basis = np.linalg.svd(e)[2][:r]
    rows = e @ basis.T
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def model_fd_error(model, batch, targets, h=1e-5):
    """Worst per-parameter relative gap between backprop and central differences."""
    def loss_value():
        return ad.bce_with_logits(forward_nodes(model, batch)[2], targets).value.item()

    _, _, logits = forward_nodes(model, batch)
    grads = ad.backward(ad.bce_with_logits(logits, targets))
    worst = 0.0
    for node in model.params.values():
        auto = grads.get(node, np.zeros_like(node.value))
        fd = np.zeros_like(node.value)
        for idx in np.ndindex(*node.value.shape):
            orig = node.value[idx]
            node.value[idx] = orig + h
            fp = loss_value()
            node.value[idx] = orig - h
            fm = loss_value()
            node.value[idx] = orig
            fd[idx] = (fp - fm) / (2 * h)
        scale = max(np.abs(fd).max(), np.abs(auto).max(), 1e-3)
        worst = max(worst, float(np.abs(auto - fd).max() / scale))
    return worst
