import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from supergnn.errors import NonFinite, ShapeMismatch
from supergnn.numerics import autodiff as ad


def fd_check(build, arrays, h=1e-6, tol=1e-6):
    """Compare backward() against central differences for every input entry."""
    params = [ad.parameter(a) for a in arrays]
    grads = ad.backward(build(*params))
    for k, a in enumerate(arrays):
        fd = np.zeros_like(a)
        for idx in np.ndindex(*a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            fp = build(*[ad.constant(x) for x in plus]).value.item()
            fm = build(*[ad.constant(x) for x in minus]).value.item()
            fd[idx] = (fp - fm) / (2 * h)
        auto = grads.get(params[k], np.zeros_like(a))
        scale = max(1.0, np.abs(fd).max())
        assert np.abs(auto - fd).max() <= tol * scale, (k, auto, fd)


def weighted(node, rng_seed=7):
    w = np.random.default_rng(rng_seed).uniform(0.5, 1.5, node.shape)
    return ad.total(ad.mul(node, w))


def test_bce_gradient_at_zero_logit():
    z = ad.parameter([[0.0]])
    grads = ad.backward(ad.bce_with_logits(z, [[1.0]]))
    assert grads[z].item() == pytest.approx(-0.5)


def test_sum_gradient_is_ones():
    x = ad.parameter(np.arange(6.0).reshape(2, 3))
    grads = ad.backward(ad.total(x))
    np.testing.assert_array_equal(grads[x], np.ones((2, 3)))


def test_backward_needs_scalar():
    x = ad.parameter(np.ones((2, 2)))
    with pytest.raises(ShapeMismatch):
        ad.backward(x)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_nonfinite_gradient_raises():
    x = ad.parameter([[1.0]])
    loss = ad.total(ad.mul(x, np.array([[np.inf]])))
    with pytest.raises(NonFinite):
        ad.backward(loss)


def test_matmul_add_fd(rng):
    a, b, c = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal((1, 2))
    fd_check(lambda a, b, c: weighted(ad.add(ad.matmul(a, b), c)), [a, b, c])


def test_mul_scale_fd(rng):
    a, b = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    fd_check(lambda a, b: weighted(ad.scale(ad.mul(a, b), -1.7)), [a, b])


def test_nonlinearities_fd(rng):
    a = rng.standard_normal((4, 3))
    a[np.abs(a) < 0.05] = 0.3  # keep away from the kink
    fd_check(lambda a: weighted(ad.relu(a)), [a])
    fd_check(lambda a: weighted(ad.leaky_relu(a, 0.1)), [a])
    fd_check(lambda a: weighted(ad.sigmoid(a)), [a])


def test_sparse_and_gather_fd(rng):
    m = np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]])
    op = sp.csr_matrix(m)
    a = rng.standard_normal((3, 2))
    fd_check(lambda a: weighted(ad.spmm(op, a)), [a])
    idx = np.array([2, 0, 2, 1])
    fd_check(lambda a: weighted(ad.gather_rows(a, idx)), [a])
    fd_check(lambda a: weighted(ad.gather_rows(a, idx, ad.scatter_matrix(idx, 3))), [a])


def test_segment_ops_fd(rng):
    ptr = np.array([0, 2, 5, 6])
    a = rng.standard_normal((6, 3))
    fd_check(lambda a: weighted(ad.segment_sum(a, ptr)), [a])
    fd_check(lambda a: weighted(ad.segment_max(a, ptr)), [a])
    s = rng.standard_normal((6, 1))
    fd_check(lambda s: weighted(ad.segment_softmax(s, ptr)), [s])


def test_segment_max_ties_go_to_first():
    a = ad.parameter([[1.0], [1.0], [0.0]])
    grads = ad.backward(ad.total(ad.segment_max(a, np.array([0, 3]))))
    np.testing.assert_array_equal(grads[a], [[1.0], [0.0], [0.0]])


def test_edge_aggregate_fd(rng):
    src = np.array([1, 0, 2, 1, 2])
    dst = np.array([0, 1, 1, 2, 2])
    ptr = np.searchsorted(dst, np.arange(4))
    w = rng.uniform(0.1, 1.0, (5, 1))
    x = rng.standard_normal((3, 2))
    fd_check(lambda w, x: weighted(ad.edge_aggregate(w, x, src, ptr, dst)), [w, x])
    expected = np.zeros((3, 2))
    for e in range(5):
        expected[dst[e]] += w[e, 0] * x[src[e]]
    np.testing.assert_allclose(ad.edge_aggregate(w, x, src, ptr, dst).value, expected)


def test_power_ops_fd(rng):
    a = rng.standard_normal((4, 2))
    for p in (1.0, 2.0, 3.5):
        fd_check(lambda a: weighted(ad.signed_power(a, p, 1e-3)), [a])
        fd_check(lambda a: weighted(ad.signed_root(a, p, 1e-3)), [a], tol=1e-5)


def test_bce_fd(rng):
    z = rng.standard_normal((5, 3)) * 3
    y = (rng.random((5, 3)) > 0.5).astype(float)
    fd_check(lambda z: ad.bce_with_logits(z, y), [z])


def test_shared_node_accumulates():
    x = ad.parameter([[2.0]])
    grads = ad.backward(ad.total(ad.mul(x, x)))
    assert grads[x].item() == pytest.approx(4.0)


def test_backward_deterministic(rng):
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((4, 3))

    def run():
        pa, pb = ad.parameter(a), ad.parameter(b)
        g = ad.backward(weighted(ad.relu(ad.matmul(pa, pb))))
        return g[pa], g[pb]

    r1, r2 = run(), run()
    for x, y in zip(r1, r2):
        assert x.tobytes() == y.tobytes()


@given(st.lists(st.floats(-15, 15), min_size=1, max_size=8),
       st.lists(st.booleans(), min_size=8, max_size=8))
def test_bce_matches_naive(zs, ys):
    z = np.array(zs)[None, :]
    y = np.array(ys[: z.size], dtype=float)[None, :]
    got = ad.bce_with_logits(z, y).value.item()
    p = 1 / (1 + np.exp(-z))
    with np.errstate(divide="ignore"):
        naive = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    if np.isfinite(naive).all():
        assert got == pytest.approx(naive.mean(), rel=1e-7, abs=1e-9)
    assert np.isfinite(got)
