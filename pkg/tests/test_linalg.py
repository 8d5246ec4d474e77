import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from supergnn.errors import NonFinite
from supergnn.numerics import as_tensor, singular_values, svd


def _check_invariants(a, res):
    scale = max(1.0, np.linalg.norm(a))
    assert np.all(np.diff(res.sigma) <= 1e-12 * scale)
    assert np.all(res.sigma >= 0)
    assert np.linalg.norm(a - res.reconstruct()) <= 1e-10 * scale
    k = res.sigma.size
    assert np.abs(res.u.T @ res.u - np.eye(k)).max() <= 1e-10
    assert np.abs(res.v.T @ res.v - np.eye(k)).max() <= 1e-10


def test_identity():
    np.testing.assert_allclose(svd(np.eye(3)).sigma, [1, 1, 1], atol=1e-15)


def test_diagonal_with_zero():
    res = svd(np.diag([3.0, 0.0]))
    np.testing.assert_allclose(res.sigma, [3.0, 0.0], atol=1e-15)
    _check_invariants(np.diag([3.0, 0.0]), res)


def test_random_50x8_against_gram_eigenvalues(rng):
    a = rng.standard_normal((50, 8))
    oracle = np.sqrt(np.clip(np.linalg.eigvalsh(a.T @ a), 0, None))[::-1]
    assert np.abs(singular_values(a) - oracle).max() <= 1e-8


@pytest.mark.parametrize("shape", [(1, 1), (1, 5), (5, 1), (7, 3), (3, 7), (64, 64), (512, 64)])
def test_invariants_by_shape(rng, shape):
    a = rng.standard_normal(shape)
    _check_invariants(a, svd(a))


def test_rank_deficient_completes_basis(rng):
    a = rng.standard_normal((20, 3)) @ rng.standard_normal((3, 6))
    res = svd(a)
    _check_invariants(a, res)
    assert res.sigma[3:].max() <= 1e-12 * res.sigma[0]


def test_zero_matrix():
    res = svd(np.zeros((4, 3)))
    assert np.all(res.sigma == 0)
    _check_invariants(np.zeros((4, 3)), res)


def test_non_finite_rejected():
    with pytest.raises(NonFinite):
        svd(np.array([[1.0, np.nan]]))
    with pytest.raises(NonFinite):
        as_tensor([[np.inf]])


def test_deterministic(rng):
    a = rng.standard_normal((30, 6))
    r1, r2 = svd(a), svd(a.copy())
    assert r1.sigma.tobytes() == r2.sigma.tobytes()
    assert r1.u.tobytes() == r2.u.tobytes()


@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_property_reconstruction(a):
    _check_invariants(a, svd(a))


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
              elements=st.floats(-1.0, 1.0, allow_nan=False)),
       st.integers(-150, 150))
def test_property_extreme_scales(a, exponent):
    a = a * 10.0 ** exponent
    res = svd(a)
    scale = np.linalg.norm(a)
    assert np.linalg.norm(a - res.reconstruct()) <= 1e-10 * max(scale, np.finfo(float).tiny)
    k = res.sigma.size
    assert np.abs(res.v.T @ res.v - np.eye(k)).max() <= 1e-10
