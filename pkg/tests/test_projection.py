"""Tensor and difference projections against brute-force oracles."""

import numpy as np
import pytest

from thermtomo.polybasis import legendre_table
from thermtomo.sparsegrid import (
    CachedForward,
    ForwardEvaluationError,
    difference_projection,
    epsilon_norm,
    full_tensor_set,
    tensor_projection,
)


class PolyForward:
    """Vector-valued polynomial in the orthonormal multivariate basis."""

    def __init__(self, dim, keys, coeffs):
        self.dim = dim
        self.keys = list(keys)
        self.coeffs = np.asarray(coeffs, dtype=float)  # (M, len(keys))

    def max_degree(self):
        return max((g for key in self.keys for _, g in key), default=0)

    def __call__(self, theta):
        ladder = legendre_table(self.max_degree(), np.asarray(theta, dtype=float))
        feats = np.array(
            [np.prod([ladder[g, d] for d, g in key]) if key else 1.0 for key in self.keys]
        )
        return self.coeffs @ feats


def table_to_dense(table, keys):
    return np.array([table.get(k, np.zeros_like(next(iter(table.values())))) for k in keys])


def test_projection_order_zero_is_midpoint_value():
    f = lambda theta: np.array([2.0 + theta[0], -1.0])
    table = tensor_projection(f, (0, 0), dim=2, out_dim=2)
    assert set(table) == {()}
    assert table[()] == pytest.approx([2.0, -1.0])


def test_projection_is_identity_on_contained_polynomials():
    # F = L_j for every j in the tensor set: coefficient table is the indicator
    dim = 3
    k = (2, 1, 0)
    for j in full_tensor_set(k):
        f = PolyForward(dim, [j], np.array([[1.0]]))
        table = tensor_projection(f, k, dim=dim, out_dim=1)
        for i, coeff in table.items():
            expected = 1.0 if i == j else 0.0
            assert coeff[0] == pytest.approx(expected, abs=1e-12)


def test_projection_univariate_square():
    f = lambda theta: np.array([theta[0] ** 2])
    table = tensor_projection(f, (1,), dim=1, out_dim=1)
    assert set(table) == {(), ((0, 1),)}
    assert table[()][0] == pytest.approx(1.0 / 12.0, abs=1e-15)
    assert table[((0, 1),)][0] == pytest.approx(0.0, abs=1e-15)


def test_forward_invocation_count_and_cache():
    calls = []

    def f(theta):
        calls.append(tuple(theta))
        return np.array([np.exp(theta[0]) * (1 + theta[1])])

    cached = CachedForward(f, 2, 1)
    tensor_projection(cached, (2, 1))
    assert len(calls) == 3 * 2  # prod(k_n + 1)
    tensor_projection(cached, (2, 1))
    assert len(calls) == 6  # fully cached
    tensor_projection(cached, (2, 0))
    # the order-2 nodes in dim 0 are shared; only the origin-column is new
    assert len(calls) == 6 + 3


def test_forward_failure_reports_node():
    def f(theta):
        raise RuntimeError("solver blew up")

    with pytest.raises(ForwardEvaluationError) as err:
        tensor_projection(f, (1,), dim=1, out_dim=1)
    assert err.value.theta.shape == (1,)


def test_difference_projection_at_origin_equals_projection():
    f = lambda theta: np.array([np.cos(theta[0])])
    cached = CachedForward(f, 1, 1)
    p0 = tensor_projection(cached, ())
    diff = difference_projection((), {(): p0})
    assert diff.keys() == p0.keys()
    for key in p0:
        assert diff[key] == pytest.approx(p0[key])


def test_univariate_telescoping():
    # sum of difference projections up to k equals the order-k projection
    f = lambda theta: np.array([np.exp(2.0 * theta[0])])
    cached = CachedForward(f, 1, 1)
    projections = {}
    accum = {}
    for k in range(4):
        key = ((0, k),) if k else ()
        projections[key] = tensor_projection(cached, key)
        diff = difference_projection(key, projections)
        for i, c in diff.items():
            accum[i] = accum.get(i, 0.0) + c
    direct = tensor_projection(cached, ((0, 3),))
    assert set(accum) == set(direct)
    for i in direct:
        assert accum[i] == pytest.approx(direct[i], abs=1e-12)


def test_difference_projection_vanishes_on_resolved_polynomials():
    # if F lies in P_{k - e_n} for all active n, the difference is zero
    dim = 2
    f = PolyForward(dim, [(), ((0, 1),)], np.array([[0.5, 2.0]]))
    cached = CachedForward(f, dim, 1)
    keys = [(), ((0, 1),), ((1, 1),), ((0, 1), (1, 1)), ((0, 2),)]
    projections = {k: tensor_projection(cached, k) for k in keys}
    diff = difference_projection(((0, 2),), projections)
    assert epsilon_norm(diff) <= 1e-11
    diff = difference_projection(((0, 1), (1, 1)), projections)
    assert epsilon_norm(diff) <= 1e-11


def test_difference_projection_missing_prerequisite():
    f = lambda theta: np.array([theta[0]])
    cached = CachedForward(f, 1, 1)
    projections = {((0, 1),): tensor_projection(cached, ((0, 1),))}
    with pytest.raises(KeyError):
        difference_projection(((0, 1),), projections)


def test_epsilon_norm_values():
    zero = {(): np.zeros(3)}
    assert epsilon_norm(zero) == 0.0
    assert epsilon_norm({(): np.array([3.0])}) == 3.0
    assert epsilon_norm({(): np.array([3.0, 4.0])}) == pytest.approx(5.0)


def test_smolyak_consistency_full_tensor_vs_direct():
    # accumulating difference projections over a full tensor index set must
    # reproduce the direct full tensor projection (telescoping, N = 3)
    rng = np.random.default_rng(3)
    dim = 3
    f = lambda theta: np.array(
        [np.exp(0.7 * theta[0] - 0.3 * theta[1]) * np.cos(theta[2]), 1.0 / (2.0 + theta[0] * theta[1])]
    )
    cached = CachedForward(f, dim, 2)
    order = (2, 3, 1)
    kset = full_tensor_set(order)
    projections = {k: tensor_projection(cached, k) for k in kset}
    accum = {}
    for k in sorted(kset.keys(), key=lambda key: (len(key), key)):
        diff = difference_projection(k, projections)
        for i, c in diff.items():
            accum[i] = accum.get(i, 0.0) + c
    direct = tensor_projection(cached, order)
    assert set(accum) == set(direct)
    for i in direct:
        assert np.max(np.abs(accum[i] - direct[i])) <= 1e-10
