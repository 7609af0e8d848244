import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ecan.errors import ContractError, InsufficientDataError
from ecan.kernels import (
    KernelSpec,
    default_spec,
    gram,
    ladder_spec,
    median_bandwidth,
    multi_kernel_eval,
    multi_kernel_grad,
    pair_grad,
)

from oracles import central_diff, k_loop


def random_spec(rng, d=None):
    d = d or int(rng.integers(1, 6))
    w = rng.uniform(0.1, 1.0, d)
    w /= w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return KernelSpec(tuple(rng.uniform(0.3, 3.0, d)), tuple(w))


def test_identity_is_one():
    spec = KernelSpec((0.5, 1.0, 2.0), (0.2, 0.3, 0.5))
    x = np.array([0.3, -1.2, 4.0])
    assert multi_kernel_eval(x, x, spec) == 1.0


def test_single_kernel_closed_form():
    # ||x - y||^2 = 2
    assert multi_kernel_eval([1.0, 1.0], [0.0, 0.0], KernelSpec.single(1.0)) == pytest.approx(
        math.exp(-1), rel=1e-15)
    assert multi_kernel_eval([1.0, 1.0], [0.0, 0.0], KernelSpec.single(1.0)) == pytest.approx(0.367879, abs=1e-6)


def test_two_kernel_mixture_closed_form():
    spec = KernelSpec((1.0, 2.0), (0.5, 0.5))
    v = multi_kernel_eval([2.0], [0.0], spec)
    assert v == pytest.approx(0.5 * math.exp(-2) + 0.5 * math.exp(-0.5), rel=1e-15)
    assert v == pytest.approx(0.370933, abs=1e-6)


def test_grad_closed_form():
    g = multi_kernel_grad([2.0], [0.0], KernelSpec.single(1.0))
    assert g[0] == pytest.approx(-2 * math.exp(-2), rel=1e-15)
    assert g[0] == pytest.approx(-0.270671, abs=1e-6)


def test_grad_zero_at_identity():
    spec = KernelSpec((0.5, 2.0), (0.5, 0.5))
    assert np.array_equal(multi_kernel_grad([1.0, 2.0], [1.0, 2.0], spec), np.zeros(2))


def test_grad_matches_finite_differences(rng):
    for _ in range(100):
        D = int(rng.integers(1, 6))
        spec = random_spec(rng)
        x, y = rng.normal(size=D), rng.normal(size=D)
        fd = central_diff(lambda z: multi_kernel_eval(z, y, spec), x, h=1e-5)
        an = multi_kernel_grad(x, y, spec)
        assert np.linalg.norm(an - fd) / np.linalg.norm(an) <= 1e-7


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-5, 5)), arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_symmetry_bounds_antisymmetry(x, y):
    spec = KernelSpec((0.5, 1.0, 3.0), (0.25, 0.25, 0.5))
    kxy = multi_kernel_eval(x, y, spec)
    assert kxy == multi_kernel_eval(y, x, spec)
    assert 0.0 < kxy <= 1.0
    if not np.array_equal(x, y) and np.sum((x - y) ** 2) > 1e-12:
        assert kxy < 1.0
    np.testing.assert_array_equal(multi_kernel_grad(x, y, spec), -multi_kernel_grad(y, x, spec))


def test_matches_loop_oracle(rng):
    spec = random_spec(rng, 3)
    for _ in range(20):
        x, y = rng.normal(size=4), rng.normal(size=4)
        assert multi_kernel_eval(x, y, spec) == pytest.approx(
            k_loop(x, y, spec.bandwidths, spec.weights), rel=1e-14)


def test_gram_and_pair_grad_agree_with_pointwise(rng):
    spec = random_spec(rng, 2)
    X, Y = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    K = gram(X, Y, spec)
    W = rng.uniform(size=(5, 4))
    G = pair_grad(X, Y, W, spec)
    for i in range(5):
        expect = sum(W[i, j] * multi_kernel_grad(X[i], Y[j], spec) for j in range(4))
        np.testing.assert_allclose(G[i], expect, rtol=1e-12, atol=1e-15)
        for j in range(4):
            assert K[i, j] == pytest.approx(multi_kernel_eval(X[i], Y[j], spec), rel=1e-14)


@pytest.mark.parametrize(
    "bad",
    [
        dict(bandwidths=(1.0,), weights=(0.5,)),
        dict(bandwidths=(0.0,), weights=(1.0,)),
        dict(bandwidths=(1.0, 2.0), weights=(1.2, -0.2)),
        dict(bandwidths=(1.0, 2.0), weights=(1.0,)),
        dict(bandwidths=(), weights=()),
    ],
)
def test_invalid_spec_rejected(bad):
    with pytest.raises(ContractError):
        KernelSpec(**bad)


def test_dimension_mismatch():
    with pytest.raises(ContractError):
        multi_kernel_eval([1.0, 2.0], [1.0], KernelSpec.single(1.0))
    with pytest.raises(ContractError):
        multi_kernel_grad([1.0, 2.0], [1.0], KernelSpec.single(1.0))


def test_median_bandwidth_examples():
    # pairs of {0, 2}: {4} -> 2 sigma^2 = 4
    assert median_bandwidth([[0.0], [2.0]]) == pytest.approx(math.sqrt(2))
    # pairs of {0, 1, 3}: {1, 4, 9}, median 4
    assert median_bandwidth([[0.0], [1.0], [3.0]]) == pytest.approx(math.sqrt(2))
    assert median_bandwidth(np.ones((5, 3))) == 1.0


def test_median_bandwidth_matches_enumeration(rng):
    X = rng.normal(size=(9, 2))
    d2 = [float(np.sum((X[i] - X[j]) ** 2)) for i in range(9) for j in range(i + 1, 9)]
    assert median_bandwidth(X) == pytest.approx(math.sqrt(np.median(d2) / 2), rel=1e-14)


def test_median_bandwidth_needs_two():
    with pytest.raises(InsufficientDataError):
        median_bandwidth([[1.0]])


def test_median_pair_evaluates_to_inv_e():
    X = np.array([[0.0], [1.0], [3.0]])
    s = median_bandwidth(X)
    assert multi_kernel_eval([0.0], [2.0], KernelSpec.single(s)) == pytest.approx(math.exp(-1))


def test_default_ladder(rng):
    Xs, Xt = rng.normal(size=(6, 2)), rng.normal(size=(5, 2))
    s = median_bandwidth(np.vstack([Xs, Xt]))
    spec = default_spec(Xs, Xt)
    assert spec.d == 5
    np.testing.assert_allclose(spec.bandwidths, [s / 4, s / 2, s, 2 * s, 4 * s])
    assert spec.weights == (0.2,) * 5
    assert ladder_spec(1.0).bandwidths == (0.25, 0.5, 1.0, 2.0, 4.0)
