import numpy as np
import pytest

from bidilab.tensor import Tensor, _unbroadcast

EPS = 1e-6


def _fd_check(build, arrays, rtol=1e-5, atol=1e-7):
    """Compare analytic gradients of a scalar-valued graph against central
    finite differences for every input array."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for t, a in zip(tensors, arrays):
        numeric = np.zeros_like(a)
        flat = a.reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + EPS
            hi = build(*[Tensor(x) for x in arrays]).item()
            flat[idx] = orig - EPS
            lo = build(*[Tensor(x) for x in arrays]).item()
            flat[idx] = orig
            num_flat[idx] = (hi - lo) / (2 * EPS)
        np.testing.assert_allclose(t.grad, numeric, rtol=rtol, atol=atol)


def _sum(t: Tensor) -> Tensor:
    return t.reshape(1, -1).matmul(Tensor(np.ones((t.data.size, 1)))).reshape(())


def test_add_mul_grads(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    _fd_check(lambda x, y: _sum((x + y) * y), [a, b])


def test_broadcast_add_grad(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    _fd_check(lambda x, y: _sum(x + y), [a, b])


def test_scale_grad(rng):
    a = rng.normal(size=(5,))
    _fd_check(lambda x: _sum(x.scale(2.5)), [a])


def test_matmul_2d_grad(rng):
    a = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    _fd_check(lambda x, y: _sum(x.matmul(y)), [a, w])


def test_matmul_batched_weight_grad(rng):
    # (B, L, d) @ (d, k) hits the collapsed-GEMM fast path
    a = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(4, 5))
    _fd_check(lambda x, y: _sum(x.matmul(y)), [a, w])


def test_matmul_batched_both_grad(rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 4, 3))
    _fd_check(lambda x, y: _sum(x.matmul(y)), [a, b])


def test_linear_t_grad(rng):
    a = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(6, 4))
    _fd_check(lambda x, y: _sum(x.linear_t(y)), [a, w])


def test_reshape_transpose_narrow_grads(rng):
    a = rng.normal(size=(2, 3, 4))

    def build(x):
        y = x.transpose(0, 2, 1).reshape(2, 12).narrow(1, 3, 6)
        return _sum(y * y)

    _fd_check(build, [a])


def test_take_rows_grad_with_repeats(rng):
    table = rng.normal(size=(6, 4))
    idx = np.array([[0, 2, 2], [5, 0, 1]])

    def build(t):
        g = t.take_rows(idx)
        return _sum(g * g)

    _fd_check(build, [table])


def test_gelu_grad(rng):
    a = rng.normal(size=(4, 5))
    _fd_check(lambda x: _sum(x.gelu()), [a])


def test_gelu_values():
    x = Tensor(np.array([0.0, 1.0, -1.0]))
    y = x.gelu().data
    # tanh approximation of the Gaussian error linear unit
    np.testing.assert_allclose(y, [0.0, 0.841192, -0.158808], atol=1e-5)


def test_layer_norm_grad(rng):
    a = rng.normal(size=(3, 8))
    gain = rng.normal(size=(8,))
    bias = rng.normal(size=(8,))
    _fd_check(lambda x, g, b: _sum(x.layer_norm(g, b)), [a, gain, bias], rtol=1e-4)


def test_layer_norm_output_standardized(rng):
    x = Tensor(rng.normal(size=(4, 16)) * 3 + 5)
    ones = Tensor(np.ones(16))
    zeros = Tensor(np.zeros(16))
    out = x.layer_norm(ones, zeros).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-3)


def test_masked_softmax_grad(rng):
    a = rng.normal(size=(4, 4))
    allowed = np.tril(np.ones((4, 4), dtype=bool))

    def build(x):
        p = x.masked_softmax(allowed)
        return _sum(p * p)

    _fd_check(build, [a], rtol=1e-4)


def test_masked_softmax_respects_mask(rng):
    a = Tensor(rng.normal(size=(3, 3)))
    allowed = np.array([[1, 0, 0], [1, 1, 0], [0, 0, 0]], dtype=bool)
    p = a.masked_softmax(allowed).data
    assert p[0, 0] == 1.0 and p[0, 1] == 0.0
    np.testing.assert_allclose(p[1].sum(), 1.0)
    assert (p[2] == 0.0).all()  # fully-masked row comes out zero, not NaN
    assert np.isfinite(p).all()


def test_mean_nll_matches_manual(rng):
    logits = rng.normal(size=(5, 7))
    targets = np.array([0, 3, 6, 2, 2])
    t = Tensor(logits, requires_grad=True)
    mean, per_row = t.mean_nll(targets)
    lse = np.log(np.exp(logits).sum(axis=1))
    expected = lse - logits[np.arange(5), targets]
    np.testing.assert_allclose(per_row, expected, rtol=1e-12)
    np.testing.assert_allclose(mean.item(), expected.mean(), rtol=1e-12)


def test_mean_nll_grad(rng):
    logits = rng.normal(size=(4, 6))
    targets = np.array([1, 5, 0, 3])
    _fd_check(lambda x: x.mean_nll(targets)[0], [logits], rtol=1e-5)


def test_mean_nll_empty_raises():
    with pytest.raises(ValueError, match="no valid target"):
        Tensor(np.zeros((0, 4))).mean_nll(np.zeros(0, dtype=int))


def test_grad_accumulates_across_reuse(rng):
    a = Tensor(rng.normal(size=(3,)), requires_grad=True)
    out = _sum(a + a)
    out.backward()
    np.testing.assert_allclose(a.grad, 2.0 * np.ones(3))


def test_backward_requires_scalar():
    with pytest.raises(ValueError, match="scalar"):
        Tensor(np.zeros(3), requires_grad=True).backward()


def test_unbroadcast_shapes():
    g = np.ones((2, 3, 4))
    assert _unbroadcast(g, (3, 4)).shape == (3, 4)
    assert _unbroadcast(g, (1, 4)).shape == (1, 4)
    np.testing.assert_allclose(_unbroadcast(g, (4,)), 6.0 * np.ones(4))


def test_deep_graph_iterative_backward():
    # deep chains must not hit the recursion limit
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y.scale(1.0)
    y.backward()
    assert x.grad == 1.0
