"""Gradient correctness of every op against central finite differences."""
import numpy as np
import pytest

from nrtts import autograd as ag
from nrtts.autograd import Tensor

from conftest import fd_gradient


def check_op(build, param_arrays, h=1e-6, tol=1e-4, n_probe=6):
    """build() -> scalar Tensor loss; params are leaf arrays to probe."""
    loss = build()
    loss.backward()
    rng = np.random.default_rng(0)
    for p in param_arrays:
        grad = p.grad
        assert grad is not None
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
        fd = fd_gradient(lambda: build().item(), p.data, idx, h=h)
        for i in idx:
            an = grad.reshape(-1)[i]
            denom = max(abs(fd[i]), abs(an), 1e-8)
            assert abs(fd[i] - an) / denom < tol, (fd[i], an)
        p.grad = None


def leaf(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def test_arithmetic_and_broadcasting():
    rng = np.random.default_rng(1)
    a = leaf(rng, (4, 5))
    b = leaf(rng, (5,))
    c = leaf(rng, ())
    check_op(lambda: ((a * b + c) / (b * b + 2.0) - a).mean(), [a, b, c])


def test_matmul_2d_and_vector():
    rng = np.random.default_rng(2)
    a = leaf(rng, (6, 4))
    w = leaf(rng, (4, 3))
    v = leaf(rng, (4,))
    check_op(lambda: (a @ w).sum() + (v @ w).sum(), [a, w, v])


def test_matmul_batched():
    rng = np.random.default_rng(3)
    a = leaf(rng, (2, 5, 4))
    b = leaf(rng, (2, 4, 6))
    check_op(lambda: (a @ b).mean(), [a, b])


def test_nonlinearities():
    rng = np.random.default_rng(4)
    x = leaf(rng, (7, 3))
    check_op(lambda: (ag.gelu(x) + ag.tanh(x) + ag.sigmoid(x)).sum(), [x])
    check_op(lambda: ag.relu(x).sum() + ag.exp(x * 0.1).sum(), [x])
    y = leaf(rng, (5,))
    check_op(lambda: ag.log(ag.exp(y) + 1.1).sum() + ag.sqrt(y * y + 1.0).sum(), [y])


def test_softmax_and_layernorm():
    rng = np.random.default_rng(5)
    x = leaf(rng, (6, 8))
    g = Tensor(np.ones(8), requires_grad=True)
    b = Tensor(np.zeros(8), requires_grad=True)
    probe = Tensor(rng.standard_normal((6, 8)))  # break LN's scale invariance
    check_op(lambda: (ag.softmax(x, axis=-1) ** 2.0).sum(), [x])
    check_op(lambda: (ag.layer_norm(x, g, b) * probe).sum() +
             ((ag.layer_norm(x, g, b) * probe) ** 2.0).sum(), [x, g, b])


def test_reductions_reshape_slice_concat_flip():
    rng = np.random.default_rng(6)
    x = leaf(rng, (6, 4))
    y = leaf(rng, (6, 4))

    def build():
        z = ag.concat([x, y], axis=-1)            # [6, 8]
        z = z.reshape(3, 16).transpose((1, 0))    # [16, 3]
        z = z[2:10]
        return (z * z).sum(axis=0).mean() + x.flip0().mean()

    check_op(build, [x, y])


def test_embedding_lookup_grad():
    rng = np.random.default_rng(7)
    table = leaf(rng, (10, 4))
    ids = np.array([1, 3, 3, 9])
    check_op(lambda: (ag.embedding_lookup(table, ids) ** 2.0).sum(), [table])


def test_conv1d_grad():
    rng = np.random.default_rng(8)
    x = leaf(rng, (20, 3))
    w = leaf(rng, (5, 3, 4), scale=0.5)
    b = leaf(rng, (4,), scale=0.1)
    check_op(lambda: ag.conv1d(x, w, b, stride=2, pad_left=2, pad_right=1).mean(),
             [x, w, b])


def test_lstm_grad_both_directions():
    rng = np.random.default_rng(9)
    x = leaf(rng, (12, 5))
    w_ih = leaf(rng, (5, 24), scale=0.4)
    w_hh = leaf(rng, (6, 24), scale=0.4)
    b = Tensor(np.zeros(24), requires_grad=True)
    for reverse in (False, True):
        check_op(lambda: ag.absolute(ag.lstm(x, w_ih, w_hh, b,
                                             reverse=reverse)).mean(),
                 [x, w_ih, w_hh, b])


def test_abs_and_pow():
    rng = np.random.default_rng(10)
    x = leaf(rng, (9,))
    check_op(lambda: ag.absolute(x).sum() + (x ** 3.0).sum(), [x])


def test_grad_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x * 3.0
    y.backward()
    assert x.grad[0] == pytest.approx(2 * 2.0 + 3.0)


def test_no_grad_suppresses_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    assert y._vjp is None


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_diamond_graph_gradient_exact():
    # d/dx of (x*x + x*x) = 4x; shared subexpression must not double count
    x = Tensor(np.array([3.0]), requires_grad=True)
    s = x * x
    (s + s).backward()
    assert x.grad[0] == pytest.approx(12.0)
