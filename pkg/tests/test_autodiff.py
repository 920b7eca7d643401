import numpy as np
import pytest

from faitheval import autodiff as ad
from faitheval.errors import InvalidInput


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up = x.copy()
        up[idx] += h
        dn = x.copy()
        dn[idx] -= h
        g[idx] = (f(up) - f(dn)) / (2 * h)
    return g


def test_add_mul_chain():
    x = ad.Var(np.array(2.0))
    y = ad.Var(np.array(3.0))
    out = x * y + x
    ad.backward(out)
    assert x.grad == pytest.approx(4.0)
    assert y.grad == pytest.approx(2.0)


def test_shared_subexpression_accumulates():
    # diamond: z = x*x contributes through two paths
    x = ad.Var(np.array(3.0))
    z = x * x
    out = z + z
    ad.backward(out)
    assert x.grad == pytest.approx(12.0)


def test_matvec_gradient_matches_numeric():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(4, 5))
    v = rng.normal(size=5)
    leaf = ad.Var(v)
    out = ad.pick(ad.matvec(ad.constant(m), leaf), 2)
    ad.backward(out)
    expected = numeric_grad(lambda vv: (m @ vv)[2], v)
    np.testing.assert_allclose(leaf.grad, expected, atol=1e-8)


def test_tanh_mlp_matches_numeric():
    rng = np.random.default_rng(1)
    w1 = rng.normal(size=(6, 4)) * 0.3
    w2 = rng.normal(size=(3, 6)) * 0.3
    x = rng.normal(size=(2, 4))

    def forward(arr):
        pooled = arr.mean(axis=0)
        return (w2 @ np.tanh(w1 @ pooled))[1]

    leaf = ad.Var(x)
    h = ad.tanh(ad.matvec(ad.constant(w1), ad.mean_rows(leaf)))
    out = ad.pick(ad.matvec(ad.constant(w2), h), 1)
    ad.backward(out)
    np.testing.assert_allclose(leaf.grad, numeric_grad(forward, x), atol=1e-7)


def test_concat_routes_gradients():
    a = ad.Var(np.array([1.0, 2.0]))
    b = ad.Var(np.array([3.0]))
    w = np.array([10.0, 20.0, 30.0])
    out = ad.pick(ad.concat([a, b]) * ad.constant(w), 2)
    ad.backward(out)
    np.testing.assert_allclose(a.grad, [0.0, 0.0])
    np.testing.assert_allclose(b.grad, [30.0])


def test_linear_gradient_is_weight():
    w = np.array([2.0, -1.0, 0.5])
    for point in (np.zeros(3), np.array([5.0, -2.0, 1.0])):
        leaf = ad.Var(point)
        out = ad.sum_all(leaf * ad.constant(w))
        ad.backward(out)
        np.testing.assert_allclose(leaf.grad, w)


def test_constant_head_gives_zero_gradient():
    leaf = ad.Var(np.array([1.0, 2.0]))
    out = ad.sum_all(leaf * ad.constant(np.zeros(2)))
    ad.backward(out)
    np.testing.assert_allclose(leaf.grad, np.zeros(2))


def test_backward_requires_scalar():
    with pytest.raises(InvalidInput):
        ad.backward(ad.Var(np.array([1.0, 2.0])))


def test_pick_bounds():
    with pytest.raises(InvalidInput):
        ad.pick(ad.Var(np.array([1.0])), 3)


def test_random_graphs_match_numeric():
    # deeper compositions with reuse, against central differences
    rng = np.random.default_rng(7)
    for trial in range(25):
        w1 = rng.normal(size=(5, 3)) * 0.4
        w2 = rng.normal(size=(5,)) * 0.4
        x = rng.normal(size=(4, 3))

        def forward(arr):
            pooled = arr.mean(axis=0)
            h = np.tanh(w1 @ pooled)
            return float(w2 @ h + (w2 * 0.5) @ (h * h))

        leaf = ad.Var(x)
        h = ad.tanh(ad.matvec(ad.constant(w1), ad.mean_rows(leaf)))
        out = ad.sum_all(ad.constant(w2) * h) + ad.sum_all(ad.constant(w2 * 0.5) * (h * h))
        ad.backward(out)
        np.testing.assert_allclose(leaf.grad, numeric_grad(forward, x), atol=1e-6)
