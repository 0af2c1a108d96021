import numpy as np
import pytest

from syneslm.errors import DimMismatch, NonFiniteInput
from syneslm.projector import ProjectorParams, gelu, project, project_grad


def test_zero_weights_give_bias():
    p = ProjectorParams([(np.zeros((5, 3)), np.array([1.0, -2.0, 0.5]))])
    np.testing.assert_array_equal(project(p, np.arange(5.0)), [1.0, -2.0, 0.5])


def test_identity_layer():
    p = ProjectorParams([(np.eye(4), np.zeros(4))])
    x = np.array([0.3, -1.0, 2.0, 5.0])
    np.testing.assert_array_equal(project(p, x), x)


def test_two_layer_matches_plain_arithmetic():
    p = ProjectorParams.init(6, 4, hidden=5, depth=2, seed=3, std=0.5, dtype=np.float64)
    x = np.random.default_rng(0).standard_normal(6)
    (w1, b1), (w2, b2) = p.layers
    h = x @ w1 + b1
    h = 0.5 * h * (1 + np.tanh(np.sqrt(2 / np.pi) * (h + 0.044715 * h**3)))
    np.testing.assert_allclose(project(p, x), h @ w2 + b2, rtol=1e-6)


def test_output_dim_independent_of_input_dim():
    for d in (1, 7, 50):
        assert project(ProjectorParams.init(d, 8), np.ones(d)).shape == (8,)


def test_zero_upstream_gives_zero_grads():
    p = ProjectorParams.init(4, 3, depth=2, seed=0, dtype=np.float64)
    grads, dx = project_grad(p, np.ones(4), np.zeros(3))
    assert all(not gw.any() and not gb.any() for gw, gb in grads)
    assert not dx.any()


def test_linear_weight_grad_is_outer_product():
    p = ProjectorParams([(np.random.default_rng(0).standard_normal((3, 2)), np.zeros(2))])
    x, up = np.array([1.0, 2.0, -1.0]), np.array([0.5, -3.0])
    (gw, gb), dx = project_grad(p, x, up)[0][0], project_grad(p, x, up)[1]
    np.testing.assert_allclose(gw, np.outer(x, up))
    np.testing.assert_allclose(gb, up)
    np.testing.assert_allclose(dx, p.layers[0][0] @ up)


def test_finite_differences_two_layers():
    rng = np.random.default_rng(5)
    p = ProjectorParams.init(5, 4, hidden=6, depth=2, seed=1, std=0.7, dtype=np.float64)
    x, up = rng.standard_normal(5), rng.standard_normal(4)
    grads, dx = project_grad(p, x, up)
    f = lambda: float(project(p, x) @ up)
    eps = 1e-6
    for li, (w, b) in enumerate(p.layers):
        for arr, g in ((w, grads[li][0]), (b, grads[li][1])):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                fp = f()
                arr[idx] = old - eps
                fm = f()
                arr[idx] = old
                assert (fp - fm) / (2 * eps) == pytest.approx(g[idx], rel=1e-5, abs=1e-8)
    for i in range(5):
        e = np.zeros(5)
        e[i] = eps
        num = (float(project(p, x + e) @ up) - float(project(p, x - e) @ up)) / (2 * eps)
        assert num == pytest.approx(dx[i], rel=1e-5, abs=1e-8)


def test_gelu_reference_points():
    assert gelu(np.array(0.0)) == 0.0
    assert gelu(np.array(10.0)) == pytest.approx(10.0)


def test_errors():
    p = ProjectorParams.init(4, 3)
    with pytest.raises(DimMismatch):
        project(p, np.ones(5))
    with pytest.raises(NonFiniteInput):
        project(p, np.array([1.0, np.inf, 0.0, 0.0]))
    with pytest.raises(DimMismatch):
        project_grad(p, np.ones(4), np.ones(2))


def test_named_roundtrip():
    p = ProjectorParams.init(4, 3, depth=3)
    q = ProjectorParams.from_named(p.named())
    assert len(q.layers) == 3
    assert all(a[0] is b[0] for a, b in zip(p.layers, q.layers))
