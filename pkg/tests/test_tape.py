import math

import numpy as np
import pytest

from hyrep import ball
from hyrep import tape as tp


def test_forward_squared_norm():
    v = tp.Var(np.array([3.0, 4.0]))
    out = tp.vsum(v * v)
    assert float(tp.value(out)) == 25.0


def test_forward_uniform_cross_entropy():
    # cross-entropy of a uniform softmax over K=4 with a one-hot label
    logits = tp.Var(np.zeros(4))
    onehot = np.array([0.0, 1.0, 0.0, 0.0])
    loss = tp.logsumexp(tp.reshape(logits, (1, 4)), axis=-1) - tp.vsum(logits * onehot)
    np.testing.assert_allclose(tp.value(loss), [math.log(4.0)], atol=1e-12)


def test_forward_dist_to_origin():
    x = tp.Var(np.array([0.6, 0.0]))
    out = ball.dist(np.zeros(2), x, 1.0)
    np.testing.assert_allclose(float(tp.value(out)), math.log(4.0), atol=1e-12)


def test_backward_squared_norm():
    v = tp.Var(np.array([3.0, 4.0]))
    out = tp.vsum(v * v)
    tp.backward(out)
    np.testing.assert_allclose(v.grad, [6.0, 8.0])


def test_backward_tanh_at_zero():
    x = tp.Var(np.array(0.0))
    tp.backward(tp.tanh(x))
    np.testing.assert_allclose(x.grad, 1.0)


def test_backward_dist_radial():
    # d/dx 2 atanh(||x||) along the radial axis is 2/(1-||x||^2)
    x = tp.Var(np.array([0.5, 0.0]))
    tp.backward(ball.dist(np.zeros(2), x, 1.0))
    np.testing.assert_allclose(x.grad, [2.0 / 0.75, 0.0], atol=1e-12)


def test_backward_requires_scalar():
    v = tp.Var(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        tp.backward(v * v)


def test_grad_of_unused_parameter_is_zero():
    a = tp.Var(np.array([1.0]))
    b = tp.Var(np.array([2.0]))
    (ga, gb) = tp.grad(tp.vsum(a * a), [a, b])
    np.testing.assert_allclose(ga, [2.0])
    np.testing.assert_allclose(gb, [0.0])


def test_check_gradient_constant_graph():
    err = tp.check_gradient(lambda ps: tp.vsum(ps[0] * 0.0), [np.array([1.0, -2.0])])
    assert err == 0.0


def test_check_gradient_rejects_bad_step():
    with pytest.raises(ValueError):
        tp.check_gradient(lambda ps: tp.vsum(ps[0]), [np.array([1.0])], h=0.0)


PRIMITIVE_CASES = [
    ("tanh", lambda ps: tp.vsum(tp.tanh(ps[0])), 3.0),
    ("atanh", lambda ps: tp.vsum(tp.atanh(ps[0] * 0.2)), 1.0),
    ("asinh", lambda ps: tp.vsum(tp.asinh(ps[0])), 3.0),
    ("arccosh", lambda ps: tp.vsum(tp.arccosh(ps[0] * ps[0] + 1.5)), 2.0),
    ("log", lambda ps: tp.vsum(tp.log(ps[0] * ps[0] + 0.5)), 2.0),
    ("exp", lambda ps: tp.vsum(tp.exp(ps[0])), 2.0),
    ("sqrt", lambda ps: tp.vsum(tp.sqrt(ps[0] * ps[0] + 0.3)), 2.0),
    ("relu", lambda ps: tp.vsum(tp.relu(ps[0])), 3.0),
    ("norm", lambda ps: tp.vsum(tp.norm(ps[0], axis=-1)), 3.0),
    ("div", lambda ps: tp.vsum(ps[0] / (ps[0] * ps[0] + 1.2)), 3.0),
    ("matmul", lambda ps: tp.vsum(tp.matmul(tp.reshape(ps[0], (2, 5)), tp.reshape(ps[0], (5, 2)))), 1.0),
    ("softmax", lambda ps: tp.vsum(tp.softmax(ps[0], axis=-1) * np.arange(10.0)), 2.0),
    ("logsumexp", lambda ps: tp.vsum(tp.logsumexp(tp.reshape(ps[0], (2, 5)), axis=-1)), 2.0),
    ("mobius_add", lambda ps: tp.vsum(ball.mobius_add(tp.tanh(ps[0]) * 0.25, tp.tanh(ps[0] * 0.5) * 0.25, 1.0)), 2.0),
    ("mobius_scalar", lambda ps: tp.vsum(ball.mobius_scalar_mul(1.7, tp.tanh(ps[0]) * 0.15, 2.0)), 2.0),
    ("exp0", lambda ps: tp.vsum(ball.exp0(ps[0], 1.0)), 2.0),
    ("log0", lambda ps: tp.vsum(ball.log0(tp.tanh(ps[0]) * 0.2, 1.0)), 2.0),
]


@pytest.mark.parametrize("name,fn,scale", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_central_differences(name, fn, scale):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-1.0, 1.0, size=10) * scale
        # keep norm-like inputs away from the origin singularity
        if np.linalg.norm(x) < 1e-3:
            x[0] += 0.1
        worst = max(worst, tp.check_gradient(fn, [x]))
    assert worst < 1e-4


def test_chain_matches_hand_multiplied_jacobians():
    # 3-link chain: y = tanh(x), z = 2*y, s = sum(z^2)
    x0 = np.array([0.3, -0.7, 1.1])

    def fn(ps):
        y = tp.tanh(ps[0])
        z = y * 2.0
        return tp.vsum(z * z)

    v = tp.Var(x0)
    tp.backward(fn([v]))
    y = np.tanh(x0)
    hand = (8.0 * y) * (1.0 - y**2)  # dz/dy = 2, ds/dz = 2z = 4y, dy/dx = 1-y^2
    np.testing.assert_allclose(v.grad, hand, atol=1e-12)
    assert tp.check_gradient(fn, [x0]) < 1e-8


def test_take_and_stack_gradients():
    def fn(ps):
        a = tp.take(ps[0], np.array([0, 2, 2]), axis=0)
        s = tp.stack([a, a * 2.0], axis=1)
        return tp.vsum(s * s)

    assert tp.check_gradient(fn, [np.array([[1.0, 2.0], [3.0, 4.0], [5.0, -1.0]])]) < 1e-6


def test_where_gradient():
    mask = np.array([True, False, True])

    def fn(ps):
        return tp.vsum(tp.where(mask, ps[0] * 3.0, ps[0] * ps[0]))

    assert tp.check_gradient(fn, [np.array([1.0, 2.0, -0.5])]) < 1e-6


def test_backward_before_forward_equivalent():
    # a fresh Var has no recorded graph; backward on it is a no-op gradient
    v = tp.Var(np.array(2.0))
    tp.backward(v)
    np.testing.assert_allclose(v.grad, 1.0)
