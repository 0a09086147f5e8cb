"""Base-model tests: forward contract, loss oracle, adaptation behaviour."""

import numpy as np
import pytest

from metakg import autodiff as ad
from metakg import regressor, tasks
from metakg.errors import DimensionError


def make_net(tape, params):
    return regressor.BaseNet.from_list([tape.watch(params[n]) for n in regressor.PARAM_NAMES])


def test_parameter_count_default_width():
    assert regressor.param_count(40) == 1801


def test_zero_weights_zero_output():
    t = ad.Tape()
    params = {n: np.zeros(s) for n, s in regressor.param_shapes(8).items()}
    net = make_net(t, params)
    out = regressor.forward(net, t.constant(np.random.default_rng(0).uniform(0, 5, (7, 2))))
    assert np.array_equal(out.array, np.zeros((7, 1)))


def test_constant_output_from_bias():
    # zero everything except the output bias: predictions equal that bias
    t = ad.Tape()
    params = {n: np.zeros(s) for n, s in regressor.param_shapes(8).items()}
    params["W3"] = np.random.default_rng(1).normal(size=(8, 1))
    params["b3"] = np.full((1, 1), 2.5)
    net = make_net(t, params)
    out = regressor.forward(net, t.constant([[0.0, 1.0], [4.0, 2.0]]))
    assert np.allclose(out.array, 2.5, atol=0)


def test_forward_gradient_matches_finite_diff():
    rng = np.random.default_rng(2)
    hidden = 3
    shapes = regressor.param_shapes(hidden)
    sizes = {n: r * c for n, (r, c) in shapes.items()}
    total = sum(sizes.values())
    x_np = rng.uniform(0, 5, (6, 2))
    z_np = rng.normal(0, 1, (6, 1))
    p0 = rng.uniform(-0.8, 0.8, total)

    def build(vec):
        t = ad.Tape()
        offset = 0
        vs = []
        for n in regressor.PARAM_NAMES:
            r, c = shapes[n]
            vs.append(t.watch(vec[offset:offset + r * c].reshape(r, c)))
            offset += r * c
        net = regressor.BaseNet.from_list(vs)
        loss = regressor.mse_loss(regressor.forward(net, t.constant(x_np)), t.constant(z_np))
        return t, vs, loss

    t, vs, loss = build(p0)
    grads = ad.backward(t, loss, vs)
    analytic = np.concatenate([g.array.ravel() for g in grads])
    fd = ad.finite_diff_gradient(lambda v: build(v)[2].value.item(), p0, 1e-5)
    denom = max(np.abs(fd).max(), 1e-8)
    assert np.abs(analytic - fd).max() / denom <= 1e-6


def test_forward_shape_mismatch():
    t = ad.Tape()
    params = {n: np.zeros(s) for n, s in regressor.param_shapes(4).items()}
    net = make_net(t, params)
    with pytest.raises(DimensionError):
        regressor.forward(net, t.constant(np.zeros((5, 3))))


def test_mse_zero_when_equal():
    t = ad.Tape()
    p = t.constant(np.arange(6.0).reshape(6, 1))
    assert regressor.mse_loss(p, t.constant(np.arange(6.0).reshape(6, 1))).value.item() == 0.0


def test_mse_of_unit_residuals_is_one():
    t = ad.Tape()
    pred = t.constant(np.ones((4, 1)))
    target = t.constant(np.zeros((4, 1)))
    assert regressor.mse_loss(pred, target).value.item() == 1.0


def test_mse_against_scalar_loop():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(9, 1))
    b = rng.normal(size=(9, 1))
    t = ad.Tape()
    got = regressor.mse_loss(t.constant(a), t.constant(b)).value.item()
    # independent brute-force accumulation in pure python
    acc = 0.0
    for i in range(9):
        acc += (float(a[i, 0]) - float(b[i, 0])) ** 2
    assert abs(got - acc / 9) <= 1e-12 * max(1.0, abs(got))


def test_inner_adapt_zero_steps_identity():
    t = ad.Tape()
    params = init_random(t, hidden=4, seed=4)
    xtr = t.constant(np.zeros((3, 2)))
    ztr = t.constant(np.zeros((3, 1)))
    adapted = regressor.inner_adapt(params, xtr, ztr, 0.001, steps=0, create_graph=False)
    assert all(a is b for a, b in zip(adapted.as_list(), params.as_list()))


def init_random(tape, hidden, seed):
    rng = np.random.default_rng(seed)
    return make_net(tape, regressor.init_base_params(rng, hidden))


def test_training_loss_monotone_over_100_episodes():
    # 5 descent steps at lr 1e-3 should never increase the train loss
    rng = np.random.default_rng(5)
    violations = 0
    for _ in range(100):
        ep = tasks.sample_episode(rng, 10, 1, 0.3)
        t = ad.Tape()
        net = make_net(t, regressor.init_base_params(rng, 40))
        xtr, ztr = t.constant(ep.train_inputs), t.constant(ep.train_targets)
        loss0 = regressor.mse_loss(regressor.forward(net, xtr), ztr).value.item()
        adapted = regressor.inner_adapt(net, xtr, ztr, 0.001, 5, create_graph=False)
        loss5 = regressor.mse_loss(regressor.forward(adapted, xtr), ztr).value.item()
        if loss5 > loss0:
            violations += 1
    print(f"monotonicity violations: {violations}/100")
    assert violations == 0


def test_meta_gradient_through_adaptation_matches_finite_diff():
    # post-adaptation query loss differentiated w.r.t. the starting
    # parameters, on a reduced net (hidden=1 -> 2+1+1+1+1+1 = 7 params)
    rng = np.random.default_rng(6)
    hidden = 1
    shapes = regressor.param_shapes(hidden)
    total = regressor.param_count(hidden)
    assert total <= 20
    x_np = rng.uniform(0, 5, (5, 2))
    z_np = rng.normal(0, 1, (5, 1))
    xq_np = rng.uniform(0, 5, (4, 2))
    zq_np = rng.normal(0, 1, (4, 1))

    def build(vec):
        t = ad.Tape()
        offset = 0
        vs = []
        for n in regressor.PARAM_NAMES:
            r, c = shapes[n]
            vs.append(t.watch(vec[offset:offset + r * c].reshape(r, c)))
            offset += r * c
        net = regressor.BaseNet.from_list(vs)
        adapted = regressor.inner_adapt(net, t.constant(x_np), t.constant(z_np),
                                        lr=0.01, steps=3, create_graph=True)
        loss = regressor.mse_loss(regressor.forward(adapted, t.constant(xq_np)),
                                  t.constant(zq_np))
        return t, vs, loss

    p0 = rng.uniform(-0.8, 0.8, total)
    t, vs, loss = build(p0)
    grads = ad.backward(t, loss, vs)
    analytic = np.concatenate([g.array.ravel() for g in grads])
    fd = ad.finite_diff_gradient(lambda v: build(v)[2].value.item(), p0, 1e-5)
    denom = max(np.abs(fd).max(), 1e-8)
    assert np.abs(analytic - fd).max() / denom <= 1e-4


def test_single_parameter_descent_analytic():
    # constant model f(x) = p fitted to target 1 from p=0, lr 0.1: one step
    # of d/dp (p-1)^2 = -2 lands at 0.2
    t = ad.Tape()
    p = t.watch(0.0)
    target = t.constant(np.ones((3, 1)))

    def loss_fn(ps):
        pred = ad.mul(t.constant(np.ones((3, 1))), ps[0])
        return regressor.mse_loss(pred, target)

    (p1,) = ad.gradient_descent(loss_fn, [p], lr=0.1, steps=1)
    assert abs(p1.value.item() - 0.2) <= 1e-15
