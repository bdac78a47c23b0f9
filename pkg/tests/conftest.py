import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

import charme_lab as cl

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


ACT_BY_NAME = {
    "relu": cl.RELU,
    "sigmoid": cl.SIGMOID,
    "softplus": cl.SOFTPLUS,
    "tanh": cl.TANH,
    "identity": cl.IDENTITY,
}


def random_net(gen, widths, activation, scale=1.0):
    ws = [gen.uniform(-scale, scale, size=(widths[l + 1], widths[l])) for l in range(len(widths) - 1)]
    bs = [gen.uniform(-scale, scale, size=widths[l + 1]) for l in range(len(widths) - 1)]
    return cl.FeedforwardNet(widths, ws, bs, activation)


def linear_ar1_model(a=0.5, bias=0.0, innovation=None):
    """One-regime scalar model f(x) = a x + bias with unit volatility."""
    net = cl.FeedforwardNet((1, 1), [np.array([[float(a)]])], [np.array([float(bias)])], cl.IDENTITY)
    return cl.CharmeModel(
        1, 1, 1, [1.0],
        [cl.ExpertSpec(net, cl.VolatilitySpec.constant_one())],
        innovation or cl.InnovationSpec.standard_gaussian(),
    )


def two_point_ar1_model():
    """The {0,1}-innovation contraction fixture: X_t = (X_{t-1} + eps_t)/2."""
    f = cl.FeedforwardNet((1, 1), [np.array([[0.5]])], [np.array([0.0])], cl.IDENTITY)
    g = cl.FeedforwardNet((1, 1), [np.array([[0.0]])], [np.array([0.5])], cl.SOFTPLUS)
    return cl.CharmeModel(
        1, 1, 1, [1.0],
        [cl.ExpertSpec(f, cl.VolatilitySpec.network(g, floor=0.5))],
        cl.InnovationSpec.two_point_half(),
    )


def small_mixture_model(seed=0, p=4, K=2, widths=(6, 1), targets=(0.5, 0.6), activation=None):
    """Certified K-regime scalar model with given lag order and ReLU experts."""
    from charme_lab.nets import first_layer_block_norms, layer_product_lipschitz

    act = activation or cl.RELU
    d = 1
    experts = []
    for k in range(K):
        gen = np.random.Generator(np.random.Philox(key=np.array([seed, k], dtype=np.uint64)))
        full_widths = (d * p,) + tuple(widths)
        net = random_net(gen, full_widths, act, scale=0.8)
        tail = layer_product_lipschitz(net, 1) * act.lipschitz_constant
        total = tail * float(first_layer_block_norms(net, p, d).sum())
        w0 = net.weights[0] * (targets[k % len(targets)] / total)
        net = cl.FeedforwardNet(net.widths, [w0] + list(net.weights[1:]), net.biases, act)
        experts.append(cl.ExpertSpec(net, cl.VolatilitySpec.constant_one()))
    pi = np.full(K, 1.0 / K)
    return cl.CharmeModel(d, p, K, pi, experts, cl.InnovationSpec.standard_gaussian())


def noiseless_trajectory(model, n, seed=0):
    """Trajectory following the autoregressive recursion with zero noise."""
    from charme_lab import rng as _rng
    from charme_lab.nets import forward
    from charme_lab.simulate import draw_regimes

    p, d = model.p, model.d
    gen = draw_regimes(model.pi, n, _rng.stream(seed, "regimes"))
    full = np.zeros((p + n, d))
    lag = np.zeros(p * d)
    for t in range(n):
        x = forward(model.experts[gen[t]].f, lag)
        full[p + t] = x
        lag = np.concatenate([x, lag[:-d]])
    return cl.Trajectory(
        x=full[p:].copy(), pre=full[:p].copy(), regimes=(gen + 1).astype(np.int64),
        innovations=np.zeros((n, d)), seed=seed, burn_in=0,
    )


@pytest.fixture
def rng_gen():
    return np.random.Generator(np.random.Philox(key=np.array([2024, 1], dtype=np.uint64)))
