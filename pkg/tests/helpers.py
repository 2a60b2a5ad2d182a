import numpy as np

from lutlearn.grad import Adam, softmax_cross_entropy
from lutlearn.model import Network

DENSE = ["dense:24", "bn", "dense:24", "bn", "dense:8", "bn"]
CONV = ["conv:8:3", "bn", "maxpool:2", "conv:8:3:1:same", "bn", "dense:6", "bn"]


def numeric_grad(f, x, h=1e-4):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        a = f()
        x[i] = old - h
        b = f()
        x[i] = old
        g[i] = (a - b) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def trained_lut_net(layers=DENSE, input_shape=(16,), k=4, p=0, tile=(1, 1), targets=(1, 2), density=0.4,
                    steps=8, seed=0, table_mode="real"):
    """Small network taken through all three phases on random data."""
    rng = np.random.default_rng(seed)
    net = Network(layers, input_shape, seed=seed)
    x = rng.uniform(-1, 1, size=(64,) + tuple(input_shape))
    y = rng.integers(0, net.n_classes, size=64)

    def fit(mode, n, lr):
        opt = Adam(net.parameters(mode), lr=lr)
        for _ in range(n):
            net.zero_grad()
            softmax_cross_entropy(net.forward(x, mode, train=True), y).backward()
            opt.step()
            net.post_step(mode)

    fit("real", steps, 1e-2)
    net.prune(density=density)
    fit("binary", steps, 1e-2)
    net.expand(list(targets), k, p, tile[0], tile[1], np.random.default_rng(seed + 1))
    for i in targets:
        net.blocks[i].lut.table_mode = table_mode
    fit("lut", steps, 5e-2)
    return net
