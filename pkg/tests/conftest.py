import numpy as np
import pytest
from hypothesis import settings

from xsei.signal import ArcMask, SignalWindow

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_window(samples, label=0, flags=None, period=5e-3):
    samples = np.asarray(samples, dtype=np.float64)
    if flags is None:
        flags = np.zeros(samples.size, dtype=bool)
    return SignalWindow(samples, period, label, ArcMask(flags))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def finite_difference_check(net, x, y, h=1e-5, max_entries=40, rng=None):
    """Worst relative error between analytic and central-difference gradients.

    Checks up to ``max_entries`` randomly chosen entries of every parameter.
    """
    rng = rng or np.random.default_rng(0)
    _, grads = net.loss_and_grads(x, y)
    worst = 0.0
    for p, g in zip(net.params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        picks = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + h
            up, _ = net.loss_and_grads(x, y)
            flat[i] = old - h
            down, _ = net.loss_and_grads(x, y)
            flat[i] = old
            numeric = (up - down) / (2 * h)
            denom = max(abs(numeric), abs(gflat[i]), 1e-7)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst


def random_net(rng, kinds=("conv1d", "avgpool", "maxpool", "dense")):
    """A small random network exercising the requested layer kinds."""
    from xsei.nncore import FLATTEN, Network, conv, dense, pool
    length = int(rng.integers(8, 20))
    channels = int(rng.integers(1, 3))
    layers = []
    cur = length
    if "conv1d" in kinds:
        k = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 3))
        layers.append(conv(int(rng.integers(1, 4)), k, pad, activation=str(rng.choice(["relu", "none"]))))
        cur = cur + 2 * pad - k + 1
    for kind in ("avgpool", "maxpool"):
        if kind in kinds and cur >= 2:
            kk = int(rng.integers(1, 3))
            stride = int(rng.integers(1, 3))
            layers.append(pool(kind, kk, stride))
            cur = (cur - kk) // stride + 1
    layers.append(FLATTEN)
    if "dense" in kinds:
        layers.append(dense(int(rng.integers(2, 6)), activation=str(rng.choice(["relu", "none"]))))
    classes = int(rng.integers(2, 4))
    layers.append(dense(classes, activation="softmax"))
    net = Network(layers, (channels, length), seed=int(rng.integers(1 << 30)))
    for p in net.params:   # nonzero biases so ReLU kinks are not hit systematically
        p += rng.normal(scale=0.1, size=p.shape)
    batch = int(rng.integers(1, 5))
    x = rng.normal(size=(batch, channels, length))
    y = rng.integers(0, classes, size=batch)
    return net, x, y


def permutation_oracle(values, d):
    """Shapley values by averaging marginal contributions over all d! orderings."""
    from itertools import permutations
    from math import factorial
    phi = np.zeros(d)
    for order in permutations(range(d)):
        mask = 0
        for j in order:
            phi[j] += values[mask | (1 << j)] - values[mask]
            mask |= 1 << j
    return phi / factorial(d)


def tiny_config(**grid):
    """Small but complete configuration: short records, few windows, 2 LBNN epochs."""
    from xsei.config import Config, ExperimentGrid, SynthConfig
    from xsei.indicator import EvalConfig
    from xsei.models import ZooConfig
    from xsei.nncore import TrainConfig
    synth = SynthConfig(per_class=8, record_length=12000, width=2000, step=2000)
    zoo = ZooConfig(ensemble_size=5, linear_max_iter=200, lbnn=TrainConfig(epochs=2, batch_size=8))
    ev = EvalConfig(n_explain=3, n_occlusion=3, n_regions=10)
    g = dict(factors=(1, 2), snrs=(5.0,), seeds=(0,), models=("knn", "cart", "lbnn_avg"))
    g.update(grid)
    return Config(seed=3, synth=synth, zoo=zoo, eval=ev, grid=ExperimentGrid(**g))


# acceptance criteria append (tag, passed, detail) here; printed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for tag, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{tag} {'PASS' if ok else 'FAIL'}  {detail}")
