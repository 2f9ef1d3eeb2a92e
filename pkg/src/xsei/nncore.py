"""A small deterministic 1-D CNN engine: conv, pooling, dense, ReLU, softmax
cross-entropy, reverse-mode gradients and Adam.

Tensors are batched as ``(batch, channels, length)`` before ``flatten`` and
``(batch, units)`` after it.  Everything runs in float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

LAYER_KINDS = ("conv1d", "avgpool", "maxpool", "flatten", "dense")
ACTIVATIONS = ("relu", "softmax", "none")


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 1
    padding: int = 0
    stride: int = 1
    out: int = 0
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"bad layer geometry {self}")
        if self.kind in ("conv1d", "dense") and self.out < 1:
            raise ValueError(f"{self.kind} needs out >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "kernel": self.kernel, "padding": self.padding,
                "stride": self.stride, "out": self.out, "activation": self.activation}


def conv(out_channels, kernel, padding=0, activation="relu"):
    return LayerSpec("conv1d", kernel=kernel, padding=padding, out=out_channels,
                     activation=activation)


def pool(kind, kernel=2, stride=None):
    return LayerSpec(kind, kernel=kernel, stride=stride or kernel)


def dense(units, activation="relu"):
    return LayerSpec("dense", out=units, activation=activation)


FLATTEN = LayerSpec("flatten")


def lbnn_layers(num_classes: int = 2, pooling: str = "avg") -> list[LayerSpec]:
    """The lightweight balance network: two conv/pool stages and two dense layers."""
    kind = {"avg": "avgpool", "max": "maxpool"}[pooling]
    return [
        conv(6, kernel=5, padding=2),
        pool(kind, 2, 2),
        conv(16, kernel=3, padding=2),
        pool(kind, 2, 2),
        FLATTEN,
        dense(256),
        dense(num_classes, activation="softmax"),
    ]


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Network:
    """Layer chain plus parameters, for a fixed input shape ``(channels, length)``."""

    def __init__(self, layers, input_shape, seed=0, params=None):
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in layers]
        self.input_shape = tuple(int(v) for v in input_shape)
        self.shapes = self._infer_shapes()
        self.param_shapes = self._param_shapes()
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = [np.asarray(p, dtype=np.float64) for p in params]

    # shapes -------------------------------------------------------------------------------
    def _infer_shapes(self):
        shape = self.input_shape
        shapes = [shape]
        for idx, spec in enumerate(self.layers):
            where = f"layer {idx} ({spec.kind})"
            if spec.kind == "conv1d":
                if len(shape) != 2:
                    raise ShapeError(f"{where}: expects (channels, length) input, got {shape}")
                length = (shape[1] + 2 * spec.padding - spec.kernel) // spec.stride + 1
                if length < 1:
                    raise ShapeError(f"{where}: input length {shape[1]} too short for kernel {spec.kernel}")
                shape = (spec.out, length)
            elif spec.kind in ("avgpool", "maxpool"):
                if len(shape) != 2:
                    raise ShapeError(f"{where}: expects (channels, length) input, got {shape}")
                length = (shape[1] - spec.kernel) // spec.stride + 1
                if length < 1:
                    raise ShapeError(f"{where}: input length {shape[1]} too short for kernel {spec.kernel}")
                shape = (shape[0], length)
            elif spec.kind == "flatten":
                shape = (int(np.prod(shape)),)
            else:
                if len(shape) != 1:
                    raise ShapeError(f"{where}: dense layer needs flattened input, got {shape}")
                shape = (spec.out,)
            shapes.append(shape)
        if len(shapes[-1]) != 1:
            raise ShapeError("network must end in a dense layer")
        return shapes

    def _param_shapes(self):
        out = []
        for spec, shape in zip(self.layers, self.shapes):
            if spec.kind == "conv1d":
                out.append([(spec.out, shape[0], spec.kernel), (spec.out,)])
            elif spec.kind == "dense":
                out.append([(shape[0], spec.out), (spec.out,)])
            else:
                out.append([])
        return out

    def _init_params(self, rng):
        params = []
        for layer_shapes in self.param_shapes:
            if not layer_shapes:
                continue
            w_shape, b_shape = layer_shapes
            fan_in = int(np.prod(w_shape[1:])) if len(w_shape) == 3 else w_shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params.append(rng.uniform(-bound, bound, size=w_shape))
            params.append(np.zeros(b_shape))
        return params

    @property
    def num_classes(self):
        return self.shapes[-1][0]

    def param_counts(self) -> list[int]:
        """Parameter count per parameterised layer."""
        return [sum(int(np.prod(s)) for s in ls) for ls in self.param_shapes if ls]

    def num_params(self) -> int:
        return sum(self.param_counts())

    def copy(self):
        return Network(self.layers, self.input_shape, params=[p.copy() for p in self.params])

    # forward / backward ---------------------------------------------------------------------
    def _prepare(self, x):
        x = np.asarray(x, dtype=np.float64)
        shape = self.input_shape
        if x.shape == shape:
            x = x[None]
        elif len(shape) == 2 and shape[0] == 1 and x.shape == shape[1:]:
            x = x[None, None, :]
        elif len(shape) == 2 and shape[0] == 1 and x.ndim == 2 and x.shape[1] == shape[1]:
            x = x[:, None, :]
        if x.shape[1:] != shape:
            raise ShapeError(f"layer 0 ({self.layers[0].kind}): input shape {x.shape[1:]} "
                             f"does not match network input {shape}")
        return x

    def forward(self, x, keep=False):
        """Class probabilities for a batch (or a single input)."""
        x = self._prepare(x)
        cache = []
        p = 0
        for spec in self.layers:
            if spec.kind == "conv1d":
                w, b = self.params[p], self.params[p + 1]
                p += 2
                xp = np.pad(x, ((0, 0), (0, 0), (spec.padding, spec.padding))) if spec.padding else x
                cols = sliding_window_view(xp, spec.kernel, axis=2)[:, :, ::spec.stride, :]
                z = np.einsum("bclk,ock->bol", cols, w, optimize=True) + b[None, :, None]
                cache.append((xp.shape, cols))
            elif spec.kind in ("avgpool", "maxpool"):
                bsz, ch, length = x.shape
                if spec.stride == spec.kernel:
                    n_out = length // spec.kernel
                    blocks = x[:, :, :n_out * spec.kernel].reshape(bsz, ch, n_out, spec.kernel)
                else:
                    blocks = sliding_window_view(x, spec.kernel, axis=2)[:, :, ::spec.stride, :]
                if spec.kind == "avgpool":
                    z = blocks.mean(axis=3)
                    cache.append((x.shape, None))
                else:
                    arg = blocks.argmax(axis=3)
                    z = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]
                    cache.append((x.shape, arg))
            elif spec.kind == "flatten":
                cache.append(x.shape)
                z = x.reshape(x.shape[0], -1)
            else:
                w, b = self.params[p], self.params[p + 1]
                p += 2
                cache.append(x)
                z = x @ w + b
            if spec.activation == "relu":
                z = np.maximum(z, 0.0)
            elif spec.activation == "softmax":
                z = softmax(z)
            if keep:
                cache[-1] = (cache[-1], z)
            x = z
        if keep:
            return x, cache
        return x

    def predict_proba(self, x):
        return self.forward(x)

    def loss_and_grads(self, x, y):
        """Mean softmax cross-entropy over the batch and its parameter gradients."""
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        probs, cache = self.forward(x, keep=True)
        bsz = probs.shape[0]
        eps = np.finfo(np.float64).tiny
        loss = float(-np.mean(np.log(np.maximum(probs[np.arange(bsz), y], eps))))
        if self.layers[-1].activation != "softmax":
            raise ShapeError("loss needs a softmax output layer")
        grad = probs.copy()
        grad[np.arange(bsz), y] -= 1.0
        grad /= bsz
        grads = [None] * len(self.params)
        p = len(self.params)
        for idx in range(len(self.layers) - 1, -1, -1):
            spec = self.layers[idx]
            inner, out = cache[idx]
            if spec.activation == "relu":
                grad = grad * (out > 0)
            # softmax is folded into the loss gradient above
            if spec.kind == "conv1d":
                p -= 2
                w = self.params[p]
                xp_shape, cols = inner
                grads[p] = np.einsum("bol,bclk->ock", grad, cols, optimize=True)
                grads[p + 1] = grad.sum(axis=(0, 2))
                dcols = np.einsum("bol,ock->bclk", grad, w, optimize=True)
                dxp = np.zeros(xp_shape)
                n_out = grad.shape[2]
                for k in range(spec.kernel):
                    stop = k + spec.stride * (n_out - 1) + 1
                    dxp[:, :, k:stop:spec.stride] += dcols[:, :, :, k]
                grad = dxp[:, :, spec.padding:xp_shape[2] - spec.padding] if spec.padding else dxp
            elif spec.kind in ("avgpool", "maxpool"):
                x_shape, arg = inner
                n_out = grad.shape[2]
                dx = np.zeros(x_shape)
                if spec.kind == "avgpool":
                    for k in range(spec.kernel):
                        stop = k + spec.stride * (n_out - 1) + 1
                        dx[:, :, k:stop:spec.stride] += grad / spec.kernel
                else:
                    for k in range(spec.kernel):
                        stop = k + spec.stride * (n_out - 1) + 1
                        dx[:, :, k:stop:spec.stride] += grad * (arg == k)
                grad = dx
            elif spec.kind == "flatten":
                grad = grad.reshape(inner)
            else:
                p -= 2
                w = self.params[p]
                grads[p] = inner.T @ grad
                grads[p + 1] = grad.sum(axis=0)
                grad = grad @ w.T
        return loss, grads


@dataclass
class OptimState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_every: int = 30
    decay_factor: float = 0.1
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epsilon <= 0 or self.learning_rate <= 0:
            raise ValueError("learning rate and epsilon must be > 0")

    def rate_at(self, epoch: int) -> float:
        """Step-decayed learning rate for a zero-based epoch index."""
        if self.decay_every <= 0:
            return self.learning_rate
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)


def adam_step(opt: OptimState, params, grads, epoch: int = 0):
    """One bias-corrected Adam update, in place.  Returns ``params``."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient at Adam step {opt.step_count + 1}")
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    opt.step_count += 1
    lr = opt.rate_at(epoch)
    c1 = 1.0 - opt.beta1 ** opt.step_count
    c2 = 1.0 - opt.beta2 ** opt.step_count
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        if p.shape != g.shape:
            raise ValueError(f"parameter shape {p.shape} != gradient shape {g.shape}")
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + opt.epsilon)
    return params


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_every: int = 30
    decay_factor: float = 0.1


@dataclass
class TrainResult:
    net: Network
    curve: list  # (epoch, train_loss, val_acc)
    best_epoch: int
    steps: int


def accuracy_of(net: Network, x, y, batch: int = 256) -> float:
    y = np.asarray(y)
    correct = 0
    for i in range(0, len(y), batch):
        correct += int(np.sum(net.forward(x[i:i + batch]).argmax(axis=1) == y[i:i + batch]))
    return correct / len(y)


def evaluate(net: Network, x, y, batch: int = 256) -> tuple[float, float]:
    """Accuracy and mean cross-entropy on a labelled set."""
    y = np.asarray(y)
    correct, total = 0, 0.0
    for i in range(0, len(y), batch):
        p = net.forward(x[i:i + batch])
        yb = y[i:i + batch]
        correct += int(np.sum(p.argmax(axis=1) == yb))
        total -= float(np.sum(np.log(np.maximum(p[np.arange(len(yb)), yb], 1e-300))))
    return correct / len(y), total / len(y)


def train(net: Network, x_train, y_train, x_val=None, y_val=None,
          config: TrainConfig = TrainConfig(), seed: int = 0) -> TrainResult:
    """Mini-batch Adam training; keeps the parameters of the best validation epoch.

    Best means highest validation accuracy, ties broken by lower validation
    cross-entropy and then by the earlier epoch.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if np.unique(y_train).size < 2:
        raise TrainingError("training split needs at least two classes")
    if x_val is None:
        x_val, y_val = x_train, y_train
    rng = np.random.default_rng(seed)
    opt = OptimState(config.learning_rate, config.beta1, config.beta2, config.epsilon,
                     config.decay_every, config.decay_factor)
    n = len(y_train)
    best_key, best_epoch, best_params = None, -1, None
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = net.loss_and_grads(x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            adam_step(opt, net.params, grads, epoch)
            total += loss * len(idx)
        val_acc, val_loss = evaluate(net, x_val, y_val)
        curve.append((epoch, total / n, val_acc, val_loss))
        key = (-val_acc, val_loss)
        if best_key is None or key < best_key:
            best_key, best_epoch = key, epoch
            best_params = [p.copy() for p in net.params]
        log.debug("epoch %d loss %.5f val_acc %.4f val_loss %.5f", epoch, total / n, val_acc, val_loss)
    net.params = best_params
    return TrainResult(net, curve, best_epoch, opt.step_count)


def write_curve_csv(curve, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_acc\n")
        for epoch, loss, acc, *_ in curve:
            fh.write(f"{epoch},{loss!r},{acc!r}\n")
