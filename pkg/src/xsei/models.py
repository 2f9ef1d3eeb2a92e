"""The model zoo behind one prediction interface.

Feature-pool models (KNN, CART, bagged trees, regularised logistic regression)
take feature matrices; raw-signal models (LBNN with average or max pooling)
take current windows.  Every model maps a batch to class-probability rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .features import FeatureVector
from .signal import SignalWindow

FEATURE_POOL = "feature_pool"
RAW_SIGNAL = "raw_signal"
MODEL_NAMES = ("knn", "cart", "ensemble", "linear", "lbnn_avg", "lbnn_max")


class FamilyMismatch(TypeError):
    pass


@dataclass(frozen=True)
class ZooConfig:
    knn_k: int = 5
    tree_max_depth: int | None = 8
    min_leaf: int = 2
    ensemble_size: int = 50
    ensemble_max_features: str | int | None = "sqrt"
    linear_penalty: str = "l2"
    linear_strength: float = 1e-2
    linear_max_iter: int = 2000
    lbnn: nncore.TrainConfig = field(default_factory=nncore.TrainConfig)

    def __post_init__(self):
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.linear_penalty not in ("l1", "l2"):
            raise ValueError("linear_penalty must be 'l1' or 'l2'")

    @classmethod
    def from_dict(cls, d: dict) -> "ZooConfig":
        d = dict(d)
        if "lbnn" in d and isinstance(d["lbnn"], dict):
            d["lbnn"] = nncore.TrainConfig(**d["lbnn"])
        return cls(**d)


class TrainedModel:
    family: str = FEATURE_POOL
    name: str = "model"

    def __init__(self, num_classes: int, descriptor: dict):
        self.num_classes = int(num_classes)
        self.descriptor = descriptor

    def predict_proba(self, x) -> np.ndarray:
        raise NotImplementedError

    def state(self) -> tuple[dict, dict]:
        """(json-able header, named float arrays) for checkpointing."""
        raise NotImplementedError


def _standardizer(x):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def _as_matrix(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != d:
        raise ValueError(f"expected {d} features, got {x.shape[1]}")
    return x


def _check_training(features, labels):
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training set is empty")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must match feature rows")
    if np.any(y < 0):
        raise ValueError("labels must be >= 0")
    return x, y


# --- KNN ---------------------------------------------------------------------------------

class KNNModel(TrainedModel):
    name = "knn"

    def __init__(self, x, y, k, num_classes, mu, sd):
        super().__init__(num_classes, {"name": "knn", "k": int(k)})
        self.x, self.y, self.k, self.mu, self.sd = x, y, int(k), mu, sd
        self._z = (x - mu) / sd

    def predict_proba(self, x, chunk=512):
        z = (_as_matrix(x, self.x.shape[1]) - self.mu) / self.sd
        out = np.empty((z.shape[0], self.num_classes))
        for i in range(0, z.shape[0], chunk):
            q = z[i:i + chunk]
            dist = np.sum((q[:, None, :] - self._z[None, :, :]) ** 2, axis=2)
            # stable sort: equal distances resolve to the lower training index
            nearest = np.argsort(dist, axis=1, kind="stable")[:, :self.k]
            votes = self.y[nearest]
            for c in range(self.num_classes):
                out[i:i + chunk, c] = np.sum(votes == c, axis=1) / self.k
        return out

    def state(self):
        return ({"k": self.k, "num_classes": self.num_classes},
                {"x": self.x, "y": self.y.astype(np.float64), "mu": self.mu, "sd": self.sd})

    @classmethod
    def from_state(cls, header, arrays):
        return cls(arrays["x"], arrays["y"].astype(np.int64), header["k"], header["num_classes"],
                   arrays["mu"], arrays["sd"])


def fit_knn(features, labels, k=5, num_classes=None) -> KNNModel:
    x, y = _check_training(features, labels)
    if k > len(y):
        raise ValueError(f"k={k} exceeds training set size {len(y)}")
    mu, sd = _standardizer(x)
    return KNNModel(x, y, k, num_classes or int(y.max()) + 1, mu, sd)


# --- CART --------------------------------------------------------------------------------

@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, x):
        n = x.shape[0]
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = x[rows, np.where(inner, f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict_proba(self, x):
        return self.value[self.apply(x)]

    @property
    def depth(self):
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def equals(self, other) -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("feature", "threshold", "left", "right", "value"))


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _best_split(x, y, idx, features, num_classes, min_leaf):
    """Lowest weighted child Gini over candidate features; first wins on ties."""
    n = len(idx)
    best = (np.inf, -1, 0.0)
    onehot = np.eye(num_classes)[y[idx]]
    for f in features:
        col = x[idx, f]
        order = np.argsort(col, kind="stable")
        sc = col[order]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        total = left[-1] + onehot[order[-1]] if n > 1 else onehot[order[0]]
        right = total - left
        nl = np.arange(1, n)
        nr = n - nl
        valid = (sc[1:] > sc[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not valid.any():
            continue
        gl = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
        gr = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
        cost = (nl * gl + nr * gr) / n
        cost = np.where(valid, cost, np.inf)
        j = int(np.argmin(cost))
        if cost[j] < best[0]:
            best = (float(cost[j]), int(f), float((sc[j] + sc[j + 1]) / 2.0))
    return best


def grow_tree(x, y, num_classes, max_depth=None, min_leaf=1, max_features=None, rng=None) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []
    d = x.shape[1]

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=num_classes).astype(np.float64)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=num_classes)
        parent = gini(counts)
        if parent == 0.0 or (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
            continue
        if max_features is None or max_features >= d:
            candidates = range(d)
        else:
            candidates = np.sort(rng.choice(d, size=max_features, replace=False))
        cost, f, thr = _best_split(x, y, idx, candidates, num_classes, min_leaf)
        if f < 0 or not cost < parent:
            continue
        go_left = x[idx, f] <= thr
        li, ri = new_node(idx[go_left]), new_node(idx[~go_left])
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        # right pushed first so the left subtree is grown first
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value).reshape(-1, num_classes))


def _tree_arrays(prefix, tree):
    return {f"{prefix}feature": tree.feature.astype(np.float64),
            f"{prefix}threshold": tree.threshold,
            f"{prefix}left": tree.left.astype(np.float64),
            f"{prefix}right": tree.right.astype(np.float64),
            f"{prefix}value": tree.value}


def _tree_from_arrays(prefix, arrays):
    return Tree(arrays[f"{prefix}feature"].astype(np.int64), arrays[f"{prefix}threshold"],
                arrays[f"{prefix}left"].astype(np.int64), arrays[f"{prefix}right"].astype(np.int64),
                arrays[f"{prefix}value"])


class CARTModel(TrainedModel):
    name = "cart"

    def __init__(self, tree, num_classes, d, descriptor=None):
        super().__init__(num_classes, descriptor or {"name": "cart"})
        self.tree, self.d = tree, d

    def predict_proba(self, x):
        return self.tree.predict_proba(_as_matrix(x, self.d))

    def state(self):
        return ({"num_classes": self.num_classes, "d": self.d, "descriptor": self.descriptor},
                _tree_arrays("", self.tree))

    @classmethod
    def from_state(cls, header, arrays):
        return cls(_tree_from_arrays("", arrays), header["num_classes"], header["d"],
                   header["descriptor"])


def fit_cart(features, labels, max_depth=8, min_leaf=2, num_classes=None) -> CARTModel:
    x, y = _check_training(features, labels)
    c = num_classes or int(y.max()) + 1
    tree = grow_tree(x, y, c, max_depth=max_depth, min_leaf=min_leaf)
    return CARTModel(tree, c, x.shape[1],
                     {"name": "cart", "max_depth": max_depth, "min_leaf": min_leaf})


# --- bagged ensemble ---------------------------------------------------------------------

class EnsembleModel(TrainedModel):
    name = "ensemble"

    def __init__(self, trees, num_classes, d, descriptor):
        super().__init__(num_classes, descriptor)
        self.trees, self.d = trees, d

    def predict_proba(self, x):
        x = _as_matrix(x, self.d)
        total = np.zeros((x.shape[0], self.num_classes))
        for t in self.trees:
            total += t.predict_proba(x)
        return total / len(self.trees)

    def state(self):
        arrays = {}
        for i, t in enumerate(self.trees):
            arrays.update(_tree_arrays(f"t{i}.", t))
        return ({"num_classes": self.num_classes, "d": self.d, "size": len(self.trees),
                 "descriptor": self.descriptor}, arrays)

    @classmethod
    def from_state(cls, header, arrays):
        trees = [_tree_from_arrays(f"t{i}.", arrays) for i in range(header["size"])]
        return cls(trees, header["num_classes"], header["d"], header["descriptor"])


def _resolve_max_features(spec, d):
    if spec is None:
        return None
    if spec == "sqrt":
        return max(1, int(np.sqrt(d)))
    return int(spec)


def fit_ensemble(features, labels, size=50, seed=0, max_depth=8, min_leaf=2,
                 max_features="sqrt", bootstrap=True, num_classes=None) -> EnsembleModel:
    """Bagged CART trees with a random feature subset at every split."""
    if size < 1:
        raise ValueError("ensemble size must be >= 1")
    x, y = _check_training(features, labels)
    c = num_classes or int(y.max()) + 1
    n, d = x.shape
    mf = _resolve_max_features(max_features, d)
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(size):
        idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(grow_tree(x[idx], y[idx], c, max_depth=max_depth, min_leaf=min_leaf,
                               max_features=mf, rng=rng))
    return EnsembleModel(trees, c, d, {"name": "ensemble", "size": size, "seed": seed,
                                       "max_depth": max_depth, "min_leaf": min_leaf,
                                       "max_features": max_features, "bootstrap": bootstrap})


# --- regularised logistic regression -----------------------------------------------------

class LinearModel(TrainedModel):
    name = "linear"

    def __init__(self, w, b, mu, sd, num_classes, descriptor, converged=True):
        super().__init__(num_classes, descriptor)
        self.w, self.b, self.mu, self.sd = w, b, mu, sd
        self.converged = converged

    def predict_proba(self, x):
        z = (_as_matrix(x, self.w.shape[0]) - self.mu) / self.sd
        return nncore.softmax(z @ self.w + self.b)

    def state(self):
        return ({"num_classes": self.num_classes, "descriptor": self.descriptor,
                 "converged": self.converged},
                {"w": self.w, "b": self.b, "mu": self.mu, "sd": self.sd})

    @classmethod
    def from_state(cls, header, arrays):
        return cls(arrays["w"], arrays["b"], arrays["mu"], arrays["sd"], header["num_classes"],
                   header["descriptor"], header["converged"])


def fit_linear(features, labels, penalty="l2", strength=1e-2, seed=0, max_iter=2000,
               learning_rate=0.5, tol=1e-8, num_classes=None) -> LinearModel:
    """Multinomial logistic regression by full-batch gradient descent.

    The L1 penalty is applied with a proximal soft-threshold step; the bias is
    never penalised.  Weights start at zero, so ``seed`` only tags the model.
    """
    if penalty not in ("l1", "l2"):
        raise ValueError("penalty must be 'l1' or 'l2'")
    x, y = _check_training(features, labels)
    c = num_classes or int(y.max()) + 1
    mu, sd = _standardizer(x)
    z = (x - mu) / sd
    n, d = z.shape
    onehot = np.eye(c)[y]
    w = np.zeros((d, c))
    b = np.zeros(c)
    # Lipschitz bound of the unpenalised loss in (w, b); the weight step also
    # absorbs the L2 curvature so any strength stays stable while the bias
    # keeps a full-size step
    lipschitz = 0.5 * (np.linalg.norm(z, 2) ** 2 + n) / n
    lr_b = min(learning_rate, 1.0 / lipschitz)
    lr = min(learning_rate, 1.0 / (lipschitz + (strength if penalty == "l2" else 0.0)))
    converged = False
    for _ in range(max_iter):
        p = nncore.softmax(z @ w + b)
        gz = (p - onehot) / n
        gw = z.T @ gz
        gb = gz.sum(axis=0)
        if penalty == "l2":
            gw = gw + strength * w
            w_new = w - lr * gw
        else:
            step = w - lr * gw
            w_new = np.sign(step) * np.maximum(np.abs(step) - lr * strength, 0.0)
        b_new = b - lr_b * gb
        delta = max(np.max(np.abs(w_new - w)), np.max(np.abs(b_new - b)))
        w, b = w_new, b_new
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"logistic regression did not converge in {max_iter} iterations",
                      RuntimeWarning, stacklevel=2)
    return LinearModel(w, b, mu, sd, c, {"name": "linear", "penalty": penalty,
                                          "strength": strength, "seed": seed}, converged)


# --- LBNN --------------------------------------------------------------------------------

class LBNNModel(TrainedModel):
    family = RAW_SIGNAL

    def __init__(self, net: nncore.Network, input_scale: float, descriptor, curve=None):
        super().__init__(net.num_classes, descriptor)
        self.net = net
        self.input_scale = float(input_scale)
        self.curve = curve or []
        self.name = descriptor.get("name", "lbnn")

    def predict_proba(self, x, batch=256):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        out = [self.net.forward(x[i:i + batch] / self.input_scale) for i in range(0, len(x), batch)]
        return np.concatenate(out)

    def state(self):
        arrays = {f"p{i}": p for i, p in enumerate(self.net.params)}
        return ({"layers": [l.to_dict() for l in self.net.layers],
                 "input_shape": list(self.net.input_shape), "input_scale": self.input_scale,
                 "descriptor": self.descriptor}, arrays)

    @classmethod
    def from_state(cls, header, arrays):
        params = [arrays[f"p{i}"] for i in range(len(arrays))]
        net = nncore.Network(header["layers"], header["input_shape"], params=params)
        return cls(net, header["input_scale"], header["descriptor"])


def fit_lbnn(windows, labels, variant="avg", config: nncore.TrainConfig = nncore.TrainConfig(),
             seed=0, val_windows=None, val_labels=None, num_classes=2) -> LBNNModel:
    """Train the lightweight balance network on raw windows (arrays or SignalWindows)."""
    x = _window_array(windows)
    y = np.asarray(labels, dtype=np.int64)
    if val_windows is not None:
        xv, yv = _window_array(val_windows), np.asarray(val_labels, dtype=np.int64)
    else:
        xv, yv = x, y
    scale = float(np.sqrt(np.mean(x * x))) or 1.0
    net = nncore.Network(nncore.lbnn_layers(num_classes, variant), (1, x.shape[1]), seed=seed)
    result = nncore.train(net, x / scale, y, xv / scale, yv, config, seed=seed)
    name = f"lbnn_{variant}"
    return LBNNModel(result.net, scale, {"name": name, "variant": variant, "seed": seed,
                                         "best_epoch": result.best_epoch}, result.curve)


def _window_array(windows):
    rows = [w.samples if isinstance(w, SignalWindow) else np.asarray(w, dtype=np.float64)
            for w in windows]
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"all windows must share one length, got {sorted(lengths)}")
    return np.stack(rows)


# --- common interface --------------------------------------------------------------------

def predict(model: TrainedModel, item) -> np.ndarray:
    """Probability vector for one feature vector or one window."""
    if isinstance(item, FeatureVector):
        if model.family != FEATURE_POOL:
            raise FamilyMismatch(f"{model.name} takes raw windows, got a feature vector")
        return model.predict_proba(item.values[None])[0]
    if isinstance(item, SignalWindow):
        if model.family != RAW_SIGNAL:
            raise FamilyMismatch(f"{model.name} takes feature vectors, got a signal window")
        return model.predict_proba(item.samples[None])[0]
    raise FamilyMismatch(f"cannot predict on {type(item).__name__}")


def accuracy(model: TrainedModel, inputs, labels) -> float:
    """Share of argmax-correct predictions; ties go to the lowest class index."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("test set is empty")
    probs = model.predict_proba(inputs)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


MODEL_CLASSES = {"knn": KNNModel, "cart": CARTModel, "ensemble": EnsembleModel,
                 "linear": LinearModel, "lbnn": LBNNModel}


def fit_named(name, zoo: ZooConfig, seed, train_x, train_y, val_x=None, val_y=None,
              num_classes=2) -> TrainedModel:
    """Fit a zoo member by name; raw-signal models take windows, others features."""
    if name == "knn":
        return fit_knn(train_x, train_y, zoo.knn_k, num_classes)
    if name == "cart":
        return fit_cart(train_x, train_y, zoo.tree_max_depth, zoo.min_leaf, num_classes)
    if name == "ensemble":
        return fit_ensemble(train_x, train_y, zoo.ensemble_size, seed, zoo.tree_max_depth,
                            zoo.min_leaf, zoo.ensemble_max_features, num_classes=num_classes)
    if name == "linear":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return fit_linear(train_x, train_y, zoo.linear_penalty, zoo.linear_strength, seed,
                              zoo.linear_max_iter, num_classes=num_classes)
    if name in ("lbnn_avg", "lbnn_max"):
        return fit_lbnn(train_x, train_y, name.split("_")[1], zoo.lbnn, seed, val_x, val_y,
                        num_classes)
    raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")


def family_of(name: str) -> str:
    return RAW_SIGNAL if name.startswith("lbnn") else FEATURE_POOL
