"""Statistical feature pool computed from a single current window.

Five of the features (variance, entropy, range, rms, integral) form the
default ground-truth set used when scoring feature-pool models.  The
remaining ones are secondary descriptors.  Definitions that are not fixed by
convention:

* entropy: Shannon entropy in bits of a 64-bin amplitude histogram over
  ``[min, max]``;
* kurtosis: Pearson (non-excess) ``m4 / m2**2``;
* zero_current_period: fraction of samples with ``|x| < 0.05 * max|x|``;
* max_slip: largest one-step absolute difference.

A constant window is degenerate: its entropy, skewness and kurtosis are 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

GROUND_TRUTH = ("variance", "entropy", "range", "rms", "integral")
DEFAULT_POOL = ("mean", "variance", "range", "rms", "integral", "entropy", "skewness",
                "kurtosis", "l1", "l2", "zero_current_period", "max_slip")
HIST_BINS = 64
ZERO_CURRENT_LEVEL = 0.05


def _moments(x):
    c = x - x.mean()
    m2 = float(np.mean(c * c))
    return c, m2


def _entropy(x):
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return 0.0
    counts, _ = np.histogram(x, bins=HIST_BINS, range=(lo, hi))
    p = counts[counts > 0] / x.size
    return float(-np.sum(p * np.log2(p)))


def _standardized_moment(x, order):
    # both moments are scale invariant, so work on c / max|c| to avoid underflow
    if x.min() == x.max():
        return 0.0
    c = x - x.mean()
    s = float(np.max(np.abs(c)))
    if s == 0.0:
        return 0.0
    u = c / s
    m2 = float(np.mean(u * u))
    return float(np.mean(u ** order) / m2 ** (order / 2))


def _skewness(x):
    return _standardized_moment(x, 3)


def _kurtosis(x):
    return _standardized_moment(x, 4)


def _zero_current_period(x):
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        return 1.0
    return float(np.mean(np.abs(x) < ZERO_CURRENT_LEVEL * peak))


FEATURES = {
    "mean": lambda x, dt: float(np.mean(x)),
    "variance": lambda x, dt: _moments(x)[1],
    "range": lambda x, dt: float(x.max() - x.min()),
    "rms": lambda x, dt: float(np.sqrt(np.mean(x * x))),
    "integral": lambda x, dt: float(np.sum(np.abs(x)) * dt),
    "entropy": lambda x, dt: _entropy(x),
    "skewness": lambda x, dt: _skewness(x),
    "kurtosis": lambda x, dt: _kurtosis(x),
    "l1": lambda x, dt: float(np.sum(np.abs(x))),
    "l2": lambda x, dt: float(np.sqrt(np.sum(x * x))),
    "zero_current_period": lambda x, dt: _zero_current_period(x),
    "max_slip": lambda x, dt: float(np.max(np.abs(np.diff(x)))),
}


@dataclass(frozen=True)
class FeaturePool:
    names: tuple[str, ...] = DEFAULT_POOL
    ground_truth: tuple[str, ...] = GROUND_TRUTH

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        unknown = [n for n in names if n not in FEATURES]
        if unknown:
            raise ValueError(f"unknown features: {unknown}")
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names in pool")
        missing = [n for n in self.ground_truth if n not in names]
        if missing:
            raise ValueError(f"pool is missing ground-truth features {missing}")
        if not 5 <= len(names) <= 15:
            raise ValueError(f"pool size must lie in [5, 15], got {len(names)}")

    @property
    def d(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray
    degenerate: bool = False

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def extract(win, pool: FeaturePool = FeaturePool()) -> FeatureVector:
    x = np.asarray(win.samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("feature extraction needs at least 2 samples")
    values = np.array([FEATURES[n](x, win.sample_period) for n in pool.names])
    if not np.all(np.isfinite(values)):
        bad = [n for n, v in zip(pool.names, values) if not np.isfinite(v)]
        raise ValueError(f"non-finite features {bad}")
    return FeatureVector(pool.names, values, degenerate=bool(x.min() == x.max()))


def feature_matrix(windows: Iterable, pool: FeaturePool = FeaturePool()) -> np.ndarray:
    return np.stack([extract(w, pool).values for w in windows])


def write_feature_csv(path, matrix: np.ndarray, labels: Sequence[int], pool: FeaturePool,
                      window_ids: Sequence[int] | None = None) -> None:
    """Header is the pool order; first column window_id, last column label."""
    if window_ids is None:
        window_ids = range(len(labels))
    with open(path, "w") as fh:
        fh.write(",".join(["window_id", *pool.names, "label"]) + "\n")
        for wid, row, lab in zip(window_ids, matrix, labels):
            fh.write(",".join([str(int(wid)), *(repr(float(v)) for v in row), str(int(lab))]) + "\n")


def read_feature_csv(path):
    """Returns ``(names, window_ids, matrix, labels)``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "window_id" or header[-1] != "label":
            raise ValueError(f"{path}: unexpected feature CSV header")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    ids = np.array([int(r[0]) for r in rows])
    matrix = np.array([[float(v) for v in r[1:-1]] for r in rows])
    labels = np.array([int(r[-1]) for r in rows])
    return tuple(header[1:-1]), ids, matrix, labels
