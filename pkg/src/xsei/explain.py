"""Model-agnostic attribution.

Shapley values over feature coalitions (exact enumeration or permutation
sampling) and occlusion sensitivity over contiguous signal regions.
Coalitions are encoded as bitmasks: bit ``i`` set means feature ``i`` is
present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable

import numpy as np

from .models import FEATURE_POOL, RAW_SIGNAL, FamilyMismatch, TrainedModel

MAX_EXACT_FEATURES = 15
MARGINAL_CAP = 128
REMOVALS = ("baseline", "random_sample", "marginal")
BASELINES = ("constant", "noise", "blur")
BLUR_WIDTH = 9


def masks_to_matrix(masks: np.ndarray, d: int) -> np.ndarray:
    """Boolean ``(len(masks), d)`` membership matrix for integer bitmasks."""
    return ((np.asarray(masks)[:, None] >> np.arange(d)) & 1).astype(bool)


def popcount(masks: np.ndarray) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.int64)
    count = np.zeros_like(masks)
    while np.any(masks):
        count += masks & 1
        masks = masks >> 1
    return count


class CoalitionGame:
    """A set function over ``d`` players with memoised evaluations.

    ``batch_fn`` maps a boolean membership matrix ``(m, d)`` to ``m`` values.
    """

    def __init__(self, d: int, batch_fn: Callable[[np.ndarray], np.ndarray], removal: str = "custom",
                 background=None, target_class: int | None = None):
        if d < 1:
            raise ValueError("a game needs at least one player")
        self.d = int(d)
        self._batch_fn = batch_fn
        self.removal = removal
        self.background = background
        self.target_class = target_class
        self._memo: dict[int, float] = {}
        self._table: np.ndarray | None = None
        self.calls = 0

    @classmethod
    def from_table(cls, values) -> "CoalitionGame":
        """Game whose value for bitmask ``s`` is ``values[s]``."""
        values = np.asarray(values, dtype=np.float64)
        d = int(round(math.log2(values.size)))
        if 2 ** d != values.size:
            raise ValueError("table length must be a power of two")
        powers = 1 << np.arange(d)

        def fn(members):
            return values[members.astype(np.int64) @ powers]
        return cls(d, fn)

    @classmethod
    def from_function(cls, d: int, fn: Callable[[frozenset], float]) -> "CoalitionGame":
        def batch(members):
            return np.array([fn(frozenset(np.flatnonzero(row).tolist())) for row in members])
        return cls(d, batch)

    def evaluate(self, subset) -> float:
        mask = subset if isinstance(subset, (int, np.integer)) else sum(1 << int(i) for i in subset)
        mask = int(mask)
        if self._table is not None:
            return float(self._table[mask])
        if mask not in self._memo:
            self.calls += 1
            self._memo[mask] = float(self._batch_fn(masks_to_matrix(np.array([mask]), self.d))[0])
        return self._memo[mask]

    def table(self) -> np.ndarray:
        """All ``2**d`` coalition values, evaluated once."""
        if self._table is None:
            if self.d > MAX_EXACT_FEATURES:
                raise ValueError(f"exact enumeration is capped at d <= {MAX_EXACT_FEATURES} "
                                 f"(got d={self.d}); use shapley_sampled instead")
            masks = np.arange(2 ** self.d)
            self.calls += 1
            self._table = np.asarray(self._batch_fn(masks_to_matrix(masks, self.d)), dtype=np.float64)
        return self._table

    @property
    def full(self) -> float:
        return self.evaluate((1 << self.d) - 1)

    @property
    def empty(self) -> float:
        return self.evaluate(0)


def _weights(d: int) -> np.ndarray:
    # |s|! (d - |s| - 1)! / d! for |s| = 0 .. d-1
    return np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d)
                     for s in range(d)])


def shapley_values(game: CoalitionGame) -> np.ndarray:
    """Exact Shapley value of every player from one pass over the coalition table."""
    if game.d > MAX_EXACT_FEATURES:
        raise ValueError(f"exact Shapley values need d <= {MAX_EXACT_FEATURES}, got {game.d}; "
                         "use shapley_sampled")
    values = game.table()
    d = game.d
    masks = np.arange(2 ** d)
    sizes = popcount(masks)
    w = _weights(d)
    phi = np.empty(d)
    for i in range(d):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = np.sum(w[sizes[without]] * (values[without | bit] - values[without]))
    return phi


def shapley_exact(game: CoalitionGame, i: int) -> float:
    if not 0 <= i < game.d:
        raise IndexError(f"feature index {i} out of range for d={game.d}")
    if game.d > MAX_EXACT_FEATURES:
        raise ValueError(f"exact Shapley values need d <= {MAX_EXACT_FEATURES}, got {game.d}; "
                         "use shapley_sampled")
    return float(shapley_values(game)[i])


def shapley_sampled(game: CoalitionGame, i: int, num_permutations: int, seed: int = 0) -> float:
    """Permutation-sampling estimate of one Shapley value.

    When ``num_permutations`` reaches ``d!`` every ordering is enumerated once,
    which returns the exact value.
    """
    if num_permutations < 1:
        raise ValueError("num_permutations must be >= 1")
    d = game.d
    if d <= 10 and num_permutations >= math.factorial(d):
        orders = permutations(range(d))
        count = math.factorial(d)
    else:
        rng = np.random.default_rng(seed)
        orders = (rng.permutation(d) for _ in range(num_permutations))
        count = num_permutations
    total = 0.0
    for order in orders:
        before = 0
        for j in order:
            if j == i:
                break
            before |= 1 << int(j)
        total += game.evaluate(before | (1 << i)) - game.evaluate(before)
    return total / count


def make_game(model: TrainedModel, sample, target_class: int, removal: str = "baseline",
              background=None, seed: int = 0, cap: int = MARGINAL_CAP) -> CoalitionGame:
    """Coalition game on one sample: absent features are replaced from ``background``.

    * baseline: background column means;
    * random_sample: one seeded background row;
    * marginal: the prediction averaged over background rows (at most ``cap``,
      a seeded subsample).
    """
    if model.family != FEATURE_POOL:
        raise FamilyMismatch(f"{model.name} is not a feature-pool model")
    if removal not in REMOVALS:
        raise ValueError(f"removal must be one of {REMOVALS}")
    x = np.asarray(getattr(sample, "values", sample), dtype=np.float64).reshape(-1)
    d = x.size
    bg = None if background is None else np.asarray(background, dtype=np.float64).reshape(-1, d)
    if bg is None or len(bg) == 0:
        raise ValueError(f"removal {removal!r} needs a nonempty background matrix")
    rng = np.random.default_rng(seed)

    if removal == "baseline":
        refs = bg.mean(axis=0, keepdims=True)
    elif removal == "random_sample":
        refs = bg[[int(rng.integers(len(bg)))]]
    else:
        refs = bg
        if len(bg) > cap:
            refs = bg[np.sort(rng.choice(len(bg), size=cap, replace=False))]

    def fn(members):
        total = np.zeros(len(members))
        for ref in refs:
            total += model.predict_proba(np.where(members, x, ref))[:, target_class]
        return total / len(refs)

    return CoalitionGame(d, fn, removal=removal, background=refs, target_class=target_class)


@dataclass(frozen=True)
class ShapleyAttribution:
    phi: np.ndarray
    target_class: int
    base_value: float
    full_value: float
    names: tuple = ()


def explain_sample(model, sample, target_class, removal="baseline", background=None,
                   seed=0, names=()) -> ShapleyAttribution:
    game = make_game(model, sample, target_class, removal, background, seed)
    phi = shapley_values(game)
    return ShapleyAttribution(phi, int(target_class), game.empty, game.full, tuple(names))


# --- occlusion ---------------------------------------------------------------------------

def region_edges(length: int, n: int) -> np.ndarray:
    """``n + 1`` boundaries of equal contiguous regions; sizes differ by at most one."""
    if n < 1:
        raise ValueError("region count must be >= 1")
    if n > length:
        raise ValueError(f"region count {n} exceeds window length {length}")
    return np.arange(n + 1) * length // n


def responsibility(p_original: float, p_masked):
    """``1 - p(x*M) / p(x)``."""
    if p_original == 0:
        raise ValueError("target probability of the unmasked input is 0; responsibility undefined")
    return 1.0 - np.asarray(p_masked, dtype=np.float64) / p_original


def _blur(x, width=BLUR_WIDTH):
    padded = np.pad(x, (width // 2, width - 1 - width // 2), mode="edge")
    return np.convolve(padded, np.ones(width) / width, mode="valid")


@dataclass(frozen=True)
class OcclusionMap:
    responsibilities: np.ndarray
    edges: np.ndarray
    baseline: str
    target_class: int
    base_probability: float

    @property
    def regions(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in zip(self.edges[:-1], self.edges[1:])]


def occlude(model: TrainedModel, win, target_class: int, n_regions: int = 20,
            baseline: str = "constant", seed: int = 0) -> OcclusionMap:
    """Mask each region in turn and record the relative drop of the target probability."""
    if model.family != RAW_SIGNAL:
        raise FamilyMismatch(f"{model.name} is not a raw-signal model")
    if baseline not in BASELINES:
        raise ValueError(f"baseline must be one of {BASELINES}")
    x = np.asarray(getattr(win, "samples", win), dtype=np.float64)
    edges = region_edges(x.size, n_regions)
    p = float(model.predict_proba(x[None])[0, target_class])
    if p == 0:
        raise ValueError("target probability of the unmasked window is 0; responsibility undefined")
    if baseline == "constant":
        fill = np.zeros_like(x)
    elif baseline == "blur":
        fill = _blur(x)
    else:
        rms = float(np.sqrt(np.mean(x * x)))
        fill = np.random.default_rng(seed).normal(0.0, rms, size=x.size)
    masked = np.repeat(x[None], n_regions, axis=0)
    for n in range(n_regions):
        masked[n, edges[n]:edges[n + 1]] = fill[edges[n]:edges[n + 1]]
    pm = model.predict_proba(masked)[:, target_class]
    return OcclusionMap(responsibility(p, pm), edges, baseline, int(target_class), p)


# --- exports -----------------------------------------------------------------------------

def write_attribution_csv(path, names, phi) -> None:
    with open(path, "w") as fh:
        fh.write("feature_name,phi\n")
        for name, value in zip(names, phi):
            fh.write(f"{name},{float(value)!r}\n")


def read_attribution_csv(path):
    with open(path) as fh:
        if fh.readline().strip() != "feature_name,phi":
            raise ValueError(f"{path}: not an attribution CSV")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return tuple(r[0] for r in rows), np.array([float(r[1]) for r in rows])


def write_occlusion_csv(path, occ: OcclusionMap, truth=None) -> None:
    """Columns region_start, region_end, res (plus a ground-truth flag when given)."""
    with open(path, "w") as fh:
        fh.write("region_start,region_end,res" + (",truth\n" if truth is not None else "\n"))
        for n, (a, b) in enumerate(occ.regions):
            row = f"{a},{b},{float(occ.responsibilities[n])!r}"
            if truth is not None:
                row += f",{int(bool(truth[n]))}"
            fh.write(row + "\n")


def read_occlusion_csv(path):
    """Returns ``(edges, res, truth_or_None)``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["region_start", "region_end", "res"]:
            raise ValueError(f"{path}: not an occlusion CSV")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    edges = np.array([int(rows[0][0])] + [int(r[1]) for r in rows])
    res = np.array([float(r[2]) for r in rows])
    truth = np.array([bool(int(r[3])) for r in rows]) if len(header) > 3 else None
    return edges, res, truth
