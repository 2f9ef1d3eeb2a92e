"""Explainable soft evaluation indicator.

Ground truth is a feature set for feature-pool models and a boolean region
grid for raw-signal models.  A model's soft score is the Jaccard index
between that ground truth and what attribution says the model relies on:
its top-k Shapley features, or the regions whose occlusion responsibility
exceeds a threshold.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import explain
from .features import GROUND_TRUTH
from .models import FEATURE_POOL, RAW_SIGNAL, TrainedModel, accuracy

log = logging.getLogger(__name__)

AGGREGATIONS = ("pooled", "mean_res")


@dataclass(frozen=True)
class GroundTruthRegions:
    r: np.ndarray
    derivation: str = "mask"


@dataclass(frozen=True)
class SoftScore:
    numerator: int
    denominator: int
    method: str

    def __post_init__(self):
        if self.denominator < 1:
            raise ValueError("soft score needs a nonempty union")
        if not 0 <= self.numerator <= self.denominator:
            raise ValueError("intersection cannot exceed union")

    @property
    def value(self) -> float:
        return self.numerator / self.denominator

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)


class DegenerateScore(ValueError):
    """Both region vectors are empty, so the Jaccard index is undefined."""


def ground_truth_regions(normal, arc=None, n_regions: int = 20, tolerance: float = 1e-6,
                         mask=None) -> GroundTruthRegions:
    """Region grid flagging where the arc signal departs from the normal one.

    Pairwise mode (``arc`` given): region ``n`` is flagged when the largest
    absolute sample difference inside it exceeds ``tolerance``.  Mask mode
    (``mask`` given, or ``normal`` is itself a mask/window carrying one): a
    region is flagged when it holds at least one masked sample.
    """
    if arc is not None:
        x = np.asarray(getattr(normal, "samples", normal), dtype=np.float64)
        xh = np.asarray(getattr(arc, "samples", arc), dtype=np.float64)
        if x.shape != xh.shape:
            raise ValueError(f"misaligned pair: lengths {x.size} and {xh.size}")
        edges = explain.region_edges(x.size, n_regions)
        diff = np.abs(x - xh)
        r = np.array([diff[a:b].max() > tolerance for a, b in zip(edges[:-1], edges[1:])])
        return GroundTruthRegions(r, "pairwise")
    if mask is None:
        mask = getattr(normal, "arc_mask", normal)
    flags = np.asarray(getattr(mask, "flags", mask), dtype=bool)
    edges = explain.region_edges(flags.size, n_regions)
    r = np.array([flags[a:b].any() for a, b in zip(edges[:-1], edges[1:])])
    return GroundTruthRegions(r, "mask")


def top_k_features(attributions, names: Sequence[str], k: int = 5) -> tuple[str, ...]:
    """Rank features by mean |phi| over the explained samples; ties keep pool order."""
    phis = np.array([getattr(a, "phi", a) for a in attributions], dtype=np.float64)
    if phis.ndim == 1:
        phis = phis[None]
    if phis.shape[0] == 0:
        raise ValueError("need at least one attribution")
    if not 1 <= k <= phis.shape[1]:
        raise ValueError(f"k={k} must lie in [1, {phis.shape[1]}]")
    importance = np.abs(phis).mean(axis=0)
    order = np.argsort(-importance, kind="stable")
    return tuple(names[i] for i in order[:k])


def score_feature_pool(truth, selected) -> SoftScore:
    truth, selected = set(truth), set(selected)
    if not truth or not selected:
        raise ValueError("both feature sets must be nonempty")
    return SoftScore(len(truth & selected), len(truth | selected), "shap_top5")


def mark_regions(responsibilities, threshold: float = 0.1) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    res = np.asarray(getattr(responsibilities, "responsibilities", responsibilities))
    return res > threshold


def score_regions(r, r_occ) -> SoftScore:
    r = np.asarray(getattr(r, "r", r), dtype=bool)
    r_occ = np.asarray(r_occ, dtype=bool)
    if r.shape != r_occ.shape:
        raise ValueError(f"region vectors differ in length: {r.size} vs {r_occ.size}")
    union = int(np.sum(r | r_occ))
    if union == 0:
        raise DegenerateScore("ground truth and occlusion regions are both empty")
    return SoftScore(int(np.sum(r & r_occ)), union, "occlusion")


def attainable_scores(size_truth: int, size_selected: int) -> set[Fraction]:
    """Every Jaccard value two sets of the given sizes can produce."""
    return {Fraction(o, size_truth + size_selected - o)
            for o in range(0, min(size_truth, size_selected) + 1)}


# --- soft evaluation ---------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    k: int = 5
    ground_truth: tuple[str, ...] = GROUND_TRUTH
    removal: str = "baseline"
    n_explain: int = 30
    n_regions: int = 20
    baseline: str = "constant"
    threshold: float = 0.1
    n_occlusion: int = 30
    aggregation: str = "pooled"
    seed: int = 0

    def __post_init__(self):
        if self.removal not in explain.REMOVALS:
            raise ValueError(f"removal must be one of {explain.REMOVALS}")
        if self.baseline not in explain.BASELINES:
            raise ValueError(f"baseline must be one of {explain.BASELINES}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        d = dict(d)
        if "ground_truth" in d:
            d["ground_truth"] = tuple(d["ground_truth"])
        return cls(**d)


@dataclass
class EvalData:
    """Everything one soft evaluation needs for a single experiment cell.

    ``windows`` are the (already transformed) test windows with arc masks;
    ``features`` their feature matrix; ``background`` the training feature
    matrix used for Shapley removal.
    """

    features: np.ndarray
    windows: list
    labels: np.ndarray
    background: np.ndarray
    feature_names: tuple[str, ...]
    normal_class: int = 0


@dataclass
class ModelResult:
    name: str
    family: str
    accuracy: float | None = None
    score: SoftScore | None = None
    error: str | None = None
    top_features: tuple = ()
    importance: list | None = None      # mean |phi| per feature, pool order
    mean_res: list | None = None        # mean responsibility per region
    n_explained: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["score"] = None if self.score is None else {
            "numerator": self.score.numerator, "denominator": self.score.denominator,
            "method": self.score.method, "value": self.score.value}
        d["top_features"] = list(self.top_features)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelResult":
        d = dict(d)
        s = d.get("score")
        d["score"] = None if s is None else SoftScore(s["numerator"], s["denominator"], s["method"])
        d["top_features"] = tuple(d.get("top_features") or ())
        return cls(**d)


@dataclass
class XseiReport:
    rows: list[ModelResult]
    axes: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def scores(self) -> list[float | None]:
        """The per-model score vector, in model order."""
        return [None if r.score is None else r.score.value for r in self.rows]

    def to_dict(self) -> dict:
        return {"axes": self.axes, "provenance": self.provenance,
                "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "XseiReport":
        return cls([ModelResult.from_dict(r) for r in d["rows"]], d.get("axes", {}),
                   d.get("provenance", {}))


def explain_feature_model(model, data: EvalData, config: EvalConfig):
    """Shapley attributions for the explanation subset, target = predicted class."""
    n = min(config.n_explain, len(data.features))
    x = data.features[:n]
    predicted = np.argmax(model.predict_proba(x), axis=1)
    attributions = []
    for j in range(n):
        attributions.append(explain.explain_sample(
            model, x[j], int(predicted[j]), config.removal, data.background,
            seed=config.seed + j, names=data.feature_names))
    return attributions


def occlusion_windows(data: EvalData, limit: int) -> list[int]:
    idx = [i for i, lab in enumerate(data.labels) if lab != data.normal_class]
    return idx[:limit]


def explain_raw_model(model, data: EvalData, config: EvalConfig):
    """Occlusion maps and mask-derived truth for the arc windows of the test set."""
    maps, truths = [], []
    for i in occlusion_windows(data, config.n_occlusion):
        win = data.windows[i]
        target = int(np.argmax(model.predict_proba(win.samples[None])[0]))
        maps.append(explain.occlude(model, win, target, config.n_regions, config.baseline,
                                    seed=config.seed + i))
        truths.append(ground_truth_regions(win, n_regions=config.n_regions).r)
    return maps, truths


def aggregate_regions(res_rows, truths, threshold, aggregation="pooled") -> SoftScore:
    """Combine per-window occlusion results into one region score.

    ``pooled`` applies the Jaccard ratio to all (window, region) cells at once,
    which keeps every window compared with its own ground truth.  ``mean_res``
    averages responsibilities per region before thresholding and compares with
    the per-region majority of the ground truth.
    """
    res_rows = np.asarray(res_rows, dtype=np.float64)
    truths = np.asarray(truths, dtype=bool)
    if res_rows.size == 0:
        raise DegenerateScore("no windows were occluded")
    if aggregation == "pooled":
        return score_regions(truths.reshape(-1), mark_regions(res_rows.reshape(-1), threshold))
    mean_res = res_rows.mean(axis=0)
    truth = truths.mean(axis=0) >= 0.5
    return score_regions(truth, mark_regions(mean_res, threshold))


def evaluate_model(name: str, model: TrainedModel, data: EvalData, config: EvalConfig) -> ModelResult:
    result = ModelResult(name, model.family)
    inputs = data.features if model.family == FEATURE_POOL else np.stack([w.samples for w in data.windows])
    result.accuracy = accuracy(model, inputs, data.labels)
    if model.family == FEATURE_POOL:
        attributions = explain_feature_model(model, data, config)
        result.top_features = top_k_features(attributions, data.feature_names, config.k)
        result.importance = np.abs([a.phi for a in attributions]).mean(axis=0).tolist()
        result.score = score_feature_pool(config.ground_truth, result.top_features)
        result.n_explained = len(attributions)
    else:
        maps, truths = explain_raw_model(model, data, config)
        res_rows = [m.responsibilities for m in maps]
        if res_rows:
            result.mean_res = np.mean(res_rows, axis=0).tolist()
        result.score = aggregate_regions(res_rows, truths, config.threshold, config.aggregation)
        result.n_explained = len(maps)
    return result


def soft_evaluate(models, data: EvalData, config: EvalConfig = EvalConfig(),
                  axes: dict | None = None) -> XseiReport:
    """Score every model in order; a failing model is recorded and the run continues.

    ``models`` is a sequence of ``(name, TrainedModel)`` pairs or bare models.
    """
    rows = []
    for item in models:
        name, model = item if isinstance(item, tuple) else (item.name, item)
        try:
            rows.append(evaluate_model(name, model, data, config))
        except Exception as exc:  # recorded per model, see docstring
            log.warning("soft evaluation of %s failed: %s", name, exc)
            rows.append(ModelResult(name, getattr(model, "family", "unknown"),
                                    error=f"{type(exc).__name__}: {exc}"))
    provenance = {"removal": config.removal, "k": config.k, "n_regions": config.n_regions,
                  "baseline": config.baseline, "threshold": config.threshold,
                  "aggregation": config.aggregation, "seed": config.seed,
                  "ground_truth": list(config.ground_truth)}
    return XseiReport(rows, dict(axes or {}), provenance)
