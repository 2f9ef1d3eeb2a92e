"""Experiment configuration.

One JSON document with optional sections ``synth``, ``zoo``, ``eval`` and
``grid``; anything left out takes the dataclass default.  Command-line flags
are applied on top with :func:`override`.

Seeds
-----
Every random stream is derived from a single root seed with
:func:`derive_seed`: the root and the CRC-32 of each string key feed a
``numpy.random.SeedSequence``, whose first 32-bit word is the sub-seed.  Keys
name the consumer (``"record", "vacuum", 3``), so adding a new consumer never
shifts the streams of existing ones.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .indicator import EvalConfig
from .models import MODEL_NAMES, ZooConfig
from .signal import DOWNSAMPLE_FACTORS, LoadProfile, default_profiles

SNR_LEVELS = (-5.0, -3.0, -1.0, 1.0, 3.0, 5.0)
TIME_SWEEP_SNR = 5.0
SNR_SWEEP_FACTOR = 10


def derive_seed(root: int, *keys) -> int:
    entropy = [int(root) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass(frozen=True)
class SynthConfig:
    """Desk-scale dataset: ``per_class`` windows of each class for every profile."""

    profiles: tuple[LoadProfile, ...] = field(default_factory=default_profiles)
    per_class: int = 150
    record_length: int = 100000
    width: int = 10000
    step: int = 5000
    min_arc_fraction: float = 0.1
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")
        if self.record_length < self.width:
            raise ValueError("record_length must be at least one window")
        if len(self.split) != 3 or abs(sum(self.split) - 1) > 1e-9 or min(self.split) < 0:
            raise ValueError("split must be three nonnegative shares summing to 1")
        for p in self.profiles:
            p.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "profiles" in d:
            d["profiles"] = tuple(LoadProfile.from_dict(p) for p in d["profiles"])
        if "split" in d:
            d["split"] = tuple(d["split"])
        return cls(**d)


@dataclass(frozen=True)
class ExperimentGrid:
    """Cartesian grid of downsample factors, SNR levels and seeds."""

    factors: tuple[int, ...] = DOWNSAMPLE_FACTORS
    snrs: tuple[float, ...] = (TIME_SWEEP_SNR,)
    seeds: tuple[int, ...] = (0,)
    models: tuple[str, ...] = MODEL_NAMES
    checkpoints: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.factors or not self.snrs or not self.seeds:
            raise ValueError("grid axes must be nonempty")
        if any(int(f) < 1 for f in self.factors):
            raise ValueError("downsample factors must be >= 1")
        unknown = [m for m in self.models if m not in MODEL_NAMES]
        if unknown:
            raise ValueError(f"unknown models {unknown}; choose from {MODEL_NAMES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def time_sweep(cls, **kw) -> "ExperimentGrid":
        return cls(factors=DOWNSAMPLE_FACTORS, snrs=(TIME_SWEEP_SNR,), **kw)

    @classmethod
    def snr_sweep(cls, **kw) -> "ExperimentGrid":
        return cls(factors=(SNR_SWEEP_FACTOR,), snrs=SNR_LEVELS, **kw)

    def cells(self) -> list[tuple[int, float, int]]:
        return [(int(f), float(s), int(k)) for k in self.seeds for f in self.factors for s in self.snrs]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentGrid":
        d = dict(d)
        preset = d.pop("preset", None)
        for key in ("factors", "snrs", "seeds", "models"):
            if key in d:
                d[key] = tuple(d[key])
        if preset == "time_sweep":
            return cls.time_sweep(**d)
        if preset == "snr_sweep":
            return cls.snr_sweep(**d)
        if preset is not None:
            raise ValueError(f"unknown grid preset {preset!r}")
        return cls(**d)


@dataclass(frozen=True)
class Config:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    zoo: ZooConfig = field(default_factory=ZooConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    grid: ExperimentGrid = field(default_factory=ExperimentGrid)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config sections {sorted(extra)}")
        return cls(seed=int(d.get("seed", 0)),
                   synth=SynthConfig.from_dict(d.get("synth", {})),
                   zoo=ZooConfig.from_dict(d.get("zoo", {})),
                   eval=EvalConfig.from_dict(d.get("eval", {})),
                   grid=ExperimentGrid.from_dict(d.get("grid", {})))

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def hash(self) -> str:
        """SHA-256 over the canonical JSON form of every output-affecting input.

        The worker count is left out: it changes scheduling, never results.
        """
        d = self.to_dict()
        del d["grid"]["workers"]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    with open(Path(path)) as fh:
        return Config.from_dict(json.load(fh))


def override(cfg: Config, *, seed=None, models=None, factors=None, snrs=None, regions=None,
             removal=None, threshold=None) -> Config:
    """Apply command-line style overrides; ``None`` leaves a value alone."""
    grid, ev = cfg.grid, cfg.eval
    if models is not None:
        grid = replace(grid, models=tuple(models))
    if factors is not None:
        grid = replace(grid, factors=tuple(int(f) for f in factors))
    if snrs is not None:
        grid = replace(grid, snrs=tuple(float(s) for s in snrs))
    if regions is not None:
        ev = replace(ev, n_regions=int(regions))
    if removal is not None:
        ev = replace(ev, removal={"random": "random_sample"}.get(removal, removal))
    if threshold is not None:
        ev = replace(ev, threshold=float(threshold))
    return replace(cfg, seed=cfg.seed if seed is None else int(seed), grid=grid, eval=ev)
