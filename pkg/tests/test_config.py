import json

import pytest

from xsei.config import (SNR_LEVELS, Config, ExperimentGrid, SynthConfig, derive_seed, load_config,
                         override)
from xsei.signal import DOWNSAMPLE_FACTORS


def test_derive_seed_is_stable_and_key_sensitive():
    a = derive_seed(0, "record", "vacuum", 3)
    assert a == derive_seed(0, "record", "vacuum", 3)
    assert len({a, derive_seed(1, "record", "vacuum", 3), derive_seed(0, "record", "vacuum", 4),
                derive_seed(0, "noise", "vacuum", 3)}) == 4
    assert 0 <= a < 2 ** 32


def test_presets():
    t = ExperimentGrid.time_sweep()
    assert t.factors == DOWNSAMPLE_FACTORS and t.snrs == (5.0,)
    s = ExperimentGrid.snr_sweep(seeds=(0, 1))
    assert s.factors == (10,) and s.snrs == SNR_LEVELS and len(s.cells()) == 12
    assert ExperimentGrid.from_dict({"preset": "snr_sweep"}) == ExperimentGrid.snr_sweep()
    with pytest.raises(ValueError):
        ExperimentGrid.from_dict({"preset": "both"})


def test_cells_are_ordered_by_seed_then_factor_then_snr():
    g = ExperimentGrid(factors=(1, 5), snrs=(-5.0, 5.0), seeds=(2, 1))
    assert g.cells()[:3] == [(1, -5.0, 2), (1, 5.0, 2), (5, -5.0, 2)]
    assert len(g.cells()) == 8


@pytest.mark.parametrize("bad", [dict(factors=()), dict(factors=(0,)), dict(models=("svm",)),
                                 dict(workers=0), dict(seeds=())])
def test_grid_validation(bad):
    with pytest.raises(ValueError):
        ExperimentGrid(**bad)


def test_synth_validation():
    with pytest.raises(ValueError):
        SynthConfig(split=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        SynthConfig(record_length=10, width=100)


def test_default_dataset_size():
    s = SynthConfig()
    assert len(s.profiles) * 2 * s.per_class == 600


def test_json_round_trip_and_hash(tmp_path):
    cfg = Config()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = load_config(path)
    assert back == cfg and back.hash() == cfg.hash()
    assert override(cfg, threshold=0.2).hash() != cfg.hash()


def test_partial_config_and_unknown_section(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 4, "eval": {"n_regions": 10}, "grid": {"snrs": [1, 3]}}))
    cfg = load_config(path)
    assert cfg.seed == 4 and cfg.eval.n_regions == 10 and cfg.grid.snrs == (1.0, 3.0)
    assert cfg.synth == SynthConfig()
    with pytest.raises(ValueError, match="unknown"):
        Config.from_dict({"trainer": {}})


def test_override():
    cfg = override(Config(), seed=9, models=["knn"], factors=[2], snrs=[-1], regions=8,
                   removal="random", threshold=0.3)
    assert cfg.seed == 9 and cfg.grid.models == ("knn",) and cfg.grid.factors == (2,)
    assert cfg.grid.snrs == (-1.0,) and cfg.eval.n_regions == 8
    assert cfg.eval.removal == "random_sample" and cfg.eval.threshold == 0.3
    assert override(cfg) == cfg


def test_hash_ignores_worker_count():
    from dataclasses import replace
    cfg = Config()
    assert replace(cfg, grid=replace(cfg.grid, workers=4)).hash() == cfg.hash()
    assert replace(cfg, grid=replace(cfg.grid, seeds=(1,))).hash() != cfg.hash()
