"""Experiment orchestration: datasets, per-cell training, grids and reports.

A grid cell is one (downsample factor, SNR, seed) combination.  Each cell
derives its own noisy, downsampled copy of the dataset, retrains the selected
models on it and runs the soft evaluation.  Everything a cell writes goes
under ``<out>/cells/<cell id>/`` and is listed in ``<out>/manifest.json``.
The manifest holds no timestamps, so a resumed run ends with the same bytes
as an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, ExperimentGrid, SynthConfig, derive_seed
from .dataio import Dataset, save_model
from .features import DEFAULT_POOL, FeaturePool, feature_matrix
from .indicator import EvalData, ModelResult, XseiReport, soft_evaluate
from .models import RAW_SIGNAL, fit_named, family_of
from .signal import (ARC_CLASS, BASE_PERIOD_MS, CLASS_NAMES, NORMAL_CLASS, add_noise,
                     downsample, synthesize, window)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


# --- dataset -----------------------------------------------------------------------------

def build_dataset(synth: SynthConfig = SynthConfig(), seed: int = 0) -> Dataset:
    """Synthesize ``per_class`` normal and arc windows for every load profile.

    Records alternate between arc-free and arcing runs of the same profile.
    Normal windows come from arc-free records and arc windows from arcing
    ones, mirroring data that was split by condition before cutting.
    """
    windows = []
    for profile in synth.profiles:
        calm = replace(profile, arc_fraction=0.0)
        normal, arc = [], []
        r = 0
        while len(normal) < synth.per_class or len(arc) < synth.per_class:
            arcing = r % 2 == 1
            if arcing and profile.arc_fraction == 0:
                raise ValueError(f"profile {profile.name!r} has arc_fraction 0; no arc windows")
            rec_seed = derive_seed(seed, "record", profile.name, r)
            w, m = synthesize(profile if arcing else calm, synth.record_length, rec_seed)
            for win in window(w, m, synth.width, synth.step, synth.min_arc_fraction):
                if arcing and win.label == ARC_CLASS and len(arc) < synth.per_class:
                    arc.append(win)
                elif not arcing and len(normal) < synth.per_class:
                    normal.append(win)
            r += 1
            if r > 10000:
                raise RuntimeError(f"profile {profile.name!r} yields too few arc windows")
        windows += normal + arc
    return Dataset(windows, CLASS_NAMES, BASE_PERIOD_MS, synth.width, synth.step,
                   seeds={"root": int(seed)},
                   extra={"profiles": [p.name for p in synth.profiles], "per_class": synth.per_class})


# --- cells -------------------------------------------------------------------------------

def cell_id(factor: int, snr: float, seed: int) -> str:
    return f"f{int(factor)}_snr{float(snr):+g}_s{int(seed)}"


def split_indices(n: int, shares, seed: int):
    """Seeded shuffle cut into train/validation/test index arrays."""
    order = np.random.default_rng(derive_seed(seed, "split")).permutation(n)
    n_train = int(round(shares[0] * n))
    n_val = int(round(shares[1] * n))
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


@dataclass
class Cell:
    factor: int
    snr: float
    seed: int
    windows: list
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    feature_names: tuple

    @property
    def id(self) -> str:
        return cell_id(self.factor, self.snr, self.seed)

    def take(self, idx):
        return [self.windows[i] for i in idx]

    def eval_data(self) -> EvalData:
        return EvalData(self.features[self.test], self.take(self.test), self.labels[self.test],
                        self.features[self.train], self.feature_names, NORMAL_CLASS)


def make_cell(dataset: Dataset, factor: int, snr: float, seed: int,
              split=(0.8, 0.1, 0.1), pool: FeaturePool = FeaturePool()) -> Cell:
    """Downsample, add noise and split.

    Noise for window ``i`` uses the same seed at every SNR and factor, so
    cells differ only in what the axes change.
    """
    wins = [add_noise(downsample(w, factor), snr, derive_seed(seed, "noise", i))
            for i, w in enumerate(dataset.windows)]
    labels = np.array([w.label for w in wins], dtype=np.int64)
    tr, va, te = split_indices(len(wins), split, seed)
    return Cell(int(factor), float(snr), int(seed), wins, feature_matrix(wins, pool), labels,
                tr, va, te, pool.names)


def train_models(cell: Cell, names, cfg: Config, num_classes: int = 2):
    """Fit each named model on the cell's training split; failures are returned, not raised."""
    out, errors = [], {}
    for name in names:
        seed = derive_seed(cell.seed, "model", name)
        try:
            if family_of(name) == RAW_SIGNAL:
                model = fit_named(name, cfg.zoo, seed, cell.take(cell.train), cell.labels[cell.train],
                                  cell.take(cell.val), cell.labels[cell.val], num_classes)
            else:
                model = fit_named(name, cfg.zoo, seed, cell.features[cell.train],
                                  cell.labels[cell.train], num_classes=num_classes)
        except Exception as exc:
            log.warning("training %s in %s failed: %s", name, cell.id, exc)
            errors[name] = f"{type(exc).__name__}: {exc}"
            continue
        model.name = name
        out.append((name, model))
    return out, errors


def run_cell(dataset: Dataset, factor: int, snr: float, seed: int, cfg: Config,
             out_dir: Path | None = None) -> tuple[XseiReport, list[str]]:
    """Train and evaluate one cell; returns the report and the files written."""
    cell = make_cell(dataset, factor, snr, seed, cfg.synth.split)
    models, errors = train_models(cell, cfg.grid.models, cfg)
    eval_cfg = replace(cfg.eval, seed=derive_seed(seed, "explain"))
    axes = {"factor": cell.factor, "sample_time_ms": BASE_PERIOD_MS * cell.factor,
            "snr_db": cell.snr, "seed": cell.seed}
    report = soft_evaluate(models, cell.eval_data(), eval_cfg, axes)
    done = {r.name for r in report.rows}
    for name in cfg.grid.models:  # keep model order; training failures become error rows
        if name not in done:
            report.rows.insert(list(cfg.grid.models).index(name),
                               ModelResult(name, family_of(name), error=errors.get(name, "not trained")))
    report.provenance["explain_seed"] = eval_cfg.seed
    files = []
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.grid.checkpoints:
            for name, model in models:
                path = out_dir / f"{name}.ckpt"
                save_model(model, path)
                files.append(path)
        path = out_dir / "report.json"
        write_json(path, report.to_dict())
        files.append(path)
    return report, files


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


# --- grid --------------------------------------------------------------------------------

@dataclass
class GridResult:
    reports: dict          # cell id -> XseiReport, completed cells only
    manifest: dict

    @property
    def failures(self) -> dict:
        return {k: v["error"] for k, v in self.manifest["cells"].items() if v["status"] == "failed"}


def _cell_job(args):
    dataset, factor, snr, seed, cfg, out_dir = args
    try:
        report, files = run_cell(dataset, factor, snr, seed, cfg, out_dir)
        return report.to_dict(), [str(f) for f in files], None
    except Exception as exc:
        log.debug("cell failure:\n%s", traceback.format_exc())
        return None, [], f"{type(exc).__name__}: {exc}"


def _fresh_manifest(cfg: Config, grid: ExperimentGrid) -> dict:
    return {"config_hash": cfg.hash(), "toolkit_version": __version__, "root_seed": cfg.seed,
            "seeds": list(grid.seeds), "dataset": None,
            "order": [cell_id(f, s, k) for f, s, k in grid.cells()], "cells": {}}


def run_grid(cfg: Config, out, dataset: Dataset | None = None, stop_after: int | None = None) -> GridResult:
    """Run every cell of ``cfg.grid`` under ``out``, skipping cells the manifest marks done.

    ``stop_after`` ends the run after that many newly computed cells, which is
    how an interruption is simulated in tests.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid
    mpath = out / MANIFEST
    manifest = None
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
        if manifest.get("config_hash") != cfg.hash():
            raise ValueError(f"{mpath} belongs to a different configuration; use a fresh --out")
    if manifest is None:
        manifest = _fresh_manifest(cfg, grid)

    if dataset is None:
        dataset = build_dataset(cfg.synth, cfg.seed)
    reports = {}
    pending = []
    for factor, snr, seed in grid.cells():
        cid = cell_id(factor, snr, seed)
        entry = manifest["cells"].get(cid)
        if entry and entry["status"] == "done" and (out / entry["report"]).exists():
            reports[cid] = XseiReport.from_dict(json.loads((out / entry["report"]).read_text()))
        elif entry and entry["status"] == "failed":
            continue
        else:
            pending.append((cid, factor, snr, seed))
    if stop_after is not None:
        pending = pending[:stop_after]

    def record(cid, factor, snr, seed, result):
        report_dict, files, error = result
        entry = {"factor": factor, "snr_db": snr, "seed": seed,
                 "sample_time_ms": BASE_PERIOD_MS * factor}
        if error is None:
            reports[cid] = XseiReport.from_dict(report_dict)
            entry.update(status="done", report=f"cells/{cid}/report.json",
                         artifacts=sorted(str(Path(f).relative_to(out)) for f in files))
        else:
            entry.update(status="failed", error=error, artifacts=[])
        manifest["cells"][cid] = entry
        manifest["cells"] = dict(sorted(manifest["cells"].items()))
        write_json(mpath, manifest)  # single writer: only this process touches the manifest

    jobs = [(dataset, f, s, k, cfg, out / "cells" / cid) for cid, f, s, k in pending]
    if grid.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(grid.workers) as pool:
            for (cid, f, s, k), result in zip(pending, pool.map(_cell_job, jobs)):
                record(cid, f, s, k, result)
    else:
        for (cid, f, s, k), job in zip(pending, jobs):
            log.info("cell %s", cid)
            record(cid, f, s, k, _cell_job(job))
    write_json(mpath, manifest)
    ordered = {cell_id(f, s, k): reports[cell_id(f, s, k)] for f, s, k in grid.cells()
               if cell_id(f, s, k) in reports}
    return GridResult(ordered, manifest)


# --- reports -----------------------------------------------------------------------------

CSV_COLUMNS = ("cell", "factor", "sample_time_ms", "snr_db", "seed", "model", "family",
               "accuracy", "score", "numerator", "denominator", "method", "error")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v).replace(",", ";").replace("\n", " ")


def report_rows(reports: dict) -> list[list[str]]:
    """Flatten reports into CSV cells (strings), one row per (cell, model)."""
    rows = []
    for cid, rep in reports.items():
        ax = rep.axes
        for r in rep.rows:
            s = r.score
            rows.append([_fmt(v) for v in (
                cid, ax.get("factor"), ax.get("sample_time_ms"), ax.get("snr_db"), ax.get("seed"),
                r.name, r.family, r.accuracy, None if s is None else s.value,
                None if s is None else s.numerator, None if s is None else s.denominator,
                None if s is None else s.method, r.error)])
    return rows


def format_csv(rows) -> str:
    return "".join(",".join(r) + "\n" for r in [list(CSV_COLUMNS)] + [list(r) for r in rows])


def parse_csv(text: str) -> list[list[str]]:
    lines = text.splitlines()
    if not lines or lines[0] != ",".join(CSV_COLUMNS):
        raise ValueError("not a report CSV (header mismatch)")
    rows = [line.split(",") for line in lines[1:]]
    for i, r in enumerate(rows):
        if len(r) != len(CSV_COLUMNS):
            raise ValueError(f"report CSV row {i + 1} has {len(r)} fields, expected {len(CSV_COLUMNS)}")
    return rows


def _column_label(ax: dict, vary_time: bool, vary_snr: bool) -> str:
    parts = []
    if vary_time or not vary_snr:
        parts.append(f"{ax['sample_time_ms']:.1e}ms")
    if vary_snr:
        parts.append(f"{ax['snr_db']:+g}dB")
    return " ".join(parts)


def summary_table(reports: dict):
    """Models x grid columns of (mean accuracy, mean score) over seeds, plus an Average pair.

    Returns ``(column labels, {model: [(acc, score), ..., (avg acc, avg score)]})``.
    Missing values are ``None``; averages use the available cells.
    """
    columns, models = [], []
    cells = {}
    for rep in reports.values():
        key = (rep.axes.get("factor"), rep.axes.get("snr_db"))
        if key not in columns:
            columns.append(key)
        for r in rep.rows:
            if r.name not in models:
                models.append(r.name)
            s = None if r.score is None else r.score.value
            cells.setdefault((r.name, key), []).append((r.accuracy, s))
    times = {k[0] for k in columns}
    snrs = {k[1] for k in columns}
    labels = [_column_label({"sample_time_ms": BASE_PERIOD_MS * f, "snr_db": s},
                            len(times) > 1, len(snrs) > 1) for f, s in columns]

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    table = {}
    for m in models:
        row = []
        for key in columns:
            entries = cells.get((m, key), [])
            row.append((mean([a for a, _ in entries]), mean([s for _, s in entries])))
        row.append((mean([a for a, _ in row]), mean([s for _, s in row])))
        table[m] = row
    return labels + ["Average"], table


def format_text(reports: dict) -> str:
    labels, table = summary_table(reports)
    head = ["Model"] + [f"{lab} Acc/Score" for lab in labels]
    body = []
    for m, row in table.items():
        body.append([m] + [("n/a" if a is None else f"{100 * a:.2f}") + "/" +
                           ("n/a" if s is None else f"{s:.2f}") for a, s in row])
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [head] + body]
    return "\n".join(lines) + "\n"


def format_provenance(reports: dict) -> str:
    out = []
    seen = []
    for rep in reports.values():
        p = {k: v for k, v in rep.provenance.items() if k != "explain_seed"}
        if p not in seen:
            seen.append(p)
    for p in seen:
        out.append("# " + ", ".join(f"{k}={p[k]}" for k in sorted(p)))
    return "\n".join(out) + ("\n" if out else "")


def plot_data(reports: dict, feature_names=DEFAULT_POOL) -> dict:
    """Per-model series for external plotting: mean |phi| per feature, mean Res per region."""
    out = {}
    for cid, rep in reports.items():
        entry = {"axes": rep.axes, "models": {}}
        for r in rep.rows:
            if r.importance is not None:
                entry["models"][r.name] = {"kind": "shapley", "features": list(feature_names),
                                           "mean_abs_phi": r.importance}
            elif r.mean_res is not None:
                entry["models"][r.name] = {"kind": "occlusion", "regions": len(r.mean_res),
                                           "mean_res": r.mean_res}
        out[cid] = entry
    return out


def emit_report(reports: dict, out, fmt: str = "csv") -> Path:
    if not reports:
        raise ValueError("no reports to emit")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out / "report.csv"
        path.write_text(format_csv(report_rows(reports)))
    elif fmt == "text":
        path = out / "report.txt"
        path.write_text(format_text(reports) + "\n" + format_provenance(reports))
    elif fmt == "plotdata":
        path = out / "plotdata.json"
        write_json(path, plot_data(reports))
    else:
        raise ValueError(f"unknown report format {fmt!r}; use csv, text or plotdata")
    return path


def load_reports(directory) -> dict:
    """Reports of a grid output directory (via its manifest) or loose report.json files."""
    directory = Path(directory)
    if (directory / MANIFEST).exists():
        manifest = json.loads((directory / MANIFEST).read_text())
        cells = manifest["cells"]
        return {cid: XseiReport.from_dict(json.loads((directory / cells[cid]["report"]).read_text()))
                for cid in manifest.get("order", sorted(cells))
                if cid in cells and cells[cid]["status"] == "done"}
    found = sorted(directory.rglob("report.json"))
    if not found:
        raise FileNotFoundError(f"no report.json under {directory}")
    return {str(p.parent.relative_to(directory)) or ".": XseiReport.from_dict(json.loads(p.read_text()))
            for p in found}
