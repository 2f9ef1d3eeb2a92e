"""Command-line entry point: ``xsei <subcommand> [flags]``.

Subcommands
-----------
synth    generate the synthetic dataset into a directory
ingest   validate a dataset directory (optionally re-encode it)
train    train models on one (sample time, SNR) cell and save checkpoints
eval     soft-evaluate the checkpoints of a ``train`` directory
explain  per-sample attribution CSVs for the checkpoints of a ``train`` directory
score    print the accuracy / score table of a report directory
grid     run a sample-time x SNR grid
report   re-emit the reports of a grid directory in another format

The root seed comes from ``--seed``, then ``$XSEI_SEED``, then the config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, explain, harness
from .config import SNR_LEVELS, load_config, override
from .dataio import FormatError, load_model, read_dataset, save_model, write_dataset
from .indicator import ground_truth_regions, soft_evaluate
from .models import FEATURE_POOL, MODEL_NAMES
from .signal import BASE_PERIOD_MS, DOWNSAMPLE_FACTORS


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _factors(text):
    """Sample times as downsample factors (``5``) or milliseconds (``2.5e-2``)."""
    out = []
    for v in _floats(text):
        if v >= 1 and float(v).is_integer():
            out.append(int(v))
        else:
            f = v / BASE_PERIOD_MS
            if f < 1 or abs(f - round(f)) > 1e-6:
                raise argparse.ArgumentTypeError(f"sample time {v} ms is not a multiple of "
                                                 f"{BASE_PERIOD_MS} ms")
            out.append(int(round(f)))
    return out


def _models(text):
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in MODEL_NAMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown models {bad}; choose from {','.join(MODEL_NAMES)}")
    return names


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="root seed (fallback: $XSEI_SEED, then config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    axes = argparse.ArgumentParser(add_help=False)
    axes.add_argument("--models", type=_models, help="comma list from " + ",".join(MODEL_NAMES))
    axes.add_argument("--sample-times", type=_factors,
                      help="downsample factors or sample times in ms, comma separated")
    axes.add_argument("--snrs", type=_floats, help="SNR levels in dB, comma separated")

    ev = argparse.ArgumentParser(add_help=False)
    ev.add_argument("--regions", type=int, help="occlusion region count N")
    ev.add_argument("--removal", choices=("baseline", "random", "marginal"))
    ev.add_argument("--threshold", type=float, help="responsibility threshold for region marking")

    p = argparse.ArgumentParser(prog="xsei", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate the synthetic dataset")
    s.add_argument("--format", choices=("bin", "csv"), default="bin")

    s = sub.add_parser("ingest", parents=[common], help="validate a dataset directory")
    s.add_argument("path")
    s.add_argument("--format", choices=("bin", "csv"), help="re-encode into --out")

    s = sub.add_parser("train", parents=[common, axes], help="train models on one cell")
    s.add_argument("--data", required=True, help="dataset directory")

    s = sub.add_parser("eval", parents=[common, ev], help="soft-evaluate a train directory")
    s.add_argument("run", help="directory written by 'train'")

    s = sub.add_parser("explain", parents=[common, ev], help="attribution CSVs for a train directory")
    s.add_argument("run", help="directory written by 'train'")
    s.add_argument("--samples", type=int, default=5, help="test samples to explain per model")

    s = sub.add_parser("score", parents=[common], help="print the table of a report directory")
    s.add_argument("path")
    s.add_argument("--format", choices=("text", "csv"), default="text")

    s = sub.add_parser("grid", parents=[common, axes, ev], help="run a sample-time x SNR grid")
    s.add_argument("--preset", choices=("time_sweep", "snr_sweep"))
    s.add_argument("--format", choices=("csv", "text", "plotdata"), action="append",
                   help="report formats to emit (repeatable; default csv and text)")
    s.add_argument("--data", help="dataset directory (default: synthesize)")
    s.add_argument("--workers", type=int)

    s = sub.add_parser("report", parents=[common], help="emit reports of a grid directory")
    s.add_argument("path")
    s.add_argument("--format", choices=("csv", "text", "plotdata"), default="text")
    return p


def _config(args):
    cfg = load_config(args.config)
    seed = args.seed
    if seed is None and os.environ.get("XSEI_SEED"):
        seed = int(os.environ["XSEI_SEED"])
    return override(cfg, seed=seed, models=getattr(args, "models", None),
                    factors=getattr(args, "sample_times", None), snrs=getattr(args, "snrs", None),
                    regions=getattr(args, "regions", None), removal=getattr(args, "removal", None),
                    threshold=getattr(args, "threshold", None))


def _need_out(args) -> Path:
    if not args.out:
        raise SystemExit("error: --out is required for this subcommand")
    return Path(args.out)


def cmd_synth(args, cfg):
    ds = harness.build_dataset(cfg.synth, cfg.seed)
    out = write_dataset(ds, _need_out(args), args.format)
    print(f"wrote {len(ds.windows)} windows to {out}")


def cmd_ingest(args, cfg):
    ds = read_dataset(args.path)
    counts = np.bincount(ds.labels, minlength=len(ds.class_names))
    print(f"{len(ds.windows)} windows, " + ", ".join(f"{n}={c}" for n, c in zip(ds.class_names, counts)))
    if args.format:
        write_dataset(ds, _need_out(args), args.format)


def _single(values, name, default):
    if values is None:
        return default
    if len(values) != 1:
        raise SystemExit(f"error: train takes a single {name}, got {len(values)}")
    return values[0]


def cmd_train(args, cfg):
    out = _need_out(args)
    out.mkdir(parents=True, exist_ok=True)
    factor = _single(args.sample_times, "sample time", 5)
    snr = _single(args.snrs, "SNR", SNR_LEVELS[-1])
    ds = read_dataset(args.data)
    cell = harness.make_cell(ds, factor, snr, cfg.seed, cfg.synth.split)
    models, errors = harness.train_models(cell, cfg.grid.models, cfg)
    for name, model in models:
        save_model(model, out / f"{name}.ckpt")
    harness.write_json(out / "run.json", {"data": str(Path(args.data).resolve()), "factor": factor,
                                          "snr_db": snr, "seed": cfg.seed,
                                          "models": [n for n, _ in models], "errors": errors,
                                          "config": cfg.to_dict()})
    for name, err in errors.items():
        print(f"{name}: FAILED {err}", file=sys.stderr)
    print(f"trained {len(models)} model(s) into {out}")
    return 1 if errors else 0


def _load_run(path, cfg):
    path = Path(path)
    run = json.loads((path / "run.json").read_text())
    ds = read_dataset(run["data"])
    cell = harness.make_cell(ds, run["factor"], run["snr_db"], run["seed"], cfg.synth.split)
    models = [(n, load_model(path / f"{n}.ckpt")) for n in run["models"]]
    return run, cell, models


def cmd_eval(args, cfg):
    run, cell, models = _load_run(args.run, cfg)
    report = soft_evaluate(models, cell.eval_data(), cfg.eval,
                           {"factor": run["factor"], "sample_time_ms": BASE_PERIOD_MS * run["factor"],
                            "snr_db": run["snr_db"], "seed": run["seed"]})
    out = Path(args.out) if args.out else Path(args.run)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_json(out / "report.json", report.to_dict())
    print(harness.format_text({cell.id: report}), end="")


def cmd_explain(args, cfg):
    run, cell, models = _load_run(args.run, cfg)
    out = Path(args.out) if args.out else Path(args.run) / "explain"
    out.mkdir(parents=True, exist_ok=True)
    data = cell.eval_data()
    written = 0
    for name, model in models:
        if model.family == FEATURE_POOL:
            for j in range(min(args.samples, len(data.features))):
                target = int(np.argmax(model.predict_proba(data.features[j:j + 1])[0]))
                att = explain.explain_sample(model, data.features[j], target, cfg.eval.removal,
                                             data.background, seed=cfg.eval.seed + j)
                explain.write_attribution_csv(out / f"{name}_sample{j}.csv", data.feature_names, att.phi)
                written += 1
        else:
            arc = [i for i, lab in enumerate(data.labels) if lab != data.normal_class][:args.samples]
            for i in arc:
                win = data.windows[i]
                target = int(np.argmax(model.predict_proba(win.samples[None])[0]))
                occ = explain.occlude(model, win, target, cfg.eval.n_regions, cfg.eval.baseline,
                                      seed=cfg.eval.seed + i)
                truth = ground_truth_regions(win, n_regions=cfg.eval.n_regions).r
                explain.write_occlusion_csv(out / f"{name}_window{i}.csv", occ, truth)
                written += 1
    print(f"wrote {written} attribution file(s) to {out}")


def cmd_score(args, cfg):
    reports = harness.load_reports(args.path)
    if args.format == "csv":
        print(harness.format_csv(harness.report_rows(reports)), end="")
    else:
        print(harness.format_text(reports), end="")


def cmd_grid(args, cfg):
    from dataclasses import replace
    out = _need_out(args)
    grid = cfg.grid
    if args.preset:
        grid = getattr(type(grid), args.preset)(seeds=grid.seeds, models=grid.models,
                                                checkpoints=grid.checkpoints, workers=grid.workers)
        if args.sample_times:
            grid = replace(grid, factors=tuple(args.sample_times))
        if args.snrs:
            grid = replace(grid, snrs=tuple(args.snrs))
    if args.workers:
        grid = replace(grid, workers=args.workers)
    cfg = replace(cfg, grid=grid)
    ds = read_dataset(args.data) if args.data else None
    result = harness.run_grid(cfg, out, ds)
    for fmt in args.format or ("csv", "text"):
        if result.reports:
            harness.emit_report(result.reports, out, fmt)
    if result.reports:
        print(harness.format_text(result.reports), end="")
    for cid, err in result.failures.items():
        print(f"cell {cid} FAILED: {err}", file=sys.stderr)
    return 1 if result.failures else 0


def cmd_report(args, cfg):
    reports = harness.load_reports(args.path)
    path = harness.emit_report(reports, args.out or args.path, args.format)
    print(f"wrote {path}")


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval,
            "explain": cmd_explain, "score": cmd_score, "grid": cmd_grid, "report": cmd_report}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        status = COMMANDS[args.command](args, cfg)
    except (FormatError, ValueError, FileNotFoundError, OSError, KeyError) as exc:
        print(f"xsei {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
