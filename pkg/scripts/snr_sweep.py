"""SNR sweep at sample time 5e-2 ms (downsample factor 10), SNR -5..5 dB.

    python3 scripts/snr_sweep.py --out runs/snr --seeds 0,1,2,3,4

Besides the usual report this prints, per model, the accuracy drop from the
cleanest to the noisiest level and the mean soft score, which is how the
pooling comparison (LBNN-avg vs LBNN-max) is read off.
"""

import argparse
import logging
from collections import defaultdict
from dataclasses import replace

import numpy as np

from xsei.config import ExperimentGrid, load_config
from xsei.harness import emit_report, format_text, run_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/snr_sweep")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    grid = ExperimentGrid.snr_sweep(seeds=seeds, models=cfg.grid.models, workers=args.workers)
    result = run_grid(replace(cfg, grid=grid), args.out)
    for fmt in ("csv", "text", "plotdata"):
        emit_report(result.reports, args.out, fmt)
    print(format_text(result.reports))

    acc = defaultdict(lambda: defaultdict(list))
    score = defaultdict(list)
    for rep in result.reports.values():
        for r in rep.rows:
            if r.error:
                continue
            acc[r.name][rep.axes["snr_db"]].append(r.accuracy)
            score[r.name].append(r.score.value)
    lo, hi = min(grid.snrs), max(grid.snrs)
    print(f"{'model':<10} {'acc drop':>9} {'mean score':>11}")
    for name in acc:
        drop = np.mean(acc[name][hi]) - np.mean(acc[name][lo])
        print(f"{name:<10} {100 * drop:9.2f} {np.mean(score[name]):11.3f}")


if __name__ == "__main__":
    main()
