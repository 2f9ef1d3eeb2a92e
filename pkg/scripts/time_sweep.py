"""Sample-time sweep at SNR 5 dB: accuracy and soft score per model and sample time.

    python3 scripts/time_sweep.py --out runs/time --seeds 0,1,2

Re-running with the same --out resumes; finished cells are skipped.
"""

import argparse
import logging
from dataclasses import replace

from xsei.config import ExperimentGrid, load_config
from xsei.harness import emit_report, format_text, run_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON config; its grid section is replaced by the sweep")
    ap.add_argument("--out", default="runs/time_sweep")
    ap.add_argument("--seeds", default="0", help="comma separated cell seeds")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    grid = ExperimentGrid.time_sweep(seeds=seeds, models=cfg.grid.models, workers=args.workers)
    result = run_grid(replace(cfg, grid=grid), args.out)
    for fmt in ("csv", "text", "plotdata"):
        emit_report(result.reports, args.out, fmt)
    print(format_text(result.reports))
    for cid, err in result.failures.items():
        print(f"cell {cid} failed: {err}")


if __name__ == "__main__":
    main()
