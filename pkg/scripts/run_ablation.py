"""Generate the committed dataset (if needed) and run the full ablation suite.

    python3 scripts/run_ablation.py [--config configs/default.cfg] [--seeds 1,2,3]

Writes <out_dir>/ablation/report.csv and summary.txt and prints the summary
together with the wall time of every seed job.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

from scalefuse import config, evaluation, synth

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "default.cfg"))
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--workers", type=int, help="override the config's worker count")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    cfg = config.load(args.config)
    if args.workers:
        cfg = cfg.with_overrides(workers=args.workers)
    if not (Path(cfg.data_root) / "val" / "manifest.tsv").exists():
        synth.generate(cfg.data_root, cfg.seed, cfg.n_train, cfg.n_val)
    train = synth.load_all(synth.read_manifest(cfg.data_root, "train"))
    val = synth.load_all(synth.read_manifest(cfg.data_root, "val"))

    t0 = time.perf_counter()
    seeds = [int(s) for s in args.seeds.split(",")]
    report = evaluation.run_ablation_suite(train, val, cfg, seeds, workers=cfg.workers)
    report.write(Path(cfg.out_dir) / "ablation")
    sys.stdout.write(report.summary())
    for s, sec in report.seconds.items():
        print(f"seed {s}: {sec / 60:.1f} min")
    print(f"total wall time {(time.perf_counter() - t0) / 60:.1f} min with {cfg.workers} worker(s)")


if __name__ == "__main__":
    main()
