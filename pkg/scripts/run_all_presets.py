"""Run every built-in preset and write its CSVs under one directory.

Trial counts can be scaled down for a quick look, e.g.
``python3 scripts/run_all_presets.py --scale 0.01 --out-dir results``.
"""

import argparse
import time
from dataclasses import replace

from mixsim.cli import PRESETS, preset, run_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", default="results")
    p.add_argument("--scale", type=float, default=1.0, help="multiply trial counts")
    p.add_argument("--workers", type=int)
    p.add_argument("--only", nargs="*", choices=PRESETS)
    args = p.parse_args()
    for name in args.only or PRESETS:
        spec = preset(name)
        trials = max(1, int(spec.config.trials * args.scale))
        spec = replace(spec, config=replace(spec.config, trials=trials))
        t0 = time.perf_counter()
        out = run_experiment(spec, args.out_dir, args.workers)
        print(f"{name}: {trials} trials, {time.perf_counter() - t0:.0f} s -> {out['outputs']}")


if __name__ == "__main__":
    main()
