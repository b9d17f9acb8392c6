"""Run the three presets end to end and write plot-ready artifacts.

    python scripts/run_experiments.py [--out results] [--only bernoulli exponential blowfly]

For each preset: a pathwise run, a paired score-function run with gradient
profiles (``compare``), the posterior check where an exact posterior exists,
and the plot CSVs.
"""

import argparse
import os
import time
from pathlib import Path

from avabc.cli import main as cli

PRESETS = ("bernoulli", "exponential", "blowfly")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path(os.environ.get("AVABC_OUTPUT_ROOT", "results")))
    p.add_argument("--only", nargs="+", choices=PRESETS, default=list(PRESETS))
    args = p.parse_args()
    for name in args.only:
        t0 = time.perf_counter()
        run_dir = args.out / name / "pathwise"
        code = cli(["run", name, "--out", str(run_dir)])
        print(f"[{name}] run exit code {code}")
        if name != "blowfly":
            cli(["posterior-check", str(run_dir)])
        cli(["emit-plotdata", str(run_dir)])
        sf_dir = args.out / name / "score_function"
        cli(["run", name, "--estimator", "score_function", "--out", str(sf_dir)])
        cli(["emit-plotdata", str(sf_dir)])
        cli(["compare", name, "--out", str(args.out / name / "compare")])
        print(f"[{name}] done in {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
