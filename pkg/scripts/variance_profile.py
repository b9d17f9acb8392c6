"""Gradient spread of both estimators at a fixed q, across sample sizes.

    python scripts/variance_profile.py RUN_DIR [--sizes 1 2 5 10] [--repeats 100]

RUN_DIR is the output of ``avabc run``; q is taken from its final parameters.
Prints one line per (estimator, S=L) with the per-coordinate variance.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from avabc.config import RunConfig, build_problem
from avabc.distributions import FAMILIES
from avabc.estimators import PATHWISE, SCORE_FUNCTION, gradient_variance_profile
from avabc.rng import RngStream


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("run_dir", type=Path)
    p.add_argument("--sizes", type=int, nargs="+", default=[1, 2, 5, 10])
    p.add_argument("--repeats", type=int, default=100)
    args = p.parse_args()

    config = RunConfig.load(args.run_dir / "config_resolved.json")
    post = json.loads((args.run_dir / "final_posterior.json").read_text())
    problem = build_problem(config, RngStream(config.seed).generator("init"))
    family = FAMILIES[post["family"]](phi=tuple(post["phi"]))
    y = problem.observation.y_stats
    print(f"q = {post['family']} {post['params']}")
    for n in args.sizes:
        for kind in (PATHWISE, SCORE_FUNCTION):
            prof = gradient_variance_profile(kind, family, problem.prior, problem.sim, y, problem.eps, n, n,
                                             args.repeats, RngStream(config.seed).child(7, n))
            print(f"{kind:>15s} S=L={n:<3d} var {np.array2string(prof.variance, precision=4)}")


if __name__ == "__main__":
    main()
