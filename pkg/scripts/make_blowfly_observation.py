"""Regenerate the committed synthetic blowfly observation.

    python scripts/make_blowfly_observation.py [--seed 2016] [--out PATH]
"""

import argparse
from pathlib import Path

from avabc.config import BLOWFLY_PRIOR_MEANS
from avabc.simulators import synthetic_blowfly_observation

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "avabc" / "data" / "blowfly_observation.json"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=2016)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--tau", type=int, default=14)
    p.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = p.parse_args()
    obs = synthetic_blowfly_observation(BLOWFLY_PRIOR_MEANS, args.seed, T=args.T, tau=args.tau)
    obs.save(args.out)
    print(f"wrote {args.out}")
    print("statistics:", ", ".join(f"{v:.4g}" for v in obs.y_stats))


if __name__ == "__main__":
    main()
