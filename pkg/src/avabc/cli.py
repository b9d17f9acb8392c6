"""Command-line front end.

    avabc run bernoulli --out runs/b1
    avabc compare exponential --seed 7
    avabc posterior-check runs/b1
    avabc emit-plotdata runs/b1

Output goes to ``--out`` or, failing that, ``$AVABC_OUTPUT_ROOT/<command>-<name>``
(default root ``./avabc_runs``).  Exit codes: 0 converged, 2 stopped at
``max_iters``, 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import estimators as est
from .config import PRESETS, ConfigError, RunConfig, build_problem, load_observation, merge, preset
from .distributions import FAMILIES
from .engine import compare_runs, run
from .rng import RngStream
from .simulators import SimulationError

log = logging.getLogger("avabc")

OUTPUT_ROOT_ENV = "AVABC_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "avabc_runs"
GRID_POINTS = 512
KL_DRAWS = 100_000
SERIES_SIMS = 100

EXIT_OK, EXIT_ERROR, EXIT_MAX_ITERS = 0, 1, 2


class CliError(RuntimeError):
    pass


# --- config resolution --------------------------------------------------------


def resolve_config(args) -> RunConfig:
    name = getattr(args, "name", None) or args.preset
    if args.config and name:
        raise CliError("give either a preset or --config, not both")
    if args.config:
        config = RunConfig.load(args.config)
    elif name:
        config = preset(name)
    else:
        raise CliError(f"no preset or --config given; presets: {', '.join(PRESETS)}")
    overrides = {
        "seed": args.seed,
        "estimator": args.estimator,
        "S": args.samples,
        "L": args.sims,
        "K": args.latent_samples,
        "max_iters": args.max_iters,
    }
    if args.optimizer:
        # switching optimizer resets its hyperparameters to that optimizer's defaults
        overrides["optimizer"] = {"kind": args.optimizer, "lr": None, "beta1": None, "beta2": None, "eta": None}
    return merge(config, overrides)


def output_dir(args, command: str, name: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)) / f"{command}-{name}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serializable: {type(x).__name__}")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _family_summary(family) -> dict:
    return {
        "family": family.kind,
        "phi": list(family.phi),
        "params": family.constrained(),
        "mean": family.mean().tolist(),
        "std": np.sqrt(family.variance()).tolist(),
    }


# --- run ----------------------------------------------------------------------


def cmd_run(args) -> int:
    config = resolve_config(args)
    out = output_dir(args, "run", config.preset or Path(args.config).stem)
    trace = run(config)
    (out / "trace.csv").write_text(trace.csv_text())
    (out / "trace.json").write_text(trace.to_json())
    (out / "config_resolved.json").write_text(config.to_json())
    family = FAMILIES[trace.family_kind](phi=tuple(trace.final_phi[: _theta_width(config)]))
    summary = _family_summary(family)
    summary.update(termination=trace.termination, convergence_iter=trace.convergence_iter,
                   iterations=len(trace.records) - 1)
    if config.latent is not None:
        summary["latent_phi"] = trace.final_phi[_theta_width(config):]
    _write_json(out / "final_posterior.json", summary)
    print(f"{trace.termination} after {len(trace.records) - 1} iterations; "
          f"final bound {trace.records[-1].bound:.6g}; mean {np.round(family.mean(), 4).tolist()}")
    print(f"artifacts in {out}")
    return trace.exit_code


def _theta_width(config: RunConfig) -> int:
    return 2 if config.family.kind == "Kumaraswamy" else 2 * config.family.dim


# --- compare ------------------------------------------------------------------


def cmd_compare(args) -> int:
    config_a = resolve_config(args)
    config_b = merge(config_a, {"estimator": args.estimator_b})
    out = output_dir(args, "compare", config_a.preset or Path(args.config).stem)
    comp = compare_runs(config_a, config_b, n_repeats=args.repeats)
    _write_json(out / "compare.json", comp.report)
    for kind, fname in ((est.PATHWISE, "gradient_hist_pathwise.csv"), (est.SCORE_FUNCTION, "gradient_hist_score.csv")):
        rows = []
        d = None
        for (at, k, S), prof in sorted(comp.profiles.items()):
            if k != kind:
                continue
            d = prof.samples.shape[1]
            for i, g in enumerate(prof.samples):
                rows.append([at, S, prof.L, i] + [float(v) for v in g])
        _write_csv(out / fname, ["at", "S", "L", "sample"] + [f"grad_{j}" for j in range(d or 0)], rows)
    r = comp.report
    print(f"{r['estimator_a']}: iteration {r['convergence_iter_a']} (converged={r['converged_a']}); "
          f"{r['estimator_b']}: iteration {r['convergence_iter_b']} (converged={r['converged_b']}); "
          f"ratio {r['convergence_ratio_b_over_a']:.3g}")
    print(f"artifacts in {out}")
    return EXIT_OK


# --- posterior check ----------------------------------------------------------


def oracle_for(config: RunConfig):
    """Exact posterior for the conjugate presets, as a frozen scipy distribution."""
    obs = load_observation(config.observation)
    M = int(config.simulator_options.get("M", 100 if config.simulator == "bernoulli" else 15))
    if config.simulator == "bernoulli" and config.prior.kind == "beta":
        k = obs.y_stats[0]
        a0 = float(config.prior.params.get("a", 1.0))
        b0 = float(config.prior.params.get("b", 1.0))
        return {"kind": "beta", "a": a0 + k, "b": b0 + M - k}, stats.beta(a0 + k, b0 + M - k)
    if config.simulator == "exponential" and config.prior.kind == "gamma":
        ybar = obs.y_stats[0]
        alpha = float(config.prior.params.get("alpha", 1.0)) + M
        beta = float(config.prior.params.get("beta", 1.0)) + ybar * M
        return {"kind": "gamma", "alpha": alpha, "rate": beta}, stats.gamma(alpha, scale=1.0 / beta)
    raise CliError(f"no analytic posterior for simulator '{config.simulator}' with a {config.prior.kind} prior")


def mc_kl(family, oracle, n: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo KL(q || oracle) and its standard error."""
    rng = np.random.default_rng(seed)
    nu = family.draw_base(rng, n)
    theta = np.empty(n)
    log_q = np.empty(n)
    for i in range(n):
        t = family.sample(nu[i])
        theta[i] = t[0]
        log_q[i] = family.log_pdf(t)
    diffs = log_q - oracle.logpdf(theta)
    return float(diffs.mean()), float(diffs.std(ddof=1) / math.sqrt(n))


def load_run(run_dir) -> tuple[RunConfig, dict, dict]:
    run_dir = Path(run_dir)
    missing = [f for f in ("config_resolved.json", "final_posterior.json", "trace.json") if not (run_dir / f).exists()]
    if missing:
        raise CliError(f"{run_dir}: missing run artifacts {', '.join(missing)}")
    config = RunConfig.load(run_dir / "config_resolved.json")
    posterior = json.loads((run_dir / "final_posterior.json").read_text())
    trace = json.loads((run_dir / "trace.json").read_text())
    return config, posterior, trace


def posterior_check(config: RunConfig, family, n_draws: int = KL_DRAWS) -> dict:
    params, oracle = oracle_for(config)
    kl, se = mc_kl(family, oracle, n_draws, config.seed)
    fit_mean, fit_std = float(family.mean()[0]), float(math.sqrt(family.variance()[0]))
    o_mean, o_std = float(oracle.mean()), float(oracle.std())
    return {
        "oracle": params,
        "oracle_mean": o_mean,
        "oracle_std": o_std,
        "fitted_mean": fit_mean,
        "fitted_std": fit_std,
        "mean_abs_error": abs(fit_mean - o_mean),
        "mean_rel_error": abs(fit_mean - o_mean) / abs(o_mean),
        "std_rel_error": abs(fit_std - o_std) / o_std,
        "kl_q_oracle": kl,
        "kl_stderr": se,
        "kl_draws": n_draws,
    }


def cmd_posterior_check(args) -> int:
    config, posterior, _ = load_run(args.run_dir)
    family = FAMILIES[posterior["family"]](phi=tuple(posterior["phi"]))
    report = posterior_check(config, family, args.draws)
    _write_json(Path(args.run_dir) / "posterior_check.json", report)
    print(f"fitted mean {report['fitted_mean']:.4f} vs oracle {report['oracle_mean']:.4f}; "
          f"std {report['fitted_std']:.4f} vs {report['oracle_std']:.4f}; "
          f"KL(q||oracle) = {report['kl_q_oracle']:.4g} +/- {report['kl_stderr']:.2g}")
    return EXIT_OK


# --- plot data ----------------------------------------------------------------


def density_grid(family, i: int = 0, n: int = GRID_POINTS) -> tuple[np.ndarray, np.ndarray]:
    if family.kind == "Kumaraswamy":
        x = (np.arange(n) + 0.5) / n
        return x, family.pdf_grid(x)
    m, s = family.mu[i], family.sigma[i]
    if family.kind == "LogNormal":
        hi = math.exp(m + 5.0 * s)
        x = np.linspace(hi / n, hi, n)
    else:
        x = np.linspace(m - 5.0 * s, m + 5.0 * s, n)
    return x, family.pdf_grid(x, i)


def blowfly_series(config: RunConfig, family, n_sims: int = SERIES_SIMS) -> list:
    """Observed series next to quantiles of simulations at the fitted mean."""
    problem = build_problem(config, RngStream(config.seed).generator("init"))
    sim = problem.sim
    theta = [float(v) for v in family.mean()]
    noise = sim.draw_noise(RngStream(config.seed).child(2**20).generator("misc"), n_sims)
    runs = []
    for u in noise:
        try:
            runs.append(sim.trajectory(theta, u))
        except SimulationError as err:
            log.warning("dropping a diverged simulation: %s", err)
    if not runs:
        raise CliError("every simulation at the fitted mean diverged")
    runs = np.array(runs, dtype=float)
    observed = problem.observation.raw
    mean = runs.mean(axis=0)
    p10, p90 = np.percentile(runs, [10, 90], axis=0)
    return [[t, float(observed[t]), float(mean[t]), float(p10[t]), float(p90[t])] for t in range(len(observed))]


def cmd_emit_plotdata(args) -> int:
    run_dir = Path(args.run_dir)
    config, posterior, trace = load_run(run_dir)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "lower_bound.csv", ["iter", "bound", "smoothed_bound"],
               [[r["iter"], float(r["bound"]), float(r["smoothed_bound"])] for r in trace["records"]])
    family = FAMILIES[posterior["family"]](phi=tuple(posterior["phi"]))
    try:
        _, oracle = oracle_for(config)
    except CliError:
        oracle = None
    rows = []
    for i in range(family.dim):
        x, q = density_grid(family, i)
        for xv, qv in zip(x, q):
            rows.append([i, float(xv), float(qv)] + ([float(oracle.pdf(xv))] if oracle is not None else []))
    _write_csv(out / "posterior_density.csv", ["dim", "x", "q"] + (["oracle"] if oracle is not None else []), rows)
    written = ["lower_bound.csv", "posterior_density.csv"]
    if config.simulator == "blowfly":
        _write_csv(out / "series.csv", ["t", "observed", "simulated_mean", "simulated_p10", "simulated_p90"],
                   blowfly_series(config, family))
        written.append("series.csv")
    print(f"wrote {', '.join(written)} to {out}")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("name", nargs="?", help="preset name (same as --preset)")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--estimator", choices=[est.PATHWISE, est.SCORE_FUNCTION])
    p.add_argument("--samples", type=int, help="S, samples from q per iteration")
    p.add_argument("--sims", type=int, help="L, simulations per sample")
    p.add_argument("--latent-samples", type=int, help="K, latent draws per sample")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--optimizer", choices=["adam", "adagrad"])
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avabc", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="fit q for a preset or config file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="paired runs of two estimators plus gradient-variance profiles")
    _add_config_flags(p)
    p.add_argument("--estimator-b", default=est.SCORE_FUNCTION, choices=[est.PATHWISE, est.SCORE_FUNCTION])
    p.add_argument("--repeats", type=int, default=100, help="gradient samples per profile")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("posterior-check", help="compare a finished run against the exact posterior")
    p.add_argument("run_dir")
    p.add_argument("--draws", type=int, default=KL_DRAWS)
    p.set_defaults(func=cmd_posterior_check)

    p = sub.add_parser("emit-plotdata", help="CSV files for bound curves, densities and blowfly series")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_emit_plotdata)
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "name", None) and getattr(args, "preset", None) and args.name != args.preset:
        print(f"error: preset given twice ({args.name} and {args.preset})", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (ConfigError, CliError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
