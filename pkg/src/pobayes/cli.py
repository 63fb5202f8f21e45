"""Command-line entry point: ``generate``, ``fit``, ``simulate`` and ``report``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 archive written but
some cells failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .datagen import SCENARIOS, ScenarioSpec, generate_population, sample_design
from .experiments import (
    ExperimentGrid,
    build_scenario,
    population_seed,
    run_grid,
    sample_seed,
    scenario_truth,
    summarize_grid,
)
from .report import plot_series, render_report
from .sampler import EstimatorSpec, SamplerConfig, run_chain, summarize
from .storage import (
    DataError,
    read_archive,
    read_json,
    read_sample,
    read_truth,
    write_archive,
    write_csv,
    write_json,
    write_population,
    write_sample,
    write_truth,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 2, 3, 4
OUT_ENV = "POBAYES_OUT"

log = logging.getLogger("pobayes")


def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "."))


def _add_sampler_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--burn-in", type=int, default=10_000)
    p.add_argument("--keep", type=int, default=5_000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--proposal-scale", type=float, default=0.1)
    p.add_argument("--no-adapt", action="store_true", help="keep proposal scales fixed during burn-in")
    p.add_argument("--prior-variance", type=float, default=25.0)


def _sampler_config(args, seed: int = 0, model: EstimatorSpec | None = None) -> SamplerConfig:
    return SamplerConfig(
        burn_in=args.burn_in,
        keep=args.keep,
        thin=args.thin,
        proposal_scale=args.proposal_scale,
        adapt=not args.no_adapt,
        prior_variance=args.prior_variance,
        seed=seed,
        model=model or EstimatorSpec(),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pobayes", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a population, a case-control sample and its sealed labels")
    g.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    g.add_argument("--n", type=int, required=True, help="sample size (multiple of 5; 1:4 presence/background)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--population-size", type=int, default=10_000)
    g.add_argument("--out", type=Path, default=None)

    f = sub.add_parser("fit", help="fit one estimator to a sample file")
    f.add_argument("--sample", type=Path, required=True)
    f.add_argument("--truth", type=Path, help="true background labels (read by m0 only)")
    f.add_argument("--model", choices=["m0", "m1", "m2"], default="m2", type=str.lower)
    f.add_argument("--pi", type=float, help="known prevalence (m1)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", type=Path, default=None, help="summary JSON path")
    f.add_argument("--dump-draws", type=Path, help="also write every kept draw to this CSV")
    _add_sampler_args(f)

    s = sub.add_parser("simulate", help="run a replication grid and write a result archive")
    s.add_argument("--scenario", nargs="+", choices=sorted(SCENARIOS), default=["i", "ii", "iii"])
    s.add_argument("--n", nargs="+", type=int, default=[50, 100, 200, 500, 1000, 1500, 2000, 3000])
    s.add_argument("--replicates", type=int, default=1000)
    s.add_argument("--model", nargs="+", choices=["m0", "m1", "m2"], default=["m0", "m1", "m2"], type=str.lower)
    s.add_argument("--seed", type=int, default=0, help="master seed")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--population-size", type=int, default=10_000)
    s.add_argument("--eval-size", type=int, default=2000)
    s.add_argument("--from-manifest", type=Path, help="rerun the grid and sampler settings recorded in a manifest")
    s.add_argument("--out", type=Path, default=None)
    _add_sampler_args(s)

    r = sub.add_parser("report", help="render tables from an archive")
    r.add_argument("archive", type=Path)
    r.add_argument("--plot-out", type=Path, help="write plot series as JSON")
    return parser


# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    out = args.out or _default_out()
    spec = ScenarioSpec.named(args.scenario, N=args.population_size, seed=population_seed(args.seed, args.scenario))
    pop = generate_population(spec)
    sample = sample_design(pop, args.n, seed=sample_seed(args.seed, args.scenario, args.n, 0))
    write_population(out / "population.csv", pop)
    write_sample(out / "sample.csv", sample)
    write_truth(out / "truth.csv", sample.truth)
    write_json(
        out / "dataset.json",
        {
            "scenario": args.scenario,
            "n": args.n,
            "n_p": sample.n_p,
            "n_u": sample.n_u,
            "population_size": pop.N,
            "pi_true": pop.pi_true,
            "seed": args.seed,
            "version": __version__,
        },
    )
    print(f"wrote {out}/population.csv, sample.csv (n_p={sample.n_p}, n_u={sample.n_u}), truth.csv")
    return EXIT_OK


def cmd_fit(args, parser) -> int:
    model = args.model.upper()
    if model == "M1" and args.pi is None:
        parser.error("model m1 requires --pi")
    if model == "M0" and args.truth is None:
        parser.error("model m0 requires --truth")
    if model != "M1" and args.pi is not None:
        parser.error("--pi only applies to model m1")
    if args.pi is not None and not 0.0 < args.pi < 1.0:
        parser.error("--pi must lie strictly between 0 and 1")

    sample = read_sample(args.sample)
    if model == "M0":
        sample = replace(sample, truth=read_truth(args.truth))
        sample.background_labels()  # fail early on missing labels
    config = _sampler_config(args, seed=args.seed, model=EstimatorSpec(model, args.pi))
    out = run_chain(sample, config)
    summary = summarize(out)
    doc = {
        "model": model,
        "known_pi": args.pi,
        "coefficients": ["intercept", *sample.columns],
        "n_p": sample.n_p,
        "n_u": sample.n_u,
        "burn_in": config.burn_in,
        "keep": config.keep,
        "thin": config.thin,
        "seed": args.seed,
        "version": __version__,
        **summary.to_dict(),
    }
    path = args.out or (_default_out() / "fit.json")
    write_json(path, doc)
    if args.dump_draws:
        cols = [f"beta{j}" for j in range(out.beta_draws.shape[1])]
        write_csv(
            args.dump_draws,
            ["iteration", *cols, "n_1u", "log_post"],
            ([i, *map(float, b), int(n), float(lp)] for i, (b, n, lp) in
             enumerate(zip(out.beta_draws, out.n_1u_trace, out.log_post_trace))),
        )
    means = ", ".join(f"{b:.4f}" for b in summary.beta_mean)
    print(f"{model}: beta = ({means}), pi_hat = {summary.pi_hat:.4f}, acceptance = {summary.acceptance_rate:.3f}")
    return EXIT_OK


def _grid_from_args(args) -> tuple[ExperimentGrid, SamplerConfig]:
    if args.from_manifest:
        manifest = read_json(args.from_manifest)
        try:
            grid = ExperimentGrid.from_dict(manifest["grid"])
            config = SamplerConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in manifest["sampler"].items()})
        except (KeyError, TypeError) as exc:
            raise DataError(f"{args.from_manifest}: malformed manifest ({exc})") from exc
        return grid, config
    grid = ExperimentGrid(
        scenarios=tuple(args.scenario),
        sizes=tuple(args.n),
        replicates=args.replicates,
        models=tuple(m.upper() for m in args.model),
        master_seed=args.seed,
        population_size=args.population_size,
        eval_size=args.eval_size,
    )
    return grid, _sampler_config(args)


def _sampler_manifest(config: SamplerConfig) -> dict:
    scale = config.proposal_scale
    return {
        "burn_in": config.burn_in,
        "keep": config.keep,
        "thin": config.thin,
        "proposal_scale": list(scale) if isinstance(scale, tuple) else scale,
        "adapt": config.adapt,
        "prior_mean": config.prior_mean,
        "prior_variance": config.prior_variance,
        "target_accept": config.target_accept,
    }


def simulate(grid: ExperimentGrid, config: SamplerConfig, out: Path, jobs: int = 1) -> tuple[Path, int]:
    """Run ``grid`` and write an archive; returns the path and the number of failed fits."""
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    data = {s: build_scenario(grid, s) for s in grid.scenarios}
    truth = scenario_truth(grid, data)
    results = list(run_grid(grid, config, jobs=jobs, record_errors=True, data=data))
    summary = summarize_grid(results, truth)
    failures = [r for r in results if not r.ok]
    manifest = {
        "package": "pobayes",
        "version": __version__,
        "grid": grid.to_dict(),
        "sampler": _sampler_manifest(config),
        "seeds": {
            "derivation": "numpy SeedSequence(master_seed, spawn_key=(tag, scenario_index, ...))",
            "population": {s: population_seed(grid.master_seed, s) for s in grid.scenarios},
        },
        "population_prevalence": {s: truth[s]["pi"] for s in grid.scenarios},
        "failed_cells": [
            {"scenario": r.scenario, "n": r.n, "model": r.model, "replicate": r.replicate, "error": r.error}
            for r in failures
        ],
    }
    write_archive(out, manifest, results, summary)
    # wall-clock facts live outside the reproducible files
    write_json(
        out / "run_log.json",
        {
            "started": started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "seconds": round(time.perf_counter() - t0, 3),
            "jobs": jobs,
        },
    )
    return out, len(failures)


def cmd_simulate(args) -> int:
    grid, config = _grid_from_args(args)
    out = args.out or (_default_out() / "archive")
    total = len(grid.scenarios) * len(grid.sizes) * grid.replicates * len(grid.models)
    log.info("running %d fits with %d job(s)", total, args.jobs)
    out, failed = simulate(grid, config, out, jobs=args.jobs)
    print(f"wrote archive {out} ({total} fits, {failed} failed)")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_report(args) -> int:
    manifest, results, summary = read_archive(args.archive)
    print(render_report(manifest, summary))
    if args.plot_out:
        write_json(args.plot_out, plot_series(summary))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "fit":
            return cmd_fit(args, parser)
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_report(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # invalid numeric settings or samples the model cannot fit
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
