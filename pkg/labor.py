import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import click
import numpy as np
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).parent))

from config import Settings, load_settings
from laborstat import __version__
from laborstat.binning import count_outside, firm_pdf, mean_workers_curve, worker_pdf
from laborstat.cleaner import clean, parse_sector_list, read_records, records_frame
from laborstat.equilibrium import TABLE1, beta_mu_product, capacity, occupancy_curve
from laborstat.errors import EmptyInputError, InsufficientDataError, InvariantError, LaborstatError
from laborstat.fitting import RESIDUAL_SPACES, FitStarts, fit, fitted_curve, log_centers, synthetic_curve
from laborstat.logger import get_logger, setup_logging
from laborstat.manifest import ManifestTracker, generate_run_id
from laborstat.models import (
    BinnedCurve,
    Limiter,
    LogBinning,
    ModelParams,
    ProductivityGrid,
    RunManifest,
    SimConfig,
)
from laborstat.population import synthetic_population
from laborstat.simulator import (
    flux_balance_report,
    g_linearity_check,
    init_state,
    merge_results,
    run_chains,
)
from laborstat.storage import ManifestStorage, ResultStorage, load_curve
from laborstat.verify import SUITE_NAMES, run_suite

EXIT_OK = 0
EXIT_DATA = 2
EXIT_INVARIANT = 3
EXIT_USAGE = 64
EXIT_INTERRUPT = 130

MODEL_CURVE_POINTS = 200


class RunContext:
    """Settings, logging, storage and manifest for one subcommand run."""

    def __init__(self, subcommand: str, settings: Settings, seed: Optional[int] = None):
        self.settings = settings
        self.run_id = generate_run_id(subcommand)
        settings.ensure_dirs()
        setup_logging(
            log_file=settings.get_log_path(f"{self.run_id}.log"),
            level=settings.log_level,
            run_id=self.run_id
        )
        self.logger = get_logger(__name__)
        self.storage = ResultStorage(settings.output_dir)
        self.tracker = ManifestTracker(
            run_id=self.run_id,
            tool_version=__version__,
            subcommand=subcommand,
            config=settings.resolved(),
            seed=seed
        )

        self.logger.info("=" * 70)
        self.logger.info(f"LABORSTAT {subcommand.upper()} - Starting")
        self.logger.info("=" * 70)

    def save_csv(self, columns, filename: str) -> Path:
        path = self.storage.save_csv(columns, filename)
        self.tracker.add_output(path)
        return path

    def save_json(self, data, filename: str) -> Path:
        path = self.storage.save_json(data, filename)
        self.tracker.add_output(path)
        return path

    def finish(self) -> RunManifest:
        manifest = self.tracker.finalize()
        ManifestStorage(self.settings.output_dir).save_manifest(manifest)
        return manifest

    def fail(self, error: Exception) -> None:
        self.tracker.add_error(type(error).__name__, str(error))
        self.logger.error(f"{type(error).__name__}: {error}")
        self.finish()


def common_options(func):
    func = click.option(
        '--log-level',
        type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']),
        default=None,
        help='Logging level (default: from config)'
    )(func)
    func = click.option(
        '--output-dir',
        '-o',
        type=click.Path(file_okay=False, path_type=Path),
        default=None,
        help='Directory for outputs and the run manifest'
    )(func)
    func = click.option(
        '--config',
        'config_file',
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        default=None,
        help='Flat key=value config file, or a run manifest to re-run'
    )(func)
    return func


def _settings(config_file: Optional[Path], **overrides: Any) -> Settings:
    return load_settings(config_file, overrides)


def _int_steps(value: Optional[float]) -> Optional[int]:
    if value is None:
        return None
    if value < 0 or value != int(value):
        raise click.BadParameter(f"{value} is not a non-negative integer", param_hint="--steps")
    return int(value)


def _limiter(settings: Settings) -> Limiter:
    if settings.limiter == "linear-ramp":
        return Limiter.linear_ramp(settings.capacity_a, settings.capacity_gamma)
    return Limiter.unbounded()


@click.group()
@click.version_option(__version__, prog_name="laborstat")
def cli():
    """Labor productivity equilibrium: simulate, fit, analyze, synth, verify."""


@cli.command()
@common_options
@click.option('--levels', '-m', type=int, default=None, help='Number of productivity levels M')
@click.option('--dc', type=float, default=None, help='Grid spacing (10^3 yen/person)')
@click.option('--workers', '-n', type=int, default=None, help='Total workers N')
@click.option('--total-index', type=int, default=None, help='Conserved index sum Yidx')
@click.option('--steps', type=float, default=None, help='Proposed moves; scientific notation allowed')
@click.option('--seed', type=int, default=None, help='PCG64 seed')
@click.option('--burn-in', type=int, default=None, help='Proposals discarded before measurement')
@click.option('--sample-every', type=int, default=None, help='Measurement stride in proposals')
@click.option('--chains', type=int, default=None, help='Independent chains seeded seed, seed + 1, ...')
@click.option('--processes', type=int, default=None, help='Worker processes for independent chains')
@click.option(
    '--limiter',
    type=click.Choice(['linear-ramp', 'unbounded']),
    default=None,
    help='Acceptance limiter'
)
@click.option('--capacity-a', type=float, default=None, help='Capacity amplitude A')
@click.option('--capacity-gamma', type=float, default=None, help='Capacity exponent gamma')
@click.option('--occupancy', type=str, default=None, help='Explicit initial occupancy, e.g. "2,0,1"')
@click.option('--debug/--no-debug', default=None, help='Check conservation after every accepted move')
def simulate(
    config_file: Optional[Path],
    output_dir: Optional[Path],
    log_level: Optional[str],
    levels: Optional[int],
    dc: Optional[float],
    workers: Optional[int],
    total_index: Optional[int],
    steps: Optional[float],
    seed: Optional[int],
    burn_in: Optional[int],
    sample_every: Optional[int],
    chains: Optional[int],
    processes: Optional[int],
    limiter: Optional[str],
    capacity_a: Optional[float],
    capacity_gamma: Optional[float],
    occupancy: Optional[str],
    debug: Optional[bool]
):
    """Run the exchange chain and write time-averaged occupancy."""
    if occupancy is not None:
        try:
            parts = [int(part) for part in occupancy.split(",")]
        except ValueError:
            raise click.BadParameter(f"{occupancy!r} is not a comma-separated list of integers",
                                     param_hint="--occupancy")
        if levels is None:
            levels = len(parts)

    settings = _settings(
        config_file,
        levels=levels, dc=dc, workers=workers, total_index=total_index, occupancy=occupancy,
        steps=_int_steps(steps), seed=seed, burn_in=burn_in, sample_every=sample_every,
        chains=chains, processes=processes,
        limiter=limiter, capacity_a=capacity_a, capacity_gamma=capacity_gamma,
        output_dir=output_dir, log_level=log_level, debug=debug
    )
    explicit = settings.occupancy_list()
    if settings.levels is None:
        raise click.UsageError("--levels is required (flag, config file or LABORSTAT_LEVELS)")
    if explicit is None and settings.workers is None:
        raise click.UsageError("--workers is required unless --occupancy is given")

    ctx = RunContext("simulate", settings, seed=settings.seed)
    try:
        grid = ProductivityGrid(levels=settings.levels, dc=settings.dc)
        lim = _limiter(settings)
        if explicit is not None:
            state = init_state(grid, lim, occupancy=explicit)
        else:
            state = init_state(
                grid, lim,
                workers=settings.workers,
                total_index=settings.resolved_total_index()
            )
        config = SimConfig(
            seed=settings.seed,
            steps=settings.steps,
            burn_in=settings.burn_in,
            sample_every=settings.sample_every,
            limiter=lim,
            grid=grid,
            debug=settings.debug
        )
        results = run_chains(config, state, settings.chain_seeds(), max_workers=settings.processes)
        averages, ledger = merge_results(results)
        final_state = results[0].final_state
        proposals = sum(result.proposals for result in results)
        accepted = sum(result.accepted for result in results)

        c = grid.c_values()
        if averages.samples:
            n_mean = averages.mean
            n_var = averages.variance
        else:
            n_mean = np.asarray(final_state.occupancy, dtype=float)
            n_var = np.zeros(grid.levels)
        g_of_c = (
            np.full(grid.levels, np.inf) if lim.is_unbounded
            else np.atleast_1d(capacity(c, lim.capacity))
        )
        ctx.save_csv({
            "level_index": np.arange(1, grid.levels + 1),
            "c": c,
            "n_mean": n_mean,
            "n_var": n_var,
            "g_of_c": g_of_c,
        }, "occupancy.csv")

        report = flux_balance_report(ledger)
        ctx.save_csv({
            "i": [row.signature[0] for row in report.rows],
            "j": [row.signature[1] for row in report.rows],
            "k": [row.signature[2] for row in report.rows],
            "l": [row.signature[3] for row in report.rows],
            "forward": [row.forward for row in report.rows],
            "reverse": [row.reverse for row in report.rows],
            "z_score": [row.z_score for row in report.rows],
        }, "flux_report.csv")

        summary: Dict[str, Any] = {
            "workers": final_state.workers,
            "total_index": final_state.total_index,
            "output": final_state.output(grid),
            "chains": len(results),
            "proposals": proposals,
            "accepted": accepted,
            "acceptance_rate": accepted / proposals if proposals else 0.0,
            "samples": averages.samples,
            "flux_signatures": len(report.rows),
            "flux_outlier_fraction": report.outlier_fraction,
        }
        if averages.samples:
            try:
                linearity = g_linearity_check(averages, lim, grid)
                summary["linearity_r_squared"] = linearity.r_squared
                summary["linearity_beta"] = linearity.beta
            except InsufficientDataError as e:
                ctx.logger.info(f"Skipping linearity check: {e}")
        ctx.tracker.set_summary(**summary)
    except (LaborstatError, ValidationError) as e:
        ctx.fail(e)
        raise

    print_summary(ctx.finish())
    return EXIT_OK


def _fit_curve(ctx: RunContext, curve: BinnedCurve) -> None:
    settings = ctx.settings
    starts = FitStarts(
        betas=settings.float_list("beta_starts"),
        gammas=settings.float_list("gamma_starts")
    )
    result = fit(
        curve,
        starts=starts,
        tol=settings.fit_tol,
        max_evals=settings.fit_max_evals,
        polish=settings.fit_polish,
        residuals=settings.residuals
    )

    payload = result.model_dump(mode="json")
    payload["beta_mu"] = beta_mu_product(result.params)
    payload["ln_A"] = float(np.log(result.params.A))
    payload["c_p"] = result.peak
    ctx.save_json(payload, "fit_result.json")

    if settings.emit_curve:
        ctx.save_csv(fitted_curve(result.params, curve), "fitted_curve.csv")
        dense = log_centers(curve.c_center[0], curve.c_center[-1], MODEL_CURVE_POINTS)
        ctx.save_csv(occupancy_curve(result.params, dense), "model_curve.csv")

    ctx.tracker.set_summary(
        beta=result.params.beta,
        mu=result.params.mu,
        A=result.params.A,
        gamma=result.params.gamma,
        c_p=result.peak,
        chi2=result.chi2,
        converged=result.converged,
        polish_converged=result.polish_converged,
    )


fit_options = [
    click.option('--tol', type=float, default=None, help='Simplex tolerance'),
    click.option('--max-evals', type=int, default=None, help='Objective evaluations per start'),
    click.option('--polish/--no-polish', default=None, help='Least-squares polish of the best start'),
    click.option(
        '--residuals',
        type=click.Choice(list(RESIDUAL_SPACES)),
        default=None,
        help='Residual space of the chi-square (default: log)'
    ),
    click.option(
        '--emit-curve/--no-emit-curve',
        default=None,
        help='Write the fitted model next to the data and on a dense grid'
    ),
]


def with_fit_options(func):
    for option in reversed(fit_options):
        func = option(func)
    return func


@cli.command(name="fit")
@common_options
@click.argument('curve_file', type=click.Path(dir_okay=False, path_type=Path))
@with_fit_options
def fit_command(
    config_file: Optional[Path],
    output_dir: Optional[Path],
    log_level: Optional[str],
    curve_file: Path,
    tol: Optional[float],
    max_evals: Optional[int],
    polish: Optional[bool],
    residuals: Optional[str],
    emit_curve: Optional[bool]
):
    """Fit (beta, mu, A, gamma) to a binned curve CSV (c_center, n_mean[, weight])."""
    settings = _settings(
        config_file,
        fit_tol=tol, fit_max_evals=max_evals, fit_polish=polish,
        residuals=residuals, emit_curve=emit_curve,
        output_dir=output_dir, log_level=log_level
    )
    ctx = RunContext("fit", settings)
    try:
        curve = load_curve(curve_file)
        ctx.tracker.add_input(curve_file)
        ctx.logger.info(f"Loaded {len(curve)} bins from {curve_file}")
        _fit_curve(ctx, curve)
    except (LaborstatError, ValidationError, OSError) as e:
        ctx.fail(e)
        raise

    print_summary(ctx.finish())
    return EXIT_OK


@cli.command()
@common_options
@click.argument('records_file', type=click.Path(dir_okay=False, path_type=Path))
@click.option('--c-min', type=float, default=None, help='Lower binning bound')
@click.option('--c-max', type=float, default=None, help='Upper binning bound')
@click.option('--bins-per-decade', type=int, default=None, help='Log bins per decade')
@click.option('--exclude-sectors', type=str, default=None, help='Comma-separated sectors to drop; "" drops none')
@click.option('--include-sectors', type=str, default=None, help='Keep only these comma-separated sectors')
@click.option('--year', 'years', type=int, multiple=True, help='Keep only these years (repeatable)')
@click.option('--unit-scale', type=float, default=None, help='Multiplier turning input money into 10^3 yen')
@click.option('--fit/--no-fit', 'do_fit', default=None, help='Fit the mean-workers curve')
@with_fit_options
def analyze(
    config_file: Optional[Path],
    output_dir: Optional[Path],
    log_level: Optional[str],
    records_file: Path,
    c_min: Optional[float],
    c_max: Optional[float],
    bins_per_decade: Optional[int],
    exclude_sectors: Optional[str],
    include_sectors: Optional[str],
    years: Tuple[int, ...],
    unit_scale: Optional[float],
    do_fit: Optional[bool],
    tol: Optional[float],
    max_evals: Optional[int],
    polish: Optional[bool],
    residuals: Optional[str],
    emit_curve: Optional[bool]
):
    """Clean firm records, bin them, and write densities and the mean-workers curve."""
    settings = _settings(
        config_file,
        c_min=c_min, c_max=c_max, bins_per_decade=bins_per_decade,
        exclude_sectors=exclude_sectors, include_sectors=include_sectors,
        years=",".join(str(year) for year in years) if years else None,
        input_unit_scale=unit_scale, analyze_fit=do_fit,
        fit_tol=tol, fit_max_evals=max_evals, fit_polish=polish,
        residuals=residuals, emit_curve=emit_curve,
        output_dir=output_dir, log_level=log_level
    )
    ctx = RunContext("analyze", settings)
    try:
        binning = LogBinning(
            c_min=settings.c_min,
            c_max=settings.c_max,
            bins_per_decade=settings.bins_per_decade
        )
        records = read_records(records_file, settings.input_unit_scale)
        ctx.tracker.add_input(records_file)

        cleaned, report = clean(
            records,
            exclusions=parse_sector_list(settings.exclude_sectors),
            include_sectors=parse_sector_list(settings.include_sectors) or None,
            years=settings.year_list()
        )
        if not cleaned:
            raise EmptyInputError(
                f"no records survived cleaning ({report.rejected_total} rejected)"
            )
        report.outside_binning_range = count_outside(cleaned, binning)
        ctx.save_json(report, "cleaning_report.json")

        ctx.storage.save_density(firm_pdf(cleaned, binning), "firm_pdf.csv")
        ctx.storage.save_density(worker_pdf(cleaned, binning), "worker_pdf.csv")
        curve = mean_workers_curve(cleaned, binning)
        ctx.storage.save_curve(curve, "mean_workers.csv")
        for name in ("firm_pdf.csv", "worker_pdf.csv", "mean_workers.csv"):
            ctx.tracker.add_output(settings.get_output_path(name))

        ctx.tracker.set_summary(
            records_read=report.input_count,
            records_kept=report.output_count,
            records_rejected=report.rejected_total,
            outside_binning_range=report.outside_binning_range,
            occupied_bins=len(curve),
        )
        if settings.analyze_fit:
            _fit_curve(ctx, curve)
    except (LaborstatError, ValidationError, OSError) as e:
        ctx.fail(e)
        raise

    print_summary(ctx.finish())
    return EXIT_OK


@cli.command()
@common_options
@click.option(
    '--row',
    type=click.Choice(sorted(TABLE1)),
    default=None,
    help='Published parameter row to start from (default: all)'
)
@click.option('--beta', type=float, default=None, help='Override beta')
@click.option('--mu', type=float, default=None, help='Override mu')
@click.option('--capacity-a', 'amplitude', type=float, default=None, help='Override A')
@click.option('--capacity-gamma', 'gamma', type=float, default=None, help='Override gamma')
@click.option('--bins', type=int, default=None, help='Number of log-spaced bin centers')
@click.option('--c-min', type=float, default=None, help='Lowest productivity')
@click.option('--c-max', type=float, default=None, help='Highest productivity')
@click.option('--sigma', type=float, default=None, help='Log-normal noise on n_mean')
@click.option('--seed', type=int, default=None, help='Noise seed')
@click.option('--firms', type=int, default=None, help='Write N synthetic firm records instead of a curve')
def synth(
    config_file: Optional[Path],
    output_dir: Optional[Path],
    log_level: Optional[str],
    row: Optional[str],
    beta: Optional[float],
    mu: Optional[float],
    amplitude: Optional[float],
    gamma: Optional[float],
    bins: Optional[int],
    c_min: Optional[float],
    c_max: Optional[float],
    sigma: Optional[float],
    seed: Optional[int],
    firms: Optional[int]
):
    """Generate a synthetic curve, or a synthetic firm population with --firms."""
    settings = _settings(
        config_file,
        synth_row=row, synth_beta=beta, synth_mu=mu, synth_a=amplitude, synth_gamma=gamma,
        synth_firms=firms, synth_bins=bins, c_min=c_min, c_max=c_max,
        noise_sigma=sigma, seed=seed,
        output_dir=output_dir, log_level=log_level
    )
    ctx = RunContext("synth", settings, seed=settings.seed)
    try:
        params = ModelParams(**{
            **TABLE1[settings.synth_row].model_dump(),
            **settings.synth_overrides()
        })
        ctx.tracker.set_summary(row=settings.synth_row, params=params.model_dump())

        if settings.synth_firms is not None:
            population = synthetic_population(
                params, settings.synth_firms, seed=settings.seed,
                c_min=settings.c_min, c_max=settings.c_max
            )
            ctx.save_csv(records_frame(population), "synthetic_records.csv")
            ctx.tracker.set_summary(firms=len(population))
        else:
            curve = synthetic_curve(
                params,
                log_centers(settings.c_min, settings.c_max, settings.synth_bins),
                sigma=settings.noise_sigma,
                seed=settings.seed
            )
            path = ctx.storage.save_curve(curve, "synthetic_curve.csv")
            ctx.tracker.add_output(path)
            ctx.tracker.set_summary(bins=len(curve), sigma=settings.noise_sigma)
    except (LaborstatError, ValidationError) as e:
        ctx.fail(e)
        raise

    print_summary(ctx.finish())
    return EXIT_OK


@cli.command()
@common_options
@click.argument('suite', type=click.Choice(list(SUITE_NAMES)))
@click.option('--steps', type=float, default=None, help='Proposals in the reference chain (default: 1e7)')
@click.option('--seed', type=int, default=None, help='Seed of the reference chain')
def verify(
    config_file: Optional[Path],
    output_dir: Optional[Path],
    log_level: Optional[str],
    suite: str,
    steps: Optional[float],
    seed: Optional[int]
):
    """Run a self-check suite: closed-form, balance, roundtrip or all."""
    settings = _settings(
        config_file,
        verify_steps=_int_steps(steps), seed=seed,
        output_dir=output_dir, log_level=log_level
    )
    ctx = RunContext("verify", settings, seed=settings.seed)
    try:
        report = run_suite(suite, steps=settings.verify_steps, seed=settings.seed)
    except InvariantError as e:
        ctx.fail(e)
        raise

    ctx.save_json(
        {"suite": report.suite, "passed": report.passed,
         "checks": [check.model_dump(mode="json") for check in report.checks]},
        "verify_report.json"
    )
    ctx.tracker.set_summary(
        passed=report.passed,
        checks=len(report.checks),
        failed=report.failed,
    )
    manifest = ctx.finish()
    print_summary(manifest)
    for check in report.checks:
        print(f"  [{'PASS' if check.passed else 'FAIL'}] {check.name:22} {check.detail}")
    return EXIT_OK if report.passed else EXIT_INVARIANT


def print_summary(manifest: RunManifest) -> None:
    print("\n" + "=" * 70)
    print(f"{manifest.subcommand.upper()} SUMMARY")
    print("=" * 70)
    print(f"Run ID:              {manifest.run_id}")
    print(f"Duration:            {manifest.duration_seconds:.2f} seconds")
    if manifest.seed is not None:
        print(f"Seed:                {manifest.seed}")
    print()
    for key, value in manifest.summary.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"  {key:22} {value}")
    print()
    if manifest.outputs:
        print("Outputs:")
        for output in manifest.outputs:
            print(f"  - {output}")
    print("=" * 70)


def main(argv: Optional[List[str]] = None) -> int:
    logger = get_logger(__name__)
    try:
        code = cli.main(args=argv, prog_name="labor.py", standalone_mode=False)
        return code if isinstance(code, int) else EXIT_OK
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_DATA
    except (click.Abort, KeyboardInterrupt):
        logger.warning("Interrupted by user")
        click.echo("Aborted.", err=True)
        return EXIT_INTERRUPT
    except InvariantError as e:
        logger.error(f"Invariant violated: {e}", exc_info=True)
        click.echo(f"Error: invariant violated: {e}", err=True)
        return EXIT_INVARIANT
    except (LaborstatError, ValidationError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        click.echo(f"Error: {e}", err=True)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
