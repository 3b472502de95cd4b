"""Command line entry point: ``convex-evasion [experiment flags] evade|bench|verify``."""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Optional

import typer
from pydantic import ValidationError

from convex_evasion.core.config import (
    AlgorithmId,
    ClassifierFamily,
    ExperimentConfig,
    load_config,
)
from convex_evasion.core.errors import EvasionError, InvalidInputError
from convex_evasion.geometry.cost import BoundMode
from convex_evasion.harness.experiments import (
    TRIAL_FIELDS,
    BenchSweep,
    run_bench,
    run_evade,
)
from convex_evasion.harness.reports import write_rows, write_trace
from convex_evasion.harness.verify import VerifyOptions, run_verify

app = typer.Typer(
    help="Near-optimal evasion of convex-inducing classifiers by membership queries.",
    no_args_is_help=True,
)

EXIT_FAILED = 1
EXIT_INVALID = 2


@dataclass
class Session:
    config_file: Path | None
    overrides: dict


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(item) for item in text.split(",")]
    except ValueError as exc:
        raise typer.BadParameter(f"expected comma-separated numbers, got {text!r}") from exc


def _nested(flat: dict[str, object]) -> dict:
    """``{"sampler__walk_steps": 5}`` to ``{"sampler": {"walk_steps": 5}}``, unset flags dropped."""
    nested: dict = {}
    for key, value in flat.items():
        if value is None:
            continue
        *parents, name = key.split("__")
        level = nested
        for parent in parents:
            level = level.setdefault(parent, {})
        level[name] = value
    return nested


def _load(ctx: typer.Context) -> ExperimentConfig:
    session: Session = ctx.obj
    try:
        return load_config(session.config_file, **session.overrides)
    except ValidationError as exc:
        for error in exc.errors():
            location = ".".join(str(part) for part in error["loc"]) or "config"
            typer.echo(f"invalid {location}: {error['msg']}", err=True)
        raise typer.Exit(EXIT_INVALID) from exc


def _fail(exc: EvasionError) -> typer.Exit:
    typer.echo(f"error: {exc}", err=True)
    return typer.Exit(EXIT_INVALID if isinstance(exc, InvalidInputError) else EXIT_FAILED)


@app.callback()
def main(
    ctx: typer.Context,
    config: Annotated[
        Optional[Path],
        typer.Option("--config", exists=True, dir_okay=False, help="TOML experiment file."),
    ] = None,
    log_level: Annotated[str, typer.Option(help="Root logger level.")] = "WARNING",
    algorithm: Optional[AlgorithmId] = None,
    family: Annotated[Optional[ClassifierFamily], typer.Option(help="Classifier family.")] = None,
    displacement: Optional[float] = None,
    threshold: Optional[float] = None,
    faces: Optional[int] = None,
    half_width: Optional[float] = None,
    normal: Annotated[Optional[str], typer.Option(help="Comma-separated normal.")] = None,
    dimension: Annotated[Optional[int], typer.Option("--dimension", "-d")] = None,
    exponent: Annotated[Optional[float], typer.Option("--exponent", "-p")] = None,
    weights: Annotated[Optional[str], typer.Option(help="Comma-separated weights.")] = None,
    target: Annotated[Optional[str], typer.Option(help="Comma-separated target.")] = None,
    mode: Optional[BoundMode] = None,
    epsilon: Optional[float] = None,
    eta: Optional[float] = None,
    lower_bound: Optional[float] = None,
    bootstrap_negative: Annotated[
        Optional[bool], typer.Option("--bootstrap-negative/--given-negative")
    ] = None,
    kmls_steps: Optional[int] = None,
    seed: Optional[int] = None,
    trials: Optional[int] = None,
    workers: Optional[int] = None,
    max_queries: Optional[int] = None,
    max_doublings: Optional[int] = None,
    max_iterations: Optional[int] = None,
    transcript_cap: Optional[int] = None,
    samples_per_phase: Optional[int] = None,
    walk_steps: Optional[int] = None,
    rounding_rounds: Optional[int] = None,
    inner_radius_fraction: Optional[float] = None,
    max_phases: Optional[int] = None,
    centered_directions: Annotated[
        Optional[bool], typer.Option("--centered-directions/--raw-directions")
    ] = None,
    memoize: Annotated[Optional[bool], typer.Option("--memoize/--no-memoize")] = None,
    record_transcript: Annotated[
        Optional[bool], typer.Option("--record-transcript/--no-transcript")
    ] = None,
    trace: Annotated[
        Optional[bool], typer.Option("--trace/--no-trace", help="Write JSON-lines traces.")
    ] = None,
    output_dir: Optional[Path] = None,
) -> None:
    """Experiment flags override the environment, which overrides the file."""
    logging.basicConfig(
        level=log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    config_file = config
    if config_file is None and os.environ.get("EVASION_CONFIG_FILE"):
        config_file = Path(os.environ["EVASION_CONFIG_FILE"])
    overrides = _nested(
        {
            "algorithm": algorithm,
            "classifier__family": family,
            "classifier__displacement": displacement,
            "classifier__threshold": threshold,
            "classifier__faces": faces,
            "classifier__half_width": half_width,
            "classifier__normal": _floats(normal),
            "dimension": dimension,
            "exponent": exponent,
            "weights": _floats(weights),
            "target": _floats(target),
            "mode": mode,
            "epsilon": epsilon,
            "eta": eta,
            "lower_bound": lower_bound,
            "bootstrap_negative": bootstrap_negative,
            "kmls_steps": kmls_steps,
            "seed": seed,
            "trials": trials,
            "workers": workers,
            "budgets__max_queries": max_queries,
            "budgets__max_doublings": max_doublings,
            "budgets__max_iterations": max_iterations,
            "budgets__transcript_cap": transcript_cap,
            "sampler__samples_per_phase": samples_per_phase,
            "sampler__walk_steps": walk_steps,
            "sampler__rounding_rounds": rounding_rounds,
            "sampler__inner_radius_fraction": inner_radius_fraction,
            "sampler__max_phases": max_phases,
            "sampler__centered_directions": centered_directions,
            "memoize": memoize,
            "record_transcript": record_transcript,
            "trace": trace,
            "output_dir": output_dir,
        }
    )
    ctx.obj = Session(config_file, overrides)


@app.command()
def evade(ctx: typer.Context) -> None:
    """Run the configured trials and write them to ``evade.csv``."""
    config = _load(ctx)
    rows = []
    for offset in range(config.trials):
        trial = config.model_copy(update={"seed": config.seed + offset})
        try:
            outcome = run_evade(trial)
        except EvasionError as exc:
            raise _fail(exc) from exc
        rows.append(outcome.record.row())
        typer.echo(outcome.record.model_dump_json(by_alias=True))
        if trial.trace and outcome.result is not None:
            name = f"trace-{trial.algorithm}-{trial.seed}.jsonl"
            write_trace(trial.output_dir / name, outcome.result.trace)
    path = write_rows(config.output_dir / "evade.csv", rows, TRIAL_FIELDS)
    typer.echo(f"wrote {path}", err=True)


@app.command()
def bench(
    ctx: typer.Context,
    name: Annotated[str, typer.Option(help="Base name of the CSV files.")] = "bench",
    algorithms: Annotated[
        Optional[list[AlgorithmId]], typer.Option("--sweep-algorithm", help="Repeatable.")
    ] = None,
    dimensions: Annotated[
        Optional[list[int]], typer.Option("--sweep-dimension", help="Repeatable.")
    ] = None,
    epsilons: Annotated[
        Optional[list[float]], typer.Option("--sweep-epsilon", help="Repeatable.")
    ] = None,
) -> None:
    """Run a grid of trials; each unswept axis takes the configured value.

    Seeds run from ``--seed`` for ``--trials`` values.
    """
    config = _load(ctx)
    try:
        sweep = BenchSweep(
            name=name,
            algorithms=algorithms or [config.algorithm],
            dimensions=dimensions or [config.dimension],
            epsilons=epsilons or [config.accuracy],
            seeds=list(range(config.seed, config.seed + config.trials)),
        )
    except ValidationError as exc:
        typer.echo(f"invalid sweep: {exc}", err=True)
        raise typer.Exit(EXIT_INVALID) from exc
    try:
        report = run_bench(config, sweep)
    except (EvasionError, ValidationError) as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(EXIT_INVALID) from exc
    for row in report.summary_rows:
        typer.echo(
            "{algorithm} D={D} eps={epsilon}: {converged}/{trials} converged, "
            "median {median_queries} queries, ceilings kmls {kmls_ceiling} "
            "mls {mls_ceiling}".format(**row)
        )
    typer.echo(f"wrote {report.trials} and {report.summary}", err=True)


@app.command()
def verify(
    ctx: typer.Context,
    suite: Annotated[str, typer.Argument(help="Suite name or 'all'.")] = "all",
    inject_nonconvex: Annotated[
        bool, typer.Option(help="Swap in non-convex classifiers; the check must fail.")
    ] = False,
    cases: Annotated[int, typer.Option(min=1, help="Random instances per suite.")] = 100,
) -> None:
    """Run the verification suites; exit 1 when any fails."""
    config = _load(ctx)
    options = VerifyOptions(seed=config.seed, inject_nonconvex=inject_nonconvex, cases=cases)
    try:
        report = run_verify(suite, options)
    except InvalidInputError as exc:
        raise _fail(exc) from exc
    for result in report.suites:
        status = "ok" if result.passed else "FAILED"
        typer.echo(f"{result.name}: {status} ({result.checks} checks, {result.seconds:.1f}s)")
        for failure in result.failures:
            typer.echo(f"  {failure}")
    if not report.passed:
        raise typer.Exit(EXIT_FAILED)
