# recps/main.py
# Command line entry point: prepare -> score -> attack -> unlearn -> report
import logging
import sys
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Sequence

import click
from tabulate import tabulate

from recps.core.config import load_run_config, parse_assignments
from recps.core.logging import configure_logging
from recps.models.checkpoint import load_checkpoint
from recps.schemas.run import RemovalPlan, RunConfig
from recps.services.attack_eval import evaluate_attack, hit_rate_at_k, read_metrics, write_metrics, write_roc_csv
from recps.services.pipeline import load_prepared_dataset, prepare_run, train_target
from recps.services.scoring import build_score_table, load_score_table, save_score_table
from recps.services.shadow import load_ensemble, load_target, save_ensemble
from recps.services.toy import write_toy_dataset
from recps.services.unlearn import run_removal_experiment, write_removal_report
from recps.utils.exceptions import (
    EvaluationError,
    MissingInputError,
    ProvenanceError,
    VocabularyError,
    cli_error_handler,
)
from recps.utils.hashing import config_hash

logger = logging.getLogger(__name__)

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def common_options(fn: Callable) -> Callable:
    """--config, --seed, --workers, --out, --set and --log-level for every subcommand."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="Flat KEY=VALUE configuration file."),
        click.option("--seed", type=int, default=None, help="Master seed."),
        click.option("--workers", type=int, default=None, help="Worker processes for shadow training."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
        click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
                     help="Override any configuration field; repeatable."),
        click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def guarded(command: str) -> Callable:
    """Map every failure of a subcommand to a logged error and an exit code."""

    def decorator(fn: Callable) -> Callable:
        @wraps(fn)
        def wrapper(*args, **kwargs):
            configure_logging(kwargs.get("log_level") or "INFO")
            try:
                return fn(*args, **kwargs)
            except click.exceptions.Exit:
                raise
            except Exception as e:
                code = cli_error_handler(e, command)
                click.echo(f"Error: {getattr(e, 'message', None) or e}", err=True)
                sys.exit(code)

        return wrapper

    return decorator


def resolve_config(
    config_path: Optional[str],
    seed: Optional[int],
    workers: Optional[int],
    out: Optional[str],
    assignments: Sequence[str],
    log_level: Optional[str],
    defaults: Optional[Mapping[str, Any]] = None,
    **extra: Any,
) -> RunConfig:
    overrides: Dict[str, Any] = dict(parse_assignments(assignments))
    overrides.update({"seed": seed, "workers": workers, "output_dir": out, "log_level": log_level})
    overrides.update(extra)
    config = load_run_config(config_path, overrides, defaults=defaults)
    configure_logging(config.log_level)
    return config


def sweep_point_name(plan: RemovalPlan) -> str:
    """Directory of one sweep point below its arm, e.g. users-0.02_interactions-0.5."""
    name = f"users-{plan.target_user_fraction:g}"
    if plan.mode != "user-level":
        name += f"_interactions-{plan.interaction_fraction:g}"
    return name


@click.group()
@click.version_option(package_name="recps")
def cli():
    """Privacy scores for the interactions and users of recommender training data."""


@cli.command()
@click.option("--dataset", "dataset_path", type=click.Path(dir_okay=False), default=None,
              help="Interaction log (overrides dataset_path).")
@click.option("--format", "dataset_format", type=click.Choice(["tsv", "csv", "movielens-dat", "canonical"]),
              default=None)
@common_options
@guarded("prepare")
def prepare(dataset_path, dataset_format, config_path, seed, workers, out, assignments, log_level):
    """Train the shadow ensemble and the attacked target; write the ensemble directory."""
    config = resolve_config(
        config_path, seed, workers, out, assignments, log_level,
        dataset_path=dataset_path, dataset_format=dataset_format,
    )
    ds = load_prepared_dataset(config)
    ensemble, target = prepare_run(ds, config)
    directory = Path(config.output_dir)
    digest = save_ensemble(ensemble, directory, target)
    click.echo(f"Ensemble of {ensemble.m} shadow models written to {directory} (digest {digest})")


@cli.command()
@click.argument("ensemble_dir", type=click.Path(file_okay=False))
@click.option("--user", "users", multiple=True, help="Score only these user keys; repeatable.")
@click.option("--global-threshold", "global_threshold", type=float, default=None, metavar="T",
              help="Also write the fixed-threshold (lambda > T) diagnostic score as global_score.")
@common_options
@guarded("score")
def score(ensemble_dir, users, global_threshold, config_path, seed, workers, out, assignments, log_level):
    """Score every training interaction (or the given users) of an ensemble."""
    resolve_config(config_path, seed, workers, out, assignments, log_level)
    ensemble = load_ensemble(ensemble_dir)
    selected = None
    if users:
        index = ensemble.dataset.user_index
        unknown = [key for key in users if key not in index]
        if unknown:
            raise VocabularyError(f"Unknown users: {', '.join(unknown)}", {"users": unknown})
        selected = [index[key] for key in users]
    table = build_score_table(ensemble, selected, global_threshold=global_threshold)
    directory = Path(out) if out else Path(ensemble_dir).parent / "scores"
    save_score_table(table, directory)
    if len(table.residual):
        click.echo(f"{len(table.residual)} interactions could not be scored; see residual.csv", err=True)
    click.echo(f"Scored {len(table)} interactions of {len(table.users)} users into {directory}")


@cli.command()
@click.argument("ensemble_dir", type=click.Path(file_okay=False))
@click.option("--target", "target_path", type=click.Path(dir_okay=False), default=None,
              help="Target checkpoint (default: the target stored with the ensemble).")
@common_options
@guarded("attack")
def attack(ensemble_dir, target_path, config_path, seed, workers, out, assignments, log_level):
    """Run the likelihood-ratio attack on a target model; write roc.csv and metrics.txt."""
    ensemble = load_ensemble(ensemble_dir)
    config = resolve_config(
        config_path, seed, workers, out, assignments, log_level, defaults=ensemble.run_config
    )
    target = load_target(ensemble_dir)
    if target is None:
        raise EvaluationError("The ensemble directory holds no evaluation population")
    if target_path:
        if not Path(target_path).is_file():
            raise MissingInputError(target_path)
        target.model = load_checkpoint(target_path)

    report = evaluate_attack(ensemble, target, config.hr_k)
    report.extra["config_hash"] = config_hash(config.manifest_view())
    report.extra["ensemble"] = ensemble.digest
    directory = Path(out) if out else Path(ensemble_dir).parent / "attack"
    write_roc_csv(report.curve, directory / "roc.csv")
    write_metrics(report.metrics(), directory / "metrics.txt")
    click.echo(f"AUC={report.curve.auc:.4f}; results in {directory}")


@cli.command()
@click.argument("ensemble_dir", type=click.Path(file_okay=False))
@click.option("--scores", "scores_dir", type=click.Path(file_okay=False), default=None,
              help="Baseline score table (default: computed from the ensemble).")
@common_options
@guarded("unlearn")
def unlearn(ensemble_dir, scores_dir, config_path, seed, workers, out, assignments, log_level):
    """
    Run the configured removal arms against the baseline scores.

    One report directory per arm, or per arm and sweep point when
    removal_user_fractions or removal_interaction_fractions list several values.
    """
    ensemble = load_ensemble(ensemble_dir)
    config = resolve_config(
        config_path, seed, workers, out, assignments, log_level, defaults=ensemble.run_config
    )
    if scores_dir:
        baseline = load_score_table(scores_dir)
        if baseline.ensemble_ref != ensemble.digest:
            raise ProvenanceError(
                "Score table was computed from a different ensemble",
                {"scores": baseline.ensemble_ref, "ensemble": ensemble.digest},
            )
    else:
        baseline = build_score_table(ensemble)

    ds = ensemble.dataset
    hr_before = hit_rate_at_k(train_target(ds, config), ds, config.hr_k)
    directory = Path(out) if out else Path(ensemble_dir).parent / "unlearn"
    rows = []
    for arm in config.removal_arms:
        plans = config.removal_grid(arm)
        for plan in plans:
            report, removal, _ = run_removal_experiment(ds, config, plan, baseline, hr_before)
            target = directory / arm
            if len(plans) > 1:
                target = target / sweep_point_name(plan)
            write_removal_report(report, removal, target)
            rows.append([
                arm, plan.target_user_fraction, plan.interaction_fraction if arm != "user-level" else None,
                report.removed_interactions, report.hr_after, report.hr_drop_pct, report.reduced_user_fraction,
            ])
    click.echo(tabulate(
        rows,
        headers=[
            "arm", "user_fraction", "interaction_fraction", "removed",
            f"hr@{config.hr_k}", "hr_drop_pct", "reduced_user_fraction",
        ],
        floatfmt=".4f",
        missingval="-",
    ))


@cli.command()
@click.argument("directory", type=click.Path(file_okay=False))
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None)
@guarded("report")
def report(directory, log_level):
    """Tabulate every metrics.txt below DIRECTORY."""
    root = Path(directory)
    files = sorted(root.rglob("metrics.txt"))
    if not files:
        raise MissingInputError(str(root / "metrics.txt"))
    tables = [(path.parent.relative_to(root).as_posix() or ".", read_metrics(path)) for path in files]
    keys = []
    for _, metrics in tables:
        keys.extend(key for key in metrics if key not in keys)
    rows = [[run] + [metrics.get(key, "") for key in keys] for run, metrics in tables]
    click.echo(tabulate(rows, headers=["run"] + keys))


@cli.command()
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--users", "num_users", type=int, default=200, show_default=True)
@click.option("--items", "num_items", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None)
@guarded("toy")
def toy(path, num_users, num_items, seed, log_level):
    """Write the bundled synthetic interaction log to PATH."""
    written = write_toy_dataset(path, num_users, num_items, seed)
    click.echo(f"Toy dataset written to {written}")


if __name__ == "__main__":
    cli()
