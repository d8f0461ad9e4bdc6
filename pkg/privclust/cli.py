import os
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import typer
from dotenv import load_dotenv
from pydantic import ValidationError
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from privclust.config_wrapper import format_validation_error
from privclust.dataset import ingest_csv
from privclust.errors import ConfigError, PrivclustError
from privclust.runner import ExperimentRunner

app = typer.Typer()

CONFIG_OPTION = typer.Option(..., "--config", help="Path to the YAML experiment configuration")
SEED_OPTION = typer.Option(None, "--seed", help="Run a single seed instead of the configured ones")
OUT_OPTION = typer.Option(None, "--out", help="Output root; overrides the config and environment")
WORKERS_OPTION = typer.Option(None, "--workers", help="Worker threads for grid points")


def _load_env() -> None:
    # Load .env file from the current working directory
    env_file = os.path.join(os.getcwd(), ".env")
    if os.path.exists(env_file):
        load_dotenv(env_file)


def _guarded(console: Console, fn: Callable[[], Any]) -> Any:
    """Run `fn`, mapping configuration errors to exit code 2 and run failures to 1."""
    try:
        return fn()
    except ConfigError as e:
        console.print(f"[bold red]Configuration error:[/bold red] {escape(str(e))}")
        raise typer.Exit(code=2)
    except ValidationError as e:
        console.print(f"[bold red]Configuration error:[/bold red] {escape(format_validation_error(e))}")
        raise typer.Exit(code=2)
    except PrivclustError as e:
        console.print(f"[bold red]Run failed:[/bold red] {escape(str(e))}")
        raise typer.Exit(code=1)


def _runner(
    console: Console,
    config: Path,
    seed: Optional[int],
    out: Optional[Path],
    workers: Optional[int],
) -> ExperimentRunner:
    _load_env()
    return _guarded(
        console,
        lambda: ExperimentRunner.from_yaml(
            str(config),
            seed=seed,
            output_root=str(out) if out is not None else None,
            max_threads=workers,
            console=console,
        ),
    )


@app.command()
def simulate(
    config: Path = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
):
    """
    Run the collaborative protocol over the (epsilon, share fraction, seed)
    grid and write per-run reports and the aggregate tables.
    """
    console = Console()
    runner = _runner(console, config, seed, out, workers)
    _guarded(console, runner.simulate)


@app.command()
def select(
    noisy_csv: Path = typer.Argument(..., help="Noisy CSV with its .meta.json sidecar"),
    config: Path = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
):
    """
    Run the server's algorithm selection on a saved noisy sample.
    """
    console = Console()
    runner = _runner(console, config, seed, out, workers)
    _guarded(console, lambda: runner.select(str(noisy_csv)))


@app.command()
def attack(
    config: Path = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
):
    """
    Measure membership-inference power over the configured budgets.
    """
    console = Console()
    runner = _runner(console, config, seed, out, workers)
    _guarded(console, runner.attack)


@app.command()
def gapviz(
    config: Path = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
):
    """
    Write original and noisy coordinates of two clusters for plotting.
    """
    console = Console()
    runner = _runner(console, config, seed, out, workers)
    _guarded(console, runner.gapviz)


def _parse_hints(hints: List[str]) -> Dict[str, str]:
    parsed = {}
    for hint in hints:
        column, sep, kind = hint.partition("=")
        if not sep or kind not in ("categorical", "numeric"):
            raise ConfigError(f"hint must look like column=categorical|numeric, got '{hint}'")
        parsed[column] = kind
    return parsed


@app.command("ingest-check")
def ingest_check(
    csv_file: Path = typer.Argument(..., help="CSV file to inspect"),
    label_column: Optional[str] = typer.Option(None, help="Ground-truth label column"),
    id_column: Optional[str] = typer.Option(None, help="Integer record id column"),
    hint: List[str] = typer.Option([], help="Schema hint, e.g. --hint Gender=categorical"),
):
    """
    Print the schema inferred for a CSV file without running anything.
    """
    console = Console()

    def inspect() -> None:
        data = ingest_csv(
            str(csv_file),
            schema_hints=_parse_hints(hint),
            label_column=label_column,
            id_column=id_column,
        )
        table = Table(title=f"{data.name}: {len(data)} rows")
        for column in ("feature", "kind", "m", "categories"):
            table.add_column(column)
        for feature in data.schema:
            table.add_row(
                feature.name,
                feature.kind,
                "-" if feature.state_count is None else str(feature.state_count),
                ", ".join(feature.categories),
            )
        console.print(table)
        if data.label_names:
            console.print(f"Label classes ({len(data.label_names)}): {', '.join(data.label_names)}")

    _guarded(console, inspect)


@app.command()
def version():
    """
    Display the current version of privclust.
    """
    import privclust

    typer.echo(f"privclust version: {privclust.__version__}")


if __name__ == "__main__":
    app()
