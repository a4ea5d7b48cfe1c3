"""CLI interface for ephemap."""

import logging
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Annotated, Iterator, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import __version__
from .alignment import ManualSeed
from .config import (
    CONFIG_KEYS,
    PipelineConfig,
    get_all_config,
    load_config,
    set_config_value,
    unset_config_value,
)
from .core import (
    run_delta_replay,
    run_delta_rollback,
    run_eval_align,
    run_eval_clean,
    run_extract,
    run_heatmap,
    run_init,
    run_synth,
    run_update,
)
from .errors import EphemapError, InputValidationError
from .synth import get_registry, resolve_scene
from .utils.formats import CloudFormat
from .utils.io import read_archive, read_cloud, read_delta, read_poses
from .utils.raster import cloud_png, write_png

app = typer.Typer(
    name="ephemap",
    help="Lifelong LiDAR mapping with two-stage ephemerality.",
    no_args_is_help=True,
    rich_markup_mode="rich",
)
console = Console(stderr=True)

DEFAULT_CONFIG = Path("ephemap.toml")

ConfigOption = Annotated[
    Optional[Path],
    typer.Option("--config", "-c", help="Pipeline config file (TOML). Defaults are used when omitted."),
]
ThreadsOption = Annotated[
    int,
    typer.Option("--threads", "-j", min=1, help="Worker threads. Output does not depend on it."),
]


class EvalMode(str, Enum):
    ALIGN = "align"
    CLEAN = "clean"


def version_callback(value: bool) -> None:
    """Print version and exit."""
    if value:
        console.print(f"ephemap version {__version__}")
        raise typer.Exit()


def setup_logging(verbose: int) -> None:
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose > 1:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False, show_time=False)],
        force=True,
    )


@app.callback()
def main(
    version: Annotated[
        Optional[bool],
        typer.Option(
            "--version",
            "-v",
            help="Show version and exit.",
            callback=version_callback,
            is_eager=True,
        ),
    ] = None,
    verbose: Annotated[
        int,
        typer.Option("--verbose", count=True, help="Log progress (repeat for debug output)."),
    ] = 0,
) -> None:
    """Lifelong LiDAR mapping with two-stage ephemerality."""
    setup_logging(verbose)


@contextmanager
def handle_errors() -> Iterator[None]:
    """Report package errors and exit with their code (2 for bad input, 1 otherwise)."""
    try:
        yield
    except EphemapError as e:
        console.print(f"[red]Error: {e}[/red]")
        raise typer.Exit(e.exit_code)
    except OSError as e:
        console.print(f"[red]Error: {e}[/red]")
        raise typer.Exit(1)


def _load(config_path: Optional[Path]) -> PipelineConfig:
    if config_path is not None and not config_path.exists():
        raise InputValidationError(f"Config file not found: {config_path}")
    return load_config(config_path)


@app.command()
def init(
    session_dir: Annotated[Path, typer.Argument(help="First session directory")],
    output: Annotated[Path, typer.Option("--output", "-o", help="Archive to create")],
    config_path: ConfigOption = None,
    threads: ThreadsOption = 1,
) -> None:
    """
    Build the base map from the first session.

    Examples:
        ephemap init sessions/session_01 -o lot.ephm -c config.toml
    """
    with handle_errors():
        config = _load(config_path)
        with console.status("[bold blue]Removing dynamic points..."):
            archive = run_init(session_dir, output, config, threads)
        console.print(f"[green]Saved {len(archive.cloud)} points to {output}[/green]")


@app.command()
def update(
    archive_path: Annotated[Path, typer.Argument(help="Current map archive")],
    session_dir: Annotated[Path, typer.Argument(help="New session directory")],
    output: Annotated[
        Optional[Path],
        typer.Option("--output", "-o", help="New archive (defaults to replacing the input)"),
    ] = None,
    delta: Annotated[
        Optional[Path],
        typer.Option("--delta", "-d", help="Delta map file (defaults to <output>.<session>.delta.txt)"),
    ] = None,
    init_pose: Annotated[
        Optional[Path],
        typer.Option("--init-pose", help="3x4 session-to-map seed transform; skips loop detection"),
    ] = None,
    seed_scan: Annotated[
        int,
        typer.Option("--seed-scan", min=0, help="Session scan the manual seed applies to"),
    ] = 0,
    diagnostics: Annotated[
        Optional[Path],
        typer.Option("--diagnostics", help="Write per-scan registration diagnostics here"),
    ] = None,
    force: Annotated[
        bool,
        typer.Option("--force", help="Proceed even if the config differs from the archive's"),
    ] = False,
    config_path: ConfigOption = None,
    threads: ThreadsOption = 1,
) -> None:
    """
    Align a new session, clean it and merge it into the map.

    Examples:
        ephemap update lot.ephm sessions/session_02 -c config.toml
        ephemap update lot.ephm s2 --init-pose seed.txt --seed-scan 4 -o lot2.ephm
    """
    with handle_errors():
        config = _load(config_path)
        out = output or archive_path
        detector = None
        if init_pose is not None:
            poses = read_poses(init_pose)
            if not poses:
                raise InputValidationError(f"No pose in {init_pose}")
            detector = ManualSeed(poses[0], session_scan_index=seed_scan)

        with console.status("[bold blue]Aligning session...") as status:

            def progress(stage: str, done: int, total: int) -> None:
                status.update(f"[bold blue]Aligning session ({stage} {done}/{total})...")

            delta_path = delta or out.with_name(f"{out.stem}.{session_dir.name}.delta.txt")
            archive, outcome = run_update(
                archive_path,
                session_dir,
                out,
                delta_path,
                config,
                threads=threads,
                force=force,
                detector=detector,
                diagnostics_path=diagnostics,
                progress=progress,
            )

        counts = outcome.result.classification.counts()
        table = Table(title=f"Update {outcome.aligned.session.session_id}")
        table.add_column("Category", style="cyan")
        table.add_column("Points", justify="right")
        for category, n in counts.items():
            table.add_row(category.value, str(n))
        console.print(table)
        console.print(f"[green]Saved {len(archive.cloud)} points to {out}, delta to {delta_path}[/green]")


@app.command("extract-static")
def extract_static(
    archive_path: Annotated[Path, typer.Argument(help="Map archive")],
    output: Annotated[Path, typer.Option("--output", "-o", help="Output file")],
    tau: Annotated[
        Optional[list[float]],
        typer.Option("--tau", "-t", help="eps_g threshold; repeat for several maps (default: tau_g)"),
    ] = None,
    output_format: Annotated[
        Optional[CloudFormat],
        typer.Option("--format", "-f", help="Output format (default from the extension)"),
    ] = None,
    preview: Annotated[
        Optional[Path],
        typer.Option("--preview", help="Also write a top-down PNG of the first static map"),
    ] = None,
    config_path: ConfigOption = None,
) -> None:
    """
    Keep the points whose eps_g is below a threshold.

    Examples:
        ephemap extract-static lot.ephm -o static.ply
        ephemap extract-static lot.ephm -o static.ephm --tau 0.3 --tau 0.7
    """
    with handle_errors():
        config = _load(config_path)
        taus = tau or [config.tau_g]
        written = run_extract(archive_path, taus, output, output_format)
        for path, n in written:
            console.print(f"[green]Saved {n} points to {path}[/green]")
        if preview is not None:
            write_png(cloud_png(read_cloud(written[0][0])), preview)


# Delta subcommand group
delta_app = typer.Typer(
    name="delta",
    help="Inspect, replay and roll back delta maps.",
    no_args_is_help=True,
)
app.add_typer(delta_app, name="delta")


@delta_app.command("summary")
def delta_summary(delta_path: Annotated[Path, typer.Argument(help="Delta map file")]) -> None:
    """Per-category record counts and |delta eps_g| statistics."""
    with handle_errors():
        delta = read_delta(delta_path)
        table = Table(title=f"Delta {delta.session_id}")
        table.add_column("Category", style="cyan")
        table.add_column("Records", justify="right")
        table.add_column("Mean |Δε_g|", justify="right")
        table.add_column("Max |Δε_g|", justify="right")
        for category, stats in delta.summary().items():
            table.add_row(
                category,
                str(stats["count"]),
                f"{stats['mean_abs_delta']:.4f}",
                f"{stats['max_abs_delta']:.4f}",
            )
        console.print(table)
        console.print(f"[dim]config hash: {delta.config_hash or '-'}[/dim]")


@delta_app.command("replay")
def delta_replay(
    archive_path: Annotated[Path, typer.Argument(help="Archive the delta was computed against")],
    delta_path: Annotated[Path, typer.Argument(help="Delta map file")],
    output: Annotated[Path, typer.Option("--output", "-o", help="Reconstructed archive")],
    config_path: ConfigOption = None,
) -> None:
    """Rebuild the next archive from the previous one and a delta map."""
    with handle_errors():
        archive = run_delta_replay(archive_path, delta_path, output, _load(config_path))
        console.print(f"[green]Saved {len(archive.cloud)} points to {output}[/green]")


@delta_app.command("rollback")
def delta_rollback(
    archive_path: Annotated[Path, typer.Argument(help="Archive the delta produced")],
    delta_path: Annotated[Path, typer.Argument(help="Delta map file")],
    output: Annotated[Path, typer.Option("--output", "-o", help="Restored archive")],
    config_path: ConfigOption = None,
) -> None:
    """Undo a delta map."""
    with handle_errors():
        archive = run_delta_rollback(archive_path, delta_path, output, _load(config_path))
        console.print(f"[green]Saved {len(archive.cloud)} points to {output}[/green]")


@app.command()
def heatmap(
    deltas: Annotated[list[Path], typer.Argument(help="Delta map files")],
    output: Annotated[Path, typer.Option("--output", "-o", help="Heatmap text file")],
    png: Annotated[Optional[Path], typer.Option("--png", help="Also write a top-down PNG")] = None,
    cell: Annotated[Optional[float], typer.Option("--cell", help="Cell size in meters (default: coverage_cell)")] = None,
    floor: Annotated[
        Optional[float], typer.Option("--floor", help="Minimum |delta eps_g| counted (default: heatmap_floor)")
    ] = None,
    config_path: ConfigOption = None,
) -> None:
    """
    Count per cell how often eps_g changed across sessions.

    Examples:
        ephemap heatmap out/*.delta.txt -o heat.txt --png heat.png
    """
    with handle_errors():
        config = _load(config_path)
        result = run_heatmap(
            deltas,
            output,
            cell if cell is not None else config.coverage_cell,
            floor if floor is not None else config.heatmap_floor,
            png,
        )
        console.print(f"[green]Saved {len(result)} cells to {output}[/green]")


@app.command("eval")
def evaluate(
    mode: Annotated[EvalMode, typer.Argument(help="align: AC/RMSE/CD; clean: PR/RR/F1")],
    prediction: Annotated[Path, typer.Argument(help="Predicted cloud file or session directory")],
    reference: Annotated[Path, typer.Argument(help="Reference cloud, or labeled session directory for clean")],
    config_path: ConfigOption = None,
) -> None:
    """
    Score an aligned or cleaned map. The metrics record goes to stdout.

    Examples:
        ephemap eval align aligned.ply reference.ephm
        ephemap eval clean static.ephm synth/session_01
    """
    with handle_errors():
        config = _load(config_path)
        if mode is EvalMode.ALIGN:
            metrics = run_eval_align(prediction, reference, config.sigma_inlier)
        else:
            metrics = run_eval_clean(prediction, reference, config.match_radius)
        typer.echo(metrics.as_record())


@app.command()
def synth(
    scene: Annotated[str, typer.Argument(help="Scenario name or scene file")],
    out_dir: Annotated[Path, typer.Argument(help="Output directory")],
    seed: Annotated[Optional[int], typer.Option("--seed", "-s", help="Override the scene seed")] = None,
    session: Annotated[
        Optional[list[int]],
        typer.Option("--session", help="Render only these sessions (1-based, repeatable)"),
    ] = None,
    threads: ThreadsOption = 1,
) -> None:
    """
    Render a synthetic labeled scene to session directories.

    Examples:
        ephemap synth parking-lot out/lot
        ephemap synth my_scene.toml out/scene --seed 3
    """
    with handle_errors():
        spec = resolve_scene(scene, seed)
        with console.status(f"[bold blue]Rendering {spec.name}...") as status:

            def progress(stage: str, done: int, total: int) -> None:
                status.update(f"[bold blue]Rendering {spec.name} ({done}/{total})...")

            written = run_synth(spec, out_dir, threads, session, progress)
        console.print(f"[green]Wrote {len(written)} sessions to {out_dir}[/green]")


@app.command()
def scenarios() -> None:
    """List built-in synthetic scenarios."""
    table = Table(title="Available Scenarios")
    table.add_column("Name", style="cyan", no_wrap=True)
    table.add_column("Aliases", style="dim")
    table.add_column("Description", style="green")

    for scenario in sorted(get_registry().list_all(), key=lambda s: s.name):
        aliases = ", ".join(scenario.aliases) if scenario.aliases else "-"
        table.add_row(scenario.name, aliases, scenario.description)

    console.print(table)


@app.command()
def info(archive_path: Annotated[Path, typer.Argument(help="Map archive")]) -> None:
    """Show an archive's header: point count, config hash and lineage."""
    with handle_errors():
        archive = read_archive(archive_path)
        cloud = archive.cloud
        console.print(f"points: {len(cloud)}")
        console.print(f"config hash: {archive.config_hash}")
        console.print(f"lineage: {', '.join(archive.lineage) or '-'}")
        if len(cloud):
            console.print(f"eps_g: min {cloud.eps_g.min():.4f} mean {cloud.eps_g.mean():.4f} max {cloud.eps_g.max():.4f}")


# Config subcommand group
config_app = typer.Typer(
    name="config",
    help="Manage pipeline configuration files.",
    no_args_is_help=True,
)
app.add_typer(config_app, name="config")

ConfigFileOption = Annotated[
    Path,
    typer.Option("--file", "-f", help="Config file to read or modify."),
]


@config_app.command("set")
def config_set(
    key: Annotated[str, typer.Argument(help="Configuration key (e.g., sigma_f, tau_g)")],
    value: Annotated[str, typer.Argument(help="Value to set")],
    file: ConfigFileOption = DEFAULT_CONFIG,
) -> None:
    """
    Set a configuration value.

    Examples:
        ephemap config set tau_g 0.6
        ephemap config set compact_map false -f lot.toml
    """
    try:
        stored = set_config_value(file, key, value)
        console.print(f"[green]Set {key} = {stored}[/green]")
    except ValueError as e:
        console.print(f"[red]{e}[/red]")
        raise typer.Exit(1)
    except EphemapError as e:
        console.print(f"[red]{e}[/red]")
        raise typer.Exit(e.exit_code)


@config_app.command("get")
def config_get(
    key: Annotated[str, typer.Argument(help="Configuration key to get")],
    file: ConfigFileOption = DEFAULT_CONFIG,
) -> None:
    """
    Get the effective value of a configuration key.

    Examples:
        ephemap config get sigma_o
    """
    if key not in CONFIG_KEYS:
        valid_keys = ", ".join(CONFIG_KEYS.keys())
        console.print(f"[red]Unknown key '{key}'. Valid keys: {valid_keys}[/red]")
        raise typer.Exit(1)
    with handle_errors():
        value, is_default = get_all_config(file)[key]
        suffix = " [dim](default)[/dim]" if is_default else ""
        console.print(f"{key}: {value}{suffix}")


@config_app.command("unset")
def config_unset(
    key: Annotated[str, typer.Argument(help="Configuration key to remove")],
    file: ConfigFileOption = DEFAULT_CONFIG,
) -> None:
    """
    Remove a configuration value from the config file.

    Examples:
        ephemap config unset tau_g
    """
    with handle_errors():
        if unset_config_value(file, key):
            console.print(f"[green]Removed {key} from config[/green]")
        else:
            console.print(f"[dim]{key} was not set in config file[/dim]")


@config_app.command("show")
def config_show(file: ConfigFileOption = DEFAULT_CONFIG) -> None:
    """
    Show all configuration values.

    Displays effective values from the config file and defaults.
    """
    with handle_errors():
        all_config = get_all_config(file)

    table = Table(title="Configuration")
    table.add_column("Key", style="cyan", no_wrap=True)
    table.add_column("Value", style="green")
    table.add_column("Description", style="dim")

    for key, (value, is_default) in all_config.items():
        display_value = f"{value} [dim](default)[/dim]" if is_default else str(value)
        table.add_row(key, display_value, CONFIG_KEYS.get(key, ""))

    console.print(table)
    console.print()
    console.print(f"[dim]Config file: {file}[/dim]")


if __name__ == "__main__":
    app()
