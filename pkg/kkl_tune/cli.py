"""CLI interface for kkl-tune."""

from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Optional

import typer
from dotenv import load_dotenv

from .config import ExperimentConfig, load_config, log_level_from_env, parse_vector, threads_from_env
from .core import KKLPipeline, check_omega
from .errors import KKLTuneError
from .observer import EXTRAPOLATION_X0

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(
    level=log_level_from_env(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)

logger = logging.getLogger(__name__)

cli = typer.Typer(help="kkl-tune - learn KKL observers as a function of the filter cut-off and tune it")

CONFIG_OPTION = typer.Option(None, "--config", "-c", help="TOML experiment configuration")
SYSTEM_OPTION = typer.Option(None, "--system", help="Benchmark system (rev-duffing, van-der-pol, van-der-pol-raw, harmonic)")
SEED_OPTION = typer.Option(None, "--seed", help="Override the sampler and trainer seeds", min=0)
THREADS_OPTION = typer.Option(None, "--threads", "-j", help="Worker cap (default: $KKL_TUNE_THREADS or 1)", min=1)
OUT_OPTION = typer.Option(Path("runs"), "--out", "-o", help="Artifact directory")
CHECKPOINT_OPTION = typer.Option(None, "--checkpoint", help="Checkpoint (default: <out>/model.json)")
VERBOSE_OPTION = typer.Option(False, "--verbose", "-v", help="Enable verbose logging")
OMEGA_OPTION = typer.Option(
    None, "--omega-c", "-w", help="Filter cut-off frequency (default: minimizer of the saved tuning report)"
)


def _pipeline(
    config_path: Optional[Path],
    system: Optional[str],
    seed: Optional[int],
    threads: Optional[int],
    out: Path,
    verbose: bool,
) -> KKLPipeline:
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    config: ExperimentConfig = load_config(config_path, system)
    if seed is not None:
        config.sampler.seed = seed
        config.trainer.seed = seed
    return KKLPipeline(config, out, threads=threads or threads_from_env())


def _initial_state(x0: Optional[str]) -> Optional[tuple[float, ...]]:
    if not x0:
        return None
    if x0 == "extrapolation":
        return EXTRAPOLATION_X0
    return parse_vector(x0, "x0")


def _omega(pipeline: KKLPipeline, omega_c: Optional[float]) -> float:
    if omega_c is None:
        return pipeline.tuned_omega()
    return check_omega(omega_c)


def _fail(command: str, e: Exception) -> None:
    if isinstance(e, KKLTuneError):
        logger.error(f"Error during {command}: {e}")
        sys.exit(e.exit_code)
    logger.error(f"Unexpected error during {command}: {e}")
    sys.exit(1)


@cli.command()
def generate(
    config: Optional[Path] = CONFIG_OPTION,
    system: Optional[str] = SYSTEM_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    out: Path = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Generate backward-forward training pairs over the omega_c grid."""
    try:
        pipeline = _pipeline(config, system, seed, threads, out, verbose)
        dataset = pipeline.generate()
        typer.echo(f"{len(dataset)} pairs written to {pipeline.dataset_path}")
        typer.echo("omega_c,t_c")
        for omega_c, t_c in dataset.meta["t_c"].items():
            typer.echo(f"{float(omega_c):.6g},{t_c:.6g}")
    except Exception as e:
        _fail("generate", e)


@cli.command()
def train(
    config: Optional[Path] = CONFIG_OPTION,
    system: Optional[str] = SYSTEM_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    out: Path = OUT_OPTION,
    dataset: Optional[Path] = typer.Option(None, "--dataset", help="Dataset CSV (default: <out>/dataset.csv)"),
    resume: Optional[Path] = typer.Option(None, "--resume", help="Continue from this checkpoint"),
    fine_tune: Optional[float] = typer.Option(None, "--fine-tune", help="Retrain on the pairs of one omega_c"),
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Train the observer maps and write the checkpoint and loss log."""
    try:
        pipeline = _pipeline(config, system, seed, threads, out, verbose)
        if fine_tune is not None:
            fine_tune = check_omega(fine_tune)
        _, history = pipeline.train(dataset, resume=resume, fine_tune_omega=fine_tune)
        final = history.iloc[-1]
        for column in history.columns:
            if column.startswith("loss"):
                typer.echo(f"{column}: {final[column]:.6e}")
        typer.echo(f"Checkpoint written to {pipeline.checkpoint_path}")
    except Exception as e:
        _fail("train", e)


@cli.command()
def tune(
    config: Optional[Path] = CONFIG_OPTION,
    system: Optional[str] = SYSTEM_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    out: Path = OUT_OPTION,
    checkpoint: Optional[Path] = CHECKPOINT_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Sweep the tuning criterion over omega_c and print the minimizer."""
    try:
        pipeline = _pipeline(config, system, None, threads, out, verbose)
        report = pipeline.tune(checkpoint)
        typer.echo(f"Report written to {pipeline.report_path}")
        typer.echo(f"argmin omega_c: {report.argmin_omega_c:.6g}")
    except Exception as e:
        _fail("tune", e)


@cli.command()
def evaluate(
    omega_c: Optional[float] = OMEGA_OPTION,
    sigma: Optional[float] = typer.Option(None, "--sigma", help="Noise std (default: every configured level)", min=0.0),
    x0: Optional[str] = typer.Option(None, "--x0", help="Initial state, e.g. 0.6,0.6, or 'extrapolation' for 1.5,1.5"),
    config: Optional[Path] = CONFIG_OPTION,
    system: Optional[str] = SYSTEM_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Path = OUT_OPTION,
    checkpoint: Optional[Path] = CHECKPOINT_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Run the observer on a simulated noisy trajectory and print the RMSE."""
    try:
        pipeline = _pipeline(config, system, seed, None, out, verbose)
        omega_c = _omega(pipeline, omega_c)
        start = _initial_state(x0)
        sigmas = [sigma] if sigma is not None else pipeline.config.evaluation.noise_sigmas
        typer.echo("omega_c,sigma,rmse,post_transient_rmse")
        for s in sigmas:
            run = pipeline.evaluate(omega_c, s, x0=start, checkpoint=checkpoint)
            typer.echo(f"{omega_c:.6g},{s:g},{run.rmse:.6g},{run.post_transient_rmse:.6g}")
    except Exception as e:
        _fail("evaluate", e)


@cli.command()
def heatmap(
    omega_c: Optional[float] = OMEGA_OPTION,
    config: Optional[Path] = CONFIG_OPTION,
    system: Optional[str] = SYSTEM_OPTION,
    out: Path = OUT_OPTION,
    checkpoint: Optional[Path] = CHECKPOINT_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Write the estimation-error heatmap over the domain grid."""
    try:
        pipeline = _pipeline(config, system, None, None, out, verbose)
        omega_c = _omega(pipeline, omega_c)
        frame = pipeline.heatmap(omega_c, checkpoint)
        typer.echo(f"Heatmap written to {pipeline.heatmap_path(omega_c)}")
        typer.echo(f"median error: {frame['error'].median():.6g}, max error: {frame['error'].max():.6g}")
    except Exception as e:
        _fail("heatmap", e)


@cli.command()
def contraction(
    omega_c: Optional[float] = OMEGA_OPTION,
    x0: Optional[str] = typer.Option(None, "--x0", help="Initial state, e.g. 0.6,0.6, or 'extrapolation' for 1.5,1.5"),
    config: Optional[Path] = CONFIG_OPTION,
    system: Optional[str] = SYSTEM_OPTION,
    out: Path = OUT_OPTION,
    checkpoint: Optional[Path] = CHECKPOINT_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Fit the decay rate of ||z - T(x)|| and compare it with -lambda_min."""
    try:
        pipeline = _pipeline(config, system, None, None, out, verbose)
        omega_c = _omega(pipeline, omega_c)
        start = _initial_state(x0)
        fit = pipeline.contraction(omega_c, x0=start, checkpoint=checkpoint)
        if fit.converged:
            typer.echo("converged: error already below the floor")
        else:
            typer.echo(f"fitted rate: {fit.slope:.6g}, -lambda_min: {-fit.lambda_min:.6g}")
            if not fit.satisfies():
                logger.warning("Decay is slower than 0.9 lambda_min")
    except Exception as e:
        _fail("contraction", e)


if __name__ == "__main__":
    cli()
