"""``grow`` command line: run experiments, verify invariants, inspect checkpoints.

Exit codes: 0 ok, 1 usage or configuration, 2 data, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import growth as gr
from .errors import DataError, DomainError, GrowError, NumericalError, ShapeError, VerificationFailure
from .harness import load_checkpoint, load_config, parse_data_spec, run_growth_experiment, run_many
from .harness.config import ConfigError
from .net_core import Dense, param_count

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3, 4


def _fmt_lams(lams, top: int = 5) -> str:
    if len(lams) == 0:
        return "-"
    return " ".join(f"{v:.4g}" for v in lams[:top])


@click.group()
def cli():
    """Grow neural networks from their expressivity bottlenecks."""


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the configured seed(s).")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def run(config_path, seed, out):
    """Run a growth experiment; writes one CSV log and checkpoint per seed."""
    cfg = load_config(config_path)
    if seed is None and cfg.seeds:
        for run_id, path in run_many(cfg, list(cfg.seeds), out):
            click.echo(f"{run_id}\t{path}")
        return
    res = run_growth_experiment(cfg, seed, out)
    last = res.records[-1]
    click.echo(f"{res.run_id}\t{res.csv_path}\tparams={last.params}\t"
               f"train_loss={last.train_loss:.6g}\ttest_loss={last.test_loss:.6g}")


@cli.command()
@click.option("--filter", "name_filter", default=None, help="Only checks whose name contains this.")
@click.option("--seed", type=int, default=0)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
def verify(name_filter, seed, csv_path):
    """Run the invariant suite."""
    from .verify import run_invariant_suite

    report = run_invariant_suite(seed, name_filter)
    if not report.results:
        raise click.UsageError(f"no check matches {name_filter!r}")
    click.echo(report.to_text())
    if csv_path:
        Path(csv_path).write_text(report.to_csv())
    if not report.ok:
        raise VerificationFailure(f"{report.n_failed} check(s) failed")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_spec", default=None, help="Dataset spec, e.g. regression:n=4.")
@click.option("--samples", type=int, default=1000, show_default=True)
def inspect(checkpoint, data_spec, samples):
    """Print the layers of a checkpoint and, with data, Psi and top lambdas per position."""
    net = load_checkpoint(checkpoint)
    click.echo(f"input {net.input_shape}  params {param_count(net)}")
    for i, layer in enumerate(net.layers):
        desc = type(layer).__name__
        if isinstance(layer, Dense):
            desc += f" {layer.in_features}->{layer.out_features}"
        elif hasattr(layer, "kernel"):
            desc += f" kernel {layer.kernel.shape} padding {layer.padding}"
        elif hasattr(layer, "family"):
            desc += f" {layer.family}"
        click.echo(f"  [{i}] {desc}  -> {net.shapes[i + 1]}")
    if data_spec is None:
        return
    data = parse_data_spec(data_spec)
    X, Y = data.X_train[:, :samples], data.Y_train[:, :samples]
    for p in net.growable_positions:
        prop = gr.propose_tiny(net, X, Y, p, data.loss)
        click.echo(f"position {p}: width {net.width(p)}  psi {prop.psi_before:.6g}  "
                   f"lambdas {_fmt_lams(prop.lambdas)}")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_spec", required=True)
@click.option("--layer", "position", required=True, type=int, help="Growable position.")
@click.option("--method", type=click.Choice(["tiny", "gradmax", "random"]), default="tiny")
@click.option("--k", "max_k", type=int, default=None, help="Maximum number of neurons.")
@click.option("--seed", type=int, default=0)
@click.option("--samples", type=int, default=1000, show_default=True)
def propose(checkpoint, data_spec, position, method, max_k, seed, samples):
    """Compute a neuron proposal at one position and summarise it."""
    net = load_checkpoint(checkpoint)
    data = parse_data_spec(data_spec)
    X, Y = data.X_train[:, :samples], data.Y_train[:, :samples]
    if method == "tiny":
        p = gr.propose_tiny(net, X, Y, position, data.loss, max_k)
    elif method == "gradmax":
        p = gr.propose_gradmax(net, X, Y, position, data.loss, max_k)
    else:
        p = gr.random_for_position(net, position, max_k or 1, seed=seed)
    click.echo(f"method {p.kind}  position {position}  neurons {p.count}")
    click.echo(f"lambdas {_fmt_lams(p.lambdas, 10)}")
    click.echo(f"gain neurons {p.gains[0]:.6g}  gain update {p.gains[1]:.6g}  psi {p.psi_before:.6g}")
    if p.count:
        click.echo(f"|alpha| {np.linalg.norm(p.alpha):.6g}  |omega| {np.linalg.norm(p.omega):.6g}")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, VerificationFailure):
        return EXIT_VERIFY
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, (NumericalError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (click.ClickException, click.Abort, ConfigError, DomainError, ShapeError, GrowError)):
        return EXIT_USAGE
    raise exc


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="grow", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = exit_code(exc)
        if isinstance(exc, click.ClickException):
            exc.show()
        else:
            click.echo(f"error: {exc}", err=True)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
