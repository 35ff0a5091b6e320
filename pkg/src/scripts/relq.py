"""
The command line interface for relq. All reports are written as JSON to stdout or to the file
given with ``--out``.

$ relq analyze MODEL_FILE [--rule F]... [--horizon T] [--k0 K0] [--out PATH]

    Runs the full pipeline: validation, controllability, the commitment solution, the
    Blanchard-Kahn classification under the commitment-restricted rule and under each rule, and
    the identification, covariance, minimal volatility and time inconsistency experiments.

$ relq enumerate MODEL_FILE --rule F_1n [--out PATH]

    Lists every equilibrium for a rule on the predetermined variables.

$ relq simulate MODEL_FILE --solution {bk,commitment} [--rule F] [--k0 K0] [--horizon T] [--csv PATH] [--levels]

    Simulates the quasi-optimal or the commitment solution and writes the trajectory as CSV.

$ relq identify MODEL_FILE [--rule F] [--k0 K0] [--horizon T] [--out PATH]

    Runs both identification experiments.

Rules and vectors are comma separated lists, e.g. ``--rule 0.7,0``. A rule with n values does
not respond to the non-predetermined variables.

The exit code is 0 on success, 1 for usage, parse and internal errors and 2 when the
mathematics refused, e.g. for an uncontrollable model.
"""

import functools
import logging
import sys
from pathlib import Path

import click
from rich.console import Console

from relq.analysis import commitment_law
from relq.analysis import export_csv
from relq.analysis import manifold_law
from relq.analysis import simulate as simulate_law
from relq.bk_solver import solve_bk
from relq.bk_solver import solve_quasi_optimal
from relq.commitment import solve_commitment
from relq.config import get_tolerances
from relq.config import parse_override
from relq.exceptions import NoEquilibriumError
from relq.exceptions import RefusalError
from relq.exceptions import RelqException
from relq.model import PolicyRule
from relq.model import load_model
from relq.model import predetermined_to_deviations
from relq.report import EXIT_ERROR
from relq.report import EXIT_OK
from relq.report import EXIT_REFUSED
from relq.report import build_analysis_report
from relq.report import build_enumeration_report
from relq.report import build_identification_report
from relq.report import parse_rule
from relq.report import parse_vector
from relq.report import report_header
from relq.report import trajectory_summary
from relq.serialize import dumps
from relq.settings import Settings
from relq.settings import SettingsError

logger = logging.getLogger("relq.cli")

console = Console(stderr=True)


class RelqGroup(click.Group):
    """
    Maps click usage errors and unexpected exceptions to exit code 1 and mathematical refusals to
    exit code 2.
    """

    def main(self, *args, **kwargs):
        kwargs["standalone_mode"] = False
        try:
            rc = super().main(*args, **kwargs)
        except click.exceptions.Abort:
            console.print("[red]Aborted![/]")
            sys.exit(EXIT_ERROR)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_ERROR)
        except RefusalError as exc:
            console.print(f"[yellow]Refused:[/] {exc}")
            sys.exit(EXIT_REFUSED)
        except (RelqException, SettingsError) as exc:
            console.print(f"[red]ERROR:[/] {exc}")
            sys.exit(EXIT_ERROR)
        except Exception as exc:
            logger.debug("Unexpected error", exc_info=True)
            console.print(f"[red]ERROR:[/] {type(exc).__name__}: {exc}")
            sys.exit(EXIT_ERROR)
        sys.exit(rc or EXIT_OK)


def common_options(func):
    """Adds --tol-override, --seed and --verbose to a command."""

    @click.option(
        "--tol-override", "overrides", multiple=True, metavar="KEY=VALUE",
        help="override a tolerance or solver setting, can appear multiple times",
    )
    @click.option("--seed", type=int, default=None, help="seed for the perturbed restarts of the identification")
    @click.option("--verbose", "-v", is_flag=True, default=False, help="log at DEBUG level")
    @functools.wraps(func)
    def wrapper(*args, overrides, verbose, **kwargs):
        logging.basicConfig(
            level=logging.DEBUG if verbose else logging.WARNING,
            format=Settings.LOG_FORMAT_FULL,
            stream=sys.stderr,
        )
        tol = get_tolerances(dict(parse_override(item) for item in overrides))
        if kwargs.get("seed") is not None:
            tol = tol.replace(seed=kwargs["seed"])
        return func(*args, tol=tol, **kwargs)

    return wrapper


def write_output(text: str, out: str):
    if out:
        Path(out).write_text(text)
        console.print(f"Report written to [bold]{out}[/]")
    else:
        click.echo(text, nl=False)


def initial_state(model, k0: str, levels: bool = False):
    if k0 is None:
        return None
    try:
        values = parse_vector(k0, model.n, "k0")
    except RelqException as exc:
        raise click.BadParameter(str(exc), param_hint="--k0") from exc
    return predetermined_to_deviations(model, values) if levels else values


def parse_rules(model, rules):
    try:
        return [parse_rule(text, model.n, model.m) for text in rules]
    except RelqException as exc:
        raise click.BadParameter(str(exc), param_hint="--rule") from exc


model_argument = click.argument("model_file", type=click.Path(dir_okay=False))


@click.group(cls=RelqGroup)
def cli():
    """Quasi-optimal and commitment rules for linear-quadratic rational expectations models."""
    pass


@cli.command()
@model_argument
@click.option("--rule", "rules", multiple=True, help="rule coefficients f1,...; can appear multiple times")
@click.option("--horizon", type=click.IntRange(min=1), default=None, help="simulation horizon")
@click.option("--k0", default=None, help="initial predetermined state, default all ones")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="write the report to this file")
@common_options
def analyze(model_file, rules, horizon, k0, out, seed, tol):
    """Runs the full analysis of a model and writes the JSON report."""
    model = load_model(model_file, tol)
    report = build_analysis_report(
        model, parse_rules(model, rules), horizon=horizon, k0=initial_state(model, k0), seed=seed, tol=tol
    )
    write_output(report.dumps(), out)

    if report.exit_code == EXIT_REFUSED:
        console.print("[yellow]One or more sections were refused, see the report.[/]")
    elif report.exit_code == EXIT_ERROR:
        console.print("[red]One or more sections failed, see the report.[/]")

    return report.exit_code


@cli.command(name="enumerate")
@model_argument
@click.option("--rule", required=True, help="coefficients F_1n on the predetermined variables")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="write the report to this file")
@common_options
def enumerate_equilibria(model_file, rule, out, seed, tol):
    """Lists every rational expectations equilibrium under a rule on the predetermined variables."""
    model = load_model(model_file, tol)
    (policy,) = parse_rules(model, [rule])

    report = build_enumeration_report(model, policy, tol)
    write_output(report.dumps(), out)

    section = report.content["bk"]
    if section["status"] == "ok" and section["indeterminate"]:
        console.print(f"[yellow]Indeterminacy:[/] {len(section['equilibria'])} equilibria")

    return report.exit_code


@cli.command()
@model_argument
@click.option("--solution", type=click.Choice(["bk", "commitment"]), required=True)
@click.option("--rule", default=None, help="rule that selects the manifold for --solution bk, default F = 0")
@click.option("--k0", default=None, help="initial predetermined state, default all ones")
@click.option("--horizon", type=click.IntRange(min=1), default=None, help="simulation horizon")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="write the trajectory")
@click.option("--levels", is_flag=True, default=False, help="read --k0 as levels and add level columns")
@common_options
def simulate(model_file, solution, rule, k0, horizon, csv_path, levels, seed, tol):
    """Simulates the quasi-optimal or the commitment solution."""
    model = load_model(model_file, tol)
    horizon = tol.horizon if horizon is None else horizon

    start = initial_state(model, k0, levels)
    if start is None:
        start = [1.0] * model.n

    if solution == "bk":
        policy = parse_rules(model, [rule])[0] if rule else PolicyRule.zero(model.n, model.m)
        equilibria = solve_bk(model, policy, tol)
        if not equilibria.solutions:
            raise NoEquilibriumError("no admissible equilibrium for the rule")
        bk = equilibria.solutions[0]
        quasi_optimal = solve_quasi_optimal(model, bk, tol)
        law = manifold_law(model, quasi_optimal.rule, bk.N)
        initial = start
    else:
        sol = solve_commitment(model, tol)
        law = commitment_law(model, sol)
        initial = sol.initial_state(start)

    traj = simulate_law(model, law, initial, horizon, tol)

    if csv_path:
        export_csv(traj, csv_path, model.labels(), model if levels else None)
        console.print(f"Trajectory written to [bold]{csv_path}[/]")

    summary = report_header(model)
    summary["solution"] = solution
    summary.update(trajectory_summary(traj, model.beta, tol))
    click.echo(dumps(summary), nl=False)

    return EXIT_OK


@cli.command()
@model_argument
@click.option("--rule", "rules", multiple=True, help="rule for the quasi-optimal experiment, default the commitment F")
@click.option("--k0", default=None, help="initial predetermined state, default all ones")
@click.option("--horizon", type=click.IntRange(min=1), default=None, help="simulation horizon")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="write the report to this file")
@common_options
def identify(model_file, rules, k0, horizon, out, seed, tol):
    """Runs the identification experiments for the quasi-optimal and the commitment solutions."""
    model = load_model(model_file, tol)
    report = build_identification_report(
        model, parse_rules(model, rules), horizon=horizon, k0=initial_state(model, k0), seed=seed, tol=tol
    )
    write_output(report.dumps(), out)
    return report.exit_code


if __name__ == "__main__":
    cli()
