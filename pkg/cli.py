"""Command-line experiment runner."""
import json
import logging
import os
import sys

import click
import pandas as pd
from dotenv import load_dotenv

from services.channel import generate_realization
from services.experiment import (
    certify as run_certification,
    convergence_trace,
    experiment_header,
    improvement_rows,
    load_experiment_spec,
    run_experiment,
    write_improvement_csv,
    write_results_csv,
)
from services.schema import NoiseModel, SolverConfig, SystemGeometry

load_dotenv()


@click.group()
@click.option("--log-level", default=lambda: os.environ.get("LOG_LEVEL", "INFO"), show_default="INFO")
def main(log_level):
    logging.basicConfig(level=log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Experiment spec (.toml or .json)")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV output path; stdout when omitted")
@click.option("--threads", type=int, default=lambda: int(os.environ.get("SIM_THREADS", "1")), show_default="1")
def simulate(spec_path, out, threads):
    """Monte Carlo sweep over N and SNR for the listed schemes."""
    try:
        spec = load_experiment_spec(spec_path)
    except ValueError as e:
        raise click.UsageError(f"bad experiment spec {spec_path}: {e}")
    rows = run_experiment(spec, threads=threads)
    if out:
        write_results_csv(rows, out, experiment_header(spec))
        click.echo(f"Wrote {len(rows)} rows to {out}")
    else:
        for key, value in experiment_header(spec).items():
            click.echo(f"# {key}: {value}")
        click.echo(pd.DataFrame([r.model_dump() for r in rows]).to_csv(index=False), nl=False)
    gains = improvement_rows(rows)
    if not gains:
        return
    if out:
        sidecar = os.path.splitext(out)[0] + ".improvement.csv"
        write_improvement_csv(gains, sidecar)
        click.echo(f"Wrote {len(gains)} improvement rows to {sidecar}")
    else:
        click.echo("")
        click.echo("# improvement of proposed over conventional-df")
        click.echo(pd.DataFrame([g.model_dump() for g in gains]).to_csv(index=False), nl=False)


@main.command()
@click.option("--seed", type=int, required=True)
@click.option("--n", "num_subcarriers", type=int, required=True)
@click.option("--k", "num_users", type=int, required=True)
@click.option("--pt", "total_power", type=float, required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def trace(seed, num_subcarriers, num_users, total_power, out):
    """Per-iteration trace of the dual solver on one seeded realization."""
    ch = generate_realization(SystemGeometry(num_users=num_users), NoiseModel(), num_subcarriers, seed)
    rows = convergence_trace(ch, SolverConfig.from_env(total_power=total_power))
    df = pd.DataFrame([row.model_dump(by_alias=True) for row in rows])
    if out:
        df.to_csv(out, index=False)
        click.echo(f"Wrote {len(df)} iterations to {out}")
    else:
        click.echo(df.to_csv(index=False), nl=False)


@main.command()
@click.option("--trials", type=int, default=200, show_default=True)
@click.option("--n", "num_subcarriers", type=int, default=3, show_default=True)
@click.option("--k", "num_users", type=int, default=2, show_default=True)
@click.option("--pt", "total_power", type=float, default=10.0, show_default=True)
@click.option("--seed", "root_seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=lambda: int(os.environ.get("SIM_THREADS", "1")), show_default="1")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for the report and failing channel dumps")
def certify(trials, num_subcarriers, num_users, total_power, root_seed, threads, out):
    """Check the dual solver's optimality gap against the exhaustive oracle."""
    report = run_certification(
        trials, num_subcarriers, num_users, total_power, root_seed,
        cfg=SolverConfig.from_env(), dump_dir=out, threads=threads,
    )
    summary = report.model_dump(exclude={"instances"})
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "certification.json"), "w", encoding="utf-8") as f:
            json.dump(report.model_dump(), f, indent=2)
    click.echo(json.dumps(summary, indent=2))
    if not report.passed:
        click.echo("certification failed", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
