"""Command-line entry point.

Subcommands: gen (synthesize a dataset), train (run the training loop),
ablate (the ablation table over seeds), solverbench (time the balance
solvers), gradcheck (finite-difference validation of every loss gradient).

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
All outputs are plain CSV/JSON files.
"""

from __future__ import annotations

import math
import sys
from dataclasses import replace
from pathlib import Path

import click

from .balance import solver_benchmark
from .config import (ConfigError, dataset_spec_from_file, env_seed,
                     train_config_from_file)
from .gradcheck import run_gradcheck
from .synthdata import DatasetFormatError, generate, load_dataset, save_dataset
from .trainer import (ablation_suite, train, write_ablation_csv,
                      write_report_csv, write_summary_json)

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _parse_int_list(raw: str, flag: str) -> list:
    try:
        return [int(p.strip()) for p in raw.split(",") if p.strip()]
    except ValueError:
        _fail(EXIT_CONFIG, f"{flag} expects a comma-separated integer list, "
                           f"got {raw!r}")


def _load_data(data_dir: str):
    path = Path(data_dir)
    if not path.is_dir():
        _fail(EXIT_CONFIG, f"data directory not found: {data_dir}")
    try:
        return load_dataset(path)
    except DatasetFormatError as exc:
        _fail(EXIT_CONFIG, str(exc))


@click.group()
def main():
    """Balanced multimodal domain adaptation on synthetic benchmarks."""


@main.command("gen")
@click.option("--spec", "spec_path", type=str, default=None,
              help="Dataset spec file (key = value); defaults apply if omitted.")
@click.option("--out", "out_dir", type=str, required=True,
              help="Output directory for manifest and CSVs.")
@click.option("--seed", type=int, default=None,
              help="Seed override (beats the file value).")
def cmd_gen(spec_path, out_dir, seed):
    """Generate a synthetic multimodal dataset."""
    try:
        spec = dataset_spec_from_file(spec_path, seed_override=seed)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        dataset = generate(spec)
        save_dataset(dataset, out_dir)
    except OSError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    click.echo(f"dataset written to {out_dir}")


@main.command("train")
@click.option("--data", "data_dir", type=str, required=True,
              help="Dataset directory produced by gen.")
@click.option("--config", "config_path", type=str, default=None,
              help="Train config file; defaults apply if omitted.")
@click.option("--out", "out_dir", type=str, required=True,
              help="Output directory for report.csv and summary.json.")
@click.option("--solver", type=str, default=None,
              help="Solver mode override: closed_form, frank_wolfe, "
                   "exact_oracle, or uniform.")
@click.option("--seed", type=int, default=None, help="Seed override.")
@click.option("--iterations", type=int, default=None,
              help="Iteration count override.")
@click.option("--epochs", type=int, default=None,
              help="Alternative to --iterations: ceil(N/batch) * epochs.")
def cmd_train(data_dir, config_path, out_dir, solver, seed, iterations, epochs):
    """Train on a dataset and write report.csv + summary.json."""
    dataset = _load_data(data_dir)
    try:
        config, epochs_req = train_config_from_file(
            config_path, seed_override=seed, solver_override=solver,
            iterations_override=iterations, epochs_override=epochs)
        if epochs_req is not None:
            per_epoch = math.ceil(dataset.spec.source_samples
                                  / config.batch_size)
            config = replace(config, iterations=per_epoch * epochs_req)
        config.validate_for(dataset)
    except (ConfigError, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        _, report = train(dataset, config)
    except (RuntimeError, FloatingPointError) as exc:
        _fail(EXIT_RUNTIME, str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv", dataset.spec.modalities + 1)
    write_summary_json(report, config, out / "summary.json")
    click.echo(f"source_f1={report.source_f1:.4f} "
               f"target_f1={report.target_f1:.4f} -> {out_dir}")


@main.command("ablate")
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seeds", type=str, default="0,1,2,3,4",
              help="Comma-separated seed list.")
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--force", is_flag=True, default=False,
              help="Overwrite an existing ablation.csv.")
def cmd_ablate(data_dir, config_path, seeds, out_dir, force):
    """Run the ablation grid over seeds and write ablation.csv."""
    dataset = _load_data(data_dir)
    seed_list = _parse_int_list(seeds, "--seeds")
    if not seed_list:
        _fail(EXIT_CONFIG, "--seeds list is empty")
    try:
        config, _ = train_config_from_file(config_path)
        config.validate_for(dataset)
    except (ConfigError, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    out = Path(out_dir)
    table_path = out / "ablation.csv"
    if table_path.exists() and not force:
        _fail(EXIT_CONFIG,
              f"{table_path} already exists (pass --force to overwrite)")
    try:
        rows = ablation_suite(dataset, config, seed_list)
    except (RuntimeError, FloatingPointError) as exc:
        _fail(EXIT_RUNTIME, str(exc))
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(rows, table_path)
    for row in rows:
        click.echo(f"{row.setting}: mean_f1={row.mean_f1:.4f} "
                   f"std={row.std_f1:.4f}")


@main.command("solverbench")
@click.option("--dims", type=str, default="3,4,5,6",
              help="Comma-separated problem dimensions.")
@click.option("--trials", type=int, default=100)
@click.option("--out", "out_path", type=str, required=True)
@click.option("--seed", type=int, default=0)
def cmd_solverbench(dims, trials, out_path, seed):
    """Time the balance solvers on random PSD matrices; write a CSV."""
    dim_list = _parse_int_list(dims, "--dims")
    if not dim_list or trials < 1:
        _fail(EXIT_CONFIG, "need at least one dimension and one trial")
    rows = solver_benchmark(dim_list, trials, seed)
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,dim,iters,objective,objective_gap,wall_ns\n")
        for r in rows:
            fh.write(f"{r.method},{r.dim},{r.iters},{repr(r.objective)},"
                     f"{repr(r.objective_gap)},{r.wall_ns}\n")
    click.echo(f"{len(rows)} rows -> {out_path}")


@main.command("gradcheck")
@click.option("--seed", type=int, default=None)
@click.option("--draws", type=int, default=20)
@click.option("--corrupt", type=str, default=None, hidden=True,
              help="Test hook: perturb the named loss's analytic gradient.")
def cmd_gradcheck(seed, draws, corrupt):
    """Check every loss gradient against central finite differences."""
    if seed is None:
        try:
            seed = env_seed() or 0
        except ConfigError as exc:
            _fail(EXIT_CONFIG, str(exc))
    results = run_gradcheck(seed=seed, draws=draws, corrupt=corrupt)
    all_passed = True
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        click.echo(f"{res.loss_name}: max_rel_err={res.max_rel_err:.3e} {status}")
        all_passed = all_passed and res.passed
    if not all_passed:
        sys.exit(EXIT_RUNTIME)


if __name__ == "__main__":
    main()
