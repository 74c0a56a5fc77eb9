"""Command-line entry point.

Stages communicate through the output directory::

    <out>/data/{train,test}/          gen-data
    <out>/models/*.nnp                train-clf, train-diff
    <out>/adv/<attack>/               attack
    <out>/defended/<attack>/<defense>/ defend
    <out>/report.{csv,json}           eval, run

Exit codes: 0 success, 2 configuration error, 3 training or attack divergence.
"""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path

import click

from ..diffusion import save_diffusion
from ..nn import DivergenceError, accuracy, save_classifier
from . import runner
from .config import ConfigError, ExperimentConfig, load_config
from .report import EvaluationReport

EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except DivergenceError as exc:
            click.echo(f"divergence: {exc}", err=True)
            sys.exit(EXIT_DIVERGENCE)
        except FileNotFoundError as exc:
            raise click.ClickException(f"missing input ({exc.filename}); run the earlier stages first") from None

    return wrapper


def common_options(fn):
    @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Experiment TOML file.")
    @click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the master seed.")
    @click.option("--workers", type=click.IntRange(min=1), default=None, help="Worker processes for per-cloud attacks.")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
    @_exit_codes
    @functools.wraps(fn)
    def wrapper(config_path, seed, workers, out_dir, verbose, **kwargs):
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
        cfg = load_config(config_path)
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if workers is not None:
            changes["workers"] = workers
        if out_dir is not None:
            changes["out_dir"] = out_dir
        if changes:
            try:
                cfg = cfg.replace(**changes)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return fn(cfg, Path(cfg.out_dir), **kwargs)

    return wrapper


def _pick(items, names, what):
    if not names:
        return list(items)
    known = {i.name: i for i in items}
    missing = [n for n in names if n not in known]
    if missing:
        raise ConfigError(f"unknown {what}: {', '.join(missing)}")
    return [known[n] for n in names]


def _data(out: Path):
    train, _ = runner.load_cloud_set(out / "data" / "train")
    test, _ = runner.load_cloud_set(out / "data" / "test")
    return train, test


@click.group()
@click.version_option(package_name="advpc")
def main():
    """Black-box point-cloud attacks by latent-guided reverse diffusion."""


@main.command("gen-data")
@common_options
def gen_data(cfg: ExperimentConfig, out: Path):
    """Generate the synthetic train and test sets."""
    train, test = runner.build_datasets(cfg)
    runner.save_cloud_set(out / "data" / "train", train)
    runner.save_cloud_set(out / "data" / "test", test)
    click.echo(f"wrote {len(train)} train and {len(test)} test clouds to {out / 'data'}")


@main.command("train-clf")
@common_options
def train_clf(cfg: ExperimentConfig, out: Path):
    """Train the proxy and every target classifier."""
    train, test = _data(out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    for spec in (cfg.proxy, *cfg.targets):
        model = runner.train_classifier_spec(cfg, spec, train)
        save_classifier(out / "models" / f"{spec.name}.nnp", model)
        click.echo(f"{spec.name} ({spec.arch}): test accuracy {accuracy(model, test):.4f}")


@main.command("train-diff")
@common_options
def train_diff(cfg: ExperimentConfig, out: Path):
    """Train the encoder, denoiser and flow prior."""
    train, _ = _data(out)
    model = runner.train_diffusion_stage(cfg, train)
    (out / "models").mkdir(parents=True, exist_ok=True)
    save_diffusion(out / "models" / "diffusion.nnp", model)
    click.echo(f"eps loss {model.history[0]:.4f} -> {model.history[-1]:.4f}")


@main.command()
@common_options
@click.option("--attack", "names", multiple=True, help="Attack name from the config (repeatable; default all).")
def attack(cfg: ExperimentConfig, out: Path, names):
    """Craft adversarial clouds for the test set."""
    train, test = _data(out)
    models = runner.load_models(cfg, out / "models")
    for spec in _pick(cfg.attacks, names, "attack"):
        adv, seconds = runner.run_attack(spec, test, train, models, cfg, cfg.workers)
        runner.save_cloud_set(out / "adv" / spec.name, adv, seconds)
        click.echo(f"{spec.name}: {len(adv)} clouds in {seconds:.1f}s")


@main.command()
@common_options
@click.option("--attack", "names", multiple=True, help="Attack whose outputs to defend (default all).")
def defend(cfg: ExperimentConfig, out: Path, names):
    """Apply every configured defense to the adversarial clouds."""
    for spec in _pick(cfg.attacks, names, "attack"):
        adv, _ = runner.load_cloud_set(out / "adv" / spec.name)
        for d in cfg.defenses:
            clouds, seconds = runner.run_defense(d, adv, cfg)
            runner.save_cloud_set(out / "defended" / spec.name / d.name, clouds, seconds)
        click.echo(f"{spec.name}: {len(cfg.defenses)} defenses applied")


@main.command("eval")
@common_options
def eval_cmd(cfg: ExperimentConfig, out: Path):
    """Score stored adversarial and defended clouds against every target."""
    _, test = _data(out)
    models = runner.load_models(cfg, out / "models")
    report = EvaluationReport(meta=runner.report_meta(cfg, models, test))
    for spec in cfg.attacks:
        adv, seconds = runner.load_cloud_set(out / "adv" / spec.name)
        defended = {}
        for d in cfg.defenses:
            clouds, dsec = runner.load_cloud_set(out / "defended" / spec.name / d.name)
            defended[d.name] = (clouds, dsec or 0.0)
        report.rows.extend(runner.attack_rows(cfg, spec, test, adv, seconds or 0.0, defended, models.targets))
    runner.write_reports(report, out)
    click.echo(report.to_csv(), nl=False)


@main.command()
@common_options
def run(cfg: ExperimentConfig, out: Path):
    """Run the whole pipeline and write report.csv and report.json."""
    report = runner.run_experiment(cfg, out)
    click.echo(report.to_csv(), nl=False)


if __name__ == "__main__":
    main()
