"""End-to-end experiment pipeline: data, models, attacks, defenses, report."""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .. import __version__
from ..attack import diffusion_attack, fgsm_batch, ifgsm_batch, pgd_batch, select_guidance_latent
from ..core import PointCloud, load_cloud, make_dataset, save_cloud
from ..defenses import sor, srs
from ..diffusion import DiffusionModel, load_diffusion, save_diffusion, train_diffusion
from ..metrics import asr, chamfer, hausdorff
from ..nn import PointNetLite, accuracy, load_classifier, predict, save_classifier, train_classifier
from .config import AttackSpec, DefenseSpec, ExperimentConfig
from .report import EvaluationReport, ReportRow, emit_report, failed_row

logger = logging.getLogger("advpc")


@dataclass
class Models:
    proxy: PointNetLite
    targets: dict[str, PointNetLite]
    diffusion: DiffusionModel


# ---- data and models -------------------------------------------------------


def build_datasets(cfg: ExperimentConfig) -> tuple[list[PointCloud], list[PointCloud]]:
    d = cfg.dataset
    train = make_dataset(d.train_per_class, d.n_points, cfg.component_seed("data"), d.kinds, "train")
    test = make_dataset(d.test_per_class, d.n_points, cfg.component_seed("data"), d.kinds, "test")
    return train, test


def train_classifier_spec(cfg: ExperimentConfig, spec, train: Sequence[PointCloud]) -> PointNetLite:
    tcfg = dataclasses.replace(spec.train, seed=cfg.component_seed("classifier", spec.name))
    return train_classifier(train, tcfg, spec.arch, log=logger.info)


def train_diffusion_stage(cfg: ExperimentConfig, train: Sequence[PointCloud]) -> DiffusionModel:
    dcfg = dataclasses.replace(cfg.diffusion, seed=cfg.component_seed("diffusion"))
    return train_diffusion(train, dcfg, log=logger.info)


def train_models(cfg: ExperimentConfig, train: Sequence[PointCloud]) -> Models:
    proxy = train_classifier_spec(cfg, cfg.proxy, train)
    targets = {t.name: train_classifier_spec(cfg, t, train) for t in cfg.targets}
    return Models(proxy, targets, train_diffusion_stage(cfg, train))


def save_models(models: Models, cfg: ExperimentConfig, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_classifier(directory / f"{cfg.proxy.name}.nnp", models.proxy)
    for name, m in models.targets.items():
        save_classifier(directory / f"{name}.nnp", m)
    save_diffusion(directory / "diffusion.nnp", models.diffusion)


def load_models(cfg: ExperimentConfig, directory) -> Models:
    directory = Path(directory)
    return Models(
        proxy=load_classifier(directory / f"{cfg.proxy.name}.nnp"),
        targets={t.name: load_classifier(directory / f"{t.name}.nnp") for t in cfg.targets},
        diffusion=load_diffusion(directory / "diffusion.nnp"),
    )


# ---- cloud sets on disk ----------------------------------------------------


def save_cloud_set(directory, clouds: Sequence[PointCloud], seconds: float | None = None) -> None:
    """One file per cloud plus an index that fixes their order (and optional timing)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for c in clouds:
        save_cloud(directory / f"{c.id}.pcd.txt", c)
    (directory / "index.txt").write_text("".join(f"{c.id}\n" for c in clouds))
    if seconds is not None:
        (directory / "seconds.txt").write_text(repr(seconds) + "\n")


def load_cloud_set(directory) -> tuple[list[PointCloud], float | None]:
    directory = Path(directory)
    ids = (directory / "index.txt").read_text().split()
    timing = directory / "seconds.txt"
    seconds = float(timing.read_text()) if timing.exists() else None
    return [load_cloud(directory / f"{i}.pcd.txt") for i in ids], seconds


# ---- attacks and defenses --------------------------------------------------

_WORKER_STATE: dict = {}


def _init_worker(state: dict) -> None:
    torch.set_num_threads(1)
    _WORKER_STATE.update(state)


def _diffusion_one(cloud: PointCloud) -> PointCloud:
    st = _WORKER_STATE
    cfg: ExperimentConfig = st["cfg"]
    spec: AttackSpec = st["spec"]
    model: DiffusionModel = st["model"]
    z = select_guidance_latent(
        model.enc, st["train"], cloud.label, spec.guidance, seed=cfg.component_seed("guidance", spec.name, cloud.id)
    )
    acfg = spec.build(cfg.component_seed("attack", spec.name, cloud.id))
    return diffusion_attack(cloud, z, model.den, model.sched, acfg)


def run_attack(
    spec: AttackSpec,
    clean: Sequence[PointCloud],
    train: Sequence[PointCloud],
    models: Models,
    cfg: ExperimentConfig,
    workers: int = 1,
) -> tuple[list[PointCloud], float]:
    """Adversarial versions of ``clean`` and the wall time spent making them.

    Baselines see only the proxy; the diffusion attack sees no classifier at all.
    """
    start = time.perf_counter()
    if spec.kind == "none":
        out = list(clean)
    elif spec.kind == "diffusion":
        state = {"cfg": cfg, "spec": spec, "model": models.diffusion, "train": list(train)}
        if workers > 1:
            with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(state,)) as pool:
                out = list(pool.map(_diffusion_one, clean, chunksize=max(1, len(clean) // (4 * workers))))
        else:
            _WORKER_STATE.update(state)
            try:
                out = [_diffusion_one(c) for c in clean]
            finally:
                _WORKER_STATE.clear()
    else:
        bcfg = spec.build(cfg.component_seed("attack", spec.name))
        fn = {"fgsm": fgsm_batch, "ifgsm": ifgsm_batch, "pgd": pgd_batch}[spec.kind]
        out = fn(models.proxy, clean, bcfg)
    return out, time.perf_counter() - start


def run_defense(spec: DefenseSpec, clouds: Sequence[PointCloud], cfg: ExperimentConfig) -> tuple[list[PointCloud], float]:
    start = time.perf_counter()
    if spec.kind == "none":
        out = list(clouds)
    elif spec.kind == "sor":
        dcfg = spec.build(0)
        out = [sor(c, dcfg) for c in clouds]
    else:
        out = [srs(c, spec.build(cfg.component_seed("defense", spec.name, c.id))) for c in clouds]
    return out, time.perf_counter() - start


# ---- evaluation ------------------------------------------------------------


def attack_rows(
    cfg: ExperimentConfig,
    attack: AttackSpec,
    clean: Sequence[PointCloud],
    adv: Sequence[PointCloud],
    attack_seconds: float,
    defended: dict[str, tuple[Sequence[PointCloud], float]],
    targets: dict[str, PointNetLite],
) -> list[ReportRow]:
    """Rows for one attack; CD and HD compare the undefended adversarial clouds with the clean ones."""
    n = len(clean)
    labels = np.array([c.label for c in clean])
    cd = float(np.mean([chamfer(c, a) for c, a in zip(clean, adv)]))
    hd = float(np.mean([hausdorff(c, a) for c, a in zip(clean, adv)]))
    rows = []
    for dspec in cfg.defenses:
        clouds, dsec = defended[dspec.name]
        ms = 1000.0 * (attack_seconds + dsec) / n
        for t in cfg.targets:
            rate = asr(predict(targets[t.name], list(clouds)), labels)
            rows.append(ReportRow(cfg.proxy.name, attack.name, dspec.name, t.name, rate, cd, hd, ms))
    return rows


def report_meta(cfg: ExperimentConfig, models: Models, test: Sequence[PointCloud]) -> dict:
    return {
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "n_test": len(test),
        "clean_accuracy": {
            cfg.proxy.name: accuracy(models.proxy, test),
            **{name: accuracy(m, test) for name, m in models.targets.items()},
        },
        "diffusion_eps_loss": {
            "first_epoch": models.diffusion.history[0],
            "last_epoch": models.diffusion.history[-1],
        },
    }


def evaluate_attacks(
    cfg: ExperimentConfig,
    models: Models,
    train: Sequence[PointCloud],
    test: Sequence[PointCloud],
    workers: int = 1,
    on_attack=None,
) -> EvaluationReport:
    """Run every attack x defense x target cell.

    If an attack raises, a failed marker row is appended, ``report.meta['partial']``
    is set and the exception is re-raised with the partial report attached as
    ``exc.report``.
    """
    report = EvaluationReport(meta=report_meta(cfg, models, test))
    for spec in cfg.attacks:
        try:
            logger.info("attack %s on %d clouds", spec.name, len(test))
            adv, seconds = run_attack(spec, test, train, models, cfg, workers)
            defended = {d.name: run_defense(d, adv, cfg) for d in cfg.defenses}
        except Exception as exc:
            report.rows.append(failed_row(cfg.proxy.name, spec.name, f"{type(exc).__name__}: {exc}"))
            report.meta["partial"] = True
            exc.report = report
            raise
        if on_attack is not None:
            on_attack(spec, adv, seconds, defended)
        report.rows.extend(attack_rows(cfg, spec, test, adv, seconds, defended, models.targets))
    return report


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int | None = None) -> EvaluationReport:
    """Full pipeline; writes models and report.{csv,json} under ``out_dir`` when given."""
    out = Path(out_dir) if out_dir is not None else None
    workers = workers or cfg.workers
    train, test = build_datasets(cfg)
    logger.info("dataset: %d train, %d test clouds", len(train), len(test))
    models = train_models(cfg, train)
    if out is not None:
        save_models(models, cfg, out / "models")
    try:
        report = evaluate_attacks(cfg, models, train, test, workers)
    except Exception as exc:
        if out is not None and hasattr(exc, "report"):
            write_reports(exc.report, out)
        raise
    if out is not None:
        write_reports(report, out)
    return report


def write_reports(report: EvaluationReport, out_dir) -> None:
    out_dir = Path(out_dir)
    emit_report(report, out_dir / "report.csv")
    emit_report(report, out_dir / "report.json")
