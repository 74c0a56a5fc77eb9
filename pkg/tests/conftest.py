import dataclasses
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from advpc.harness import build_datasets, load_config, run_attack, train_models  # noqa: E402
from advpc.nn import PointNetLite  # noqa: E402

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.toml"
N_ATTACK = 200

# acceptance outcomes, (number, title, passed, detail); printed in the terminal summary
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def trained():
    """The default experiment's data and models, with 200 held-out clouds per class."""
    cfg = load_config(DEFAULT_CONFIG)
    cfg = cfg.replace(dataset=dataclasses.replace(cfg.dataset, test_per_class=200))
    start = time.perf_counter()
    train, held_out = build_datasets(cfg)
    models = train_models(cfg, train)
    seconds = time.perf_counter() - start
    # interleaved by class, so the first 200 held-out clouds hold 50 per class
    attack_set = held_out[:N_ATTACK]
    return SimpleNamespace(cfg=cfg, train=train, held_out=held_out, attack_set=attack_set, models=models, train_seconds=seconds)


@pytest.fixture(scope="session")
def diffusion_run(trained):
    """Default diffusion attack over the attack set, with classifier calls counted."""
    spec = next(a for a in trained.cfg.attacks if a.kind == "diffusion")
    before = PointNetLite.forward_calls
    adv, seconds = run_attack(spec, trained.attack_set, trained.train, trained.models, trained.cfg)
    calls = PointNetLite.forward_calls - before
    labels = np.array([c.label for c in trained.attack_set])
    return SimpleNamespace(spec=spec, adv=adv, seconds=seconds, classifier_calls=calls, labels=labels)
