"""Shared fixtures: grid datasets and the reference trained models.

Training the reference models dominates the suite's runtime (several
minutes each). Set INVEXLEVEL_TEST_CACHE to a directory to reuse trained
archives across local runs; the cache stores the measured training time
alongside so the budget check still sees the original figure.
"""

import json
import os
import time
from dataclasses import dataclass

import pytest
import torch

from invexlevel.model import TrainConfig, TrainReport, train
from invexlevel.store import load_model, save_model
from invexlevel.targets import GridSpec, grid_dataset, make_target

SEED = 0
ROSEN_EPOCHS = 2000
GAUSS2_INVEX_EPOCHS = 600
GAUSS2_BASELINE_EPOCHS = 150


@dataclass
class TrainedRef:
    """A reference model plus how it was produced."""

    model: object
    config: TrainConfig
    seconds: float
    report: TrainReport | None = None  # None when loaded from the cache


def _reference(kind: str, target_name: str, epochs: int) -> TrainedRef:
    config = TrainConfig(epochs=epochs, seed=SEED)
    cache = os.environ.get("INVEXLEVEL_TEST_CACHE")
    tag = f"{kind}-{target_name}-e{epochs}-s{SEED}"
    arc = os.path.join(cache, tag + ".json") if cache else None
    if arc and os.path.exists(arc):
        meta_path = arc + ".meta"
        with open(meta_path) as fh:
            seconds = json.load(fh)["seconds"]
        return TrainedRef(load_model(arc), config, seconds)
    dataset = grid_dataset(GridSpec(), make_target(target_name))
    t0 = time.perf_counter()
    result = train(kind, dataset, config)
    seconds = time.perf_counter() - t0
    if arc:
        os.makedirs(cache, exist_ok=True)
        save_model(result.model, arc, train_config=config, seed=SEED)
        with open(arc + ".meta", "w") as fh:
            json.dump({"seconds": seconds}, fh)
    return TrainedRef(result.model, config, seconds, result.report)


@pytest.fixture(scope="session")
def rosen_data():
    return grid_dataset(GridSpec(), make_target("rosenbrock"))


@pytest.fixture(scope="session")
def gauss2_data():
    return grid_dataset(GridSpec(), make_target("gauss2"))


@pytest.fixture(scope="session")
def rosen_invex() -> TrainedRef:
    return _reference("invex", "rosenbrock", ROSEN_EPOCHS)


@pytest.fixture(scope="session")
def gauss2_invex() -> TrainedRef:
    return _reference("invex", "gauss2", GAUSS2_INVEX_EPOCHS)


@pytest.fixture(scope="session")
def gauss2_baseline() -> TrainedRef:
    return _reference("cycle-baseline", "gauss2", GAUSS2_BASELINE_EPOCHS)


@pytest.fixture()
def gen():
    """Fresh seeded torch generator per test."""
    return torch.Generator().manual_seed(1234)
