"""Shared fixtures: a small synthetic dataset and a short training run.

Both are session-scoped; tests treat their outputs as read-only.
"""

from __future__ import annotations

import pytest

from sketchret.config import TrainConfig
from sketchret.dataset import load_dataset, split_dataset
from sketchret.synth import SynthSpec, generate_dataset
from sketchret.trainer import train


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "tiny"
    generate_dataset(
        SynthSpec(
            num_categories=3,
            instances_per_category=10,
            styles_train=3,
            styles_heldout=2,
            size=32,
            seed=11,
        ),
        root,
    )
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_dir):
    return load_dataset(tiny_dataset_dir)


@pytest.fixture(scope="session")
def tiny_splits(tiny_dataset):
    return split_dataset(tiny_dataset, seed=0)


def micro_config(**overrides) -> TrainConfig:
    base = dict(
        image_size=32,
        channels=(8, 16, 32),
        d=16,
        epochs=3,
        warmup_epochs=1,
        meta_batch=4,
        warmup_batch_size=8,
        eval_every=1,
        lambda1_end=0.01,
        lambda1_ramp_last_epochs=2,
        seed=7,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def micro_run(tiny_dataset_dir, tmp_path_factory):
    """A finished short training run: (config, run_dir, checkpoint_path)."""
    cfg = micro_config()
    out = tmp_path_factory.mktemp("runs") / "micro"
    ckpt = train(cfg, tiny_dataset_dir, out)
    return cfg, out, ckpt


# Verdict lines recorded by the acceptance suite.  Printed in a summary
# section by the hook below so they survive pytest's fd-level capture.
ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
