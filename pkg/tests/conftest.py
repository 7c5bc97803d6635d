from dataclasses import replace

import numpy as np
import pytest

from ctp.continual import STANDARD_SEEDS, STANDARD_TRAIN, ctp_ce_variant, sequential_train, standard_suite
from ctp.nn import DenseNet, DisMaxHead, ExpertModel, LinearHead


def random_expert(rng, sizes=(3, 5, 4), num_classes=3, kind="dismax", entropic_scale=1.0,
                  task_id=0, class_offset=0):
    net = DenseNet([rng.normal(size=(o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                   [rng.normal(scale=0.5, size=o) for o in sizes[1:]])
    if kind == "dismax":
        head = DisMaxHead(rng.normal(size=(num_classes, sizes[-1])),
                          rng.uniform(0.5, 2.0) * rng.choice([-1, 1]), entropic_scale)
    else:
        head = LinearHead(rng.normal(size=(num_classes, sizes[-1])), rng.normal(size=num_classes))
    return ExpertModel(net, head, task_id, class_offset)


# PASS/FAIL lines from the acceptance tests, echoed again in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def standard_runs():
    """Per seed: data splits plus DisMax and CE registries on the standard suite."""
    runs = {}
    for seed in STANDARD_SEEDS:
        train, test = standard_suite(seed)
        cfg = replace(STANDARD_TRAIN, seed=seed)
        runs[seed] = {
            "train": train,
            "test": test,
            "config": cfg,
            "dismax": sequential_train(train, cfg),
            "ce": ctp_ce_variant(train, cfg),
        }
    return runs
