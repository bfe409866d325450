from __future__ import annotations

import pytest

from funcpool.config import PipelineConfig
from funcpool.embed import EmbeddingStore
from funcpool.fixtures import FixtureParams, make_fixture

# Reduced-size settings used wherever a test needs a trained model quickly.
SMALL_CONFIG = {
    "seed": 3,
    "stage1": {"iterations": 150, "lr": 1e-3, "tokens_per_iter": 512},
    "stage2": {"iterations": 150, "lr": 1e-3, "batch_size": 64, "hidden": 32},
}


@pytest.fixture(scope="session")
def small_fixture():
    return make_fixture(FixtureParams(n_proteins=40, n_classes=4, seed=11))


@pytest.fixture(scope="session")
def small_store(small_fixture):
    return EmbeddingStore.from_matrices(small_fixture.embeddings)


@pytest.fixture(scope="session")
def small_config():
    return PipelineConfig.from_dict(SMALL_CONFIG)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory, small_fixture):
    from funcpool.fixtures import write_fixture

    out = tmp_path_factory.mktemp("fixture")
    write_fixture(small_fixture, out)
    return out


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory, small_config, fixture_dir):
    from funcpool.runner import run_pipeline

    out = tmp_path_factory.mktemp("run")
    return run_pipeline(small_config, fixture_dir, out)


# Lines recorded by the acceptance suite, echoed after the run so they are
# visible without ``-s``.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
