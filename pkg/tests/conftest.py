from __future__ import annotations

import numpy as np
import pytest

from promptshift import presets
from promptshift.corpus import OracleDims, OracleParams, build_oracle, generate
from promptshift.stats import extract_stats


@pytest.fixture(scope="session")
def oracle():
    return build_oracle(0)


@pytest.fixture(scope="session")
def linear_oracle():
    """Identity-activation encoder: input shifts map exactly to latent shifts."""
    return build_oracle(0, params=OracleParams(cnn_activation="identity"))


@pytest.fixture(scope="session")
def small_linear_oracle():
    dims = OracleDims(d_in=8, d=8, num_layers=2, heads=2, ff=16)
    return build_oracle(0, dims, OracleParams(content_dims=6, cnn_activation="identity"))


@pytest.fixture(scope="session")
def source_corpus(oracle):
    return generate(presets.source(), oracle)


@pytest.fixture(scope="session")
def source_stats(oracle, source_corpus):
    return extract_stats(oracle[0], source_corpus)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
