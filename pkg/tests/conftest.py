import numpy as np
import pytest

from glsanet.classifier import BackboneConfig
from glsanet.glsa import GLSAConfig

# Lines collected by the acceptance suite; echoed in the terminal summary.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_backbone():
    return BackboneConfig(widths=(4, 8), blocks=(1, 1), strides=(1, 2))


@pytest.fixture
def tiny_glsa():
    return GLSAConfig(N=2, embed_dim=8, proximity=2, heads=2, head_dim=4, conv_depth=1)
