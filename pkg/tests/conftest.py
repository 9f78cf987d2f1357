import numpy as np
import pytest
from hypothesis import settings

from biclip.config import TrainConfig
from biclip.data import generate_synthetic

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Small enough that a few training steps take well under a second."""
    return TrainConfig(
        image_side=16, d_raw=16, d_t=8, d_i=8, d_p=8, base_width=4, batch_size=4, epochs=2, lr_initial=2e-3
    )


@pytest.fixture(scope="session")
def tiny_data():
    return generate_synthetic(8, 16, 16, seed=11)


@pytest.fixture(scope="session")
def tiny_test_data():
    return generate_synthetic(4, 16, 16, seed=12, split="test")


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[_VERDICTS].append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
