import os
from pathlib import Path

import numpy as np
import pytest

from sscn.dataio import MNIST_FILES
from sscn.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def mnist_dir() -> Path:
    return Path(os.environ.get("SSCN_MNIST_DIR", "/root/data/mnist"))


def have_mnist() -> bool:
    root = mnist_dir()
    return all((root / f).exists() for pair in MNIST_FILES.values() for f in pair)


needs_mnist = pytest.mark.skipif(not have_mnist(), reason="MNIST IDX files not found; set SSCN_MNIST_DIR")


def assert_close(a, b, tol, what=""):
    err = float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0
    assert err <= tol, f"{what} max deviation {err:.3e} > {tol:.1e}"


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record a named acceptance result, then assert it."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(name, passed, detail):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {name}: {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
