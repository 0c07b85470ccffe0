import numpy as np
import pytest

from papi import pll_data as data


@pytest.fixture(scope="session")
def blobs4():
    """K=4, d=8, separation 6, 500 per class (the toy reference training set)."""
    return data.make_blobs(4, 500, 8, 6.0, seed=0)


@pytest.fixture
def tiny_partial():
    clean = data.make_blobs(3, 10, 4, 4.0, seed=5)
    return data.uniform_candidates(clean, 0.5, seed=5)


def random_distributions(rng: np.random.Generator, n: int, k: int, alpha: float = 0.5) -> np.ndarray:
    return rng.dirichlet(np.full(k, alpha), size=n)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    ACCEPTANCE = getattr(module, "ACCEPTANCE", None)

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in sorted(ACCEPTANCE.items()):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
