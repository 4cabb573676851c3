import numpy as np
import pytest

from tqg.quantization import build_basis


@pytest.fixture(scope="session", autouse=True)
def _basis_cache(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    mp.setenv("TQG_BASIS_CACHE_DIR", str(tmp_path_factory.mktemp("basis-cache")))
    yield
    mp.undo()


@pytest.fixture(scope="session")
def basis():
    """Memoized basis factory: ``basis(n)``."""
    return build_basis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_skew(rng, n, scale=1.0):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (A - A.conj().T) / 2


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_line():
    """Record a one-line acceptance verdict, echoed in the terminal summary."""

    def emit(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
