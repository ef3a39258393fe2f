import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def mnist5k_dir(tmp_path_factory):
    """IDX export of the 5000-image MNIST sample, shared by the whole session."""
    pytest.importorskip("mlxtend")
    from qsteer.data import export_mnist5k

    root = tmp_path_factory.mktemp("qsteer-data")
    export_mnist5k(root)
    return root


_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
