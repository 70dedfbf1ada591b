import numpy as np
import pytest

from gaussdiff import GaussianModel


def random_model(rng, d, r=None, lam_lo=1e-3, lam_hi=10.0):
    r = d if r is None else r
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.sort(np.exp(rng.uniform(np.log(lam_lo), np.log(lam_hi), r)))[::-1]
    return GaussianModel(rng.standard_normal(d), q[:, :r], lam)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def square_cloud():
    from gaussdiff import PointCloud

    return PointCloud(np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]))


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def record(criterion: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {title} -- {detail}"
    ACCEPTANCE.append((criterion, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE, key=lambda x: x[0]):
            terminalreporter.write_line(line)
