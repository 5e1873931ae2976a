import numpy as np
import pytest

from srdti.scheme import optimize_directions
from srdti.volume import DwiStack, GradientTable, Volume


def random_table(n=6, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return GradientTable(d, np.ones(n))


def random_stack(dims=(8, 9, 10), n=6, seed=0, t1=True, mask=False, spacing=(1.0, 1.5, 2.0)):
    rng = np.random.default_rng(seed)
    like = Volume(np.zeros(dims), spacing, (-3.0, 2.0, 0.5))
    b0 = like.with_data(rng.uniform(0.5, 1.0, dims))
    dwis = tuple(like.with_data(b0.data * rng.uniform(0.1, 0.9, dims)) for _ in range(n))
    t1v = like.with_data(rng.uniform(0, 1, dims)) if t1 else None
    m = like.with_data((rng.uniform(size=dims) > 0.3).astype(float)) if mask else None
    return DwiStack(b0, dwis, random_table(n, seed), t1v, m)


@pytest.fixture(scope="session")
def scheme():
    return optimize_directions(seed=0, restarts=4)


# one verdict line per acceptance criterion, printed at the end of the run
VERDICTS = {}


@pytest.fixture
def verdict(request):
    def record(number, ok, detail):
        VERDICTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
