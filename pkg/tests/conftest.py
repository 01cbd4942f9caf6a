import numpy as np
import pytest

from sedd import oracle, process
from sedd.process import TransitionSpec


def specs(n):
    return [TransitionSpec.uniform(n), TransitionSpec.absorbing(n)]


def random_dist(rng, n, d, alpha=1.0):
    return oracle.EnumeratedDist(d, n, rng.dirichlet(np.full(n**d, alpha)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["uniform", "absorbing"])
def kind(request):
    return request.param


@pytest.fixture
def schedule_for():
    def pick(spec):
        return process.GeometricSchedule() if spec.kind == "uniform" else process.LogLinearSchedule()
    return pick


# one summary line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {k:2d}  {detail}")
