import pytest

from appl import harness
from appl.config import RunConfig, replace
from appl.meta_train import meta_train

SMALL = {
    "seed": 3,
    "meta.max_iters": 300,
    "meta.outer_lr": 1e-4,
    "adapt.lr": 1e-3,
    "adapt.max_iters": 30,
    "harness.n_tasks": 6,
}


@pytest.fixture(scope="session")
def small_cfg():
    return replace(RunConfig(), **SMALL)


@pytest.fixture(scope="session")
def domains(small_cfg):
    return harness.domains_for(small_cfg)


@pytest.fixture(scope="session")
def trained(small_cfg, domains):
    """A briefly meta-trained encoder and PCN shared across test modules."""
    return meta_train(small_cfg, domains[0])


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """``record(n, ok, detail)`` stores criterion ``n``'s outcome for the summary."""
    def _record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
