import os

import pytest

# single-threaded numerics so that timings and results do not depend on the host
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

_ACCEPTANCE = {}


class AcceptanceLog:
    """Collects one result line per acceptance criterion."""

    def record(self, number: int, title: str, passed: bool, detail: str, info: str = ""):
        _ACCEPTANCE[number] = (title, passed, detail, info)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail, info = _ACCEPTANCE[number]
        tr.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
        if info:
            tr.write_line(f"       info: {info}")
    n_pass = sum(v[1] for v in _ACCEPTANCE.values())
    tr.write_line(f"{n_pass}/{len(_ACCEPTANCE)} criteria passed")
