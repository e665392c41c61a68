import numpy as np
import pytest

from ptfh.data import AreaData
from ptfh.rng import stream
from ptfh.transform import dpt_inv

D_PATTERN = (0.2, 0.4, 0.6, 0.8, 1.0)


def simulate(m, lam, seed, r=0, A=1.5, beta=(1.0, 1.0), D=None, replicates=0):
    """Data from the transformed model with x ~ U(0, 4) drawn per dataset."""
    rng = stream(seed, "test-data", r)
    x = rng.uniform(0.0, 4.0, m)
    if D is None:
        D = np.repeat(D_PATTERN, m // len(D_PATTERN))
    D = np.broadcast_to(np.asarray(D, dtype=float), (m,)).copy()
    theta = beta[0] + beta[1] * x + rng.normal(0.0, np.sqrt(A), m)
    y = dpt_inv(theta + rng.normal(0.0, 1.0, m) * np.sqrt(D), lam)
    X = np.column_stack([np.ones(m), x])
    ids = [f"a{i}" for i in range(m)]
    if replicates:
        Z = dpt_inv(rng.normal(0.0, 1.0, (m, replicates)) * np.sqrt(D)[:, None], lam)
        return AreaData(ids, y, X, Z=Z), D
    return AreaData(ids, y, X, D=D), D


@pytest.fixture
def small_data():
    return simulate(30, 0.5, seed=11)[0]


_CRITERIA: dict[int, list[tuple[str, bool, list]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        ok = rep.passed and not hasattr(rep, "wasxfail")
        notes = [v for k, v in item.user_properties if k == "detail"]
        _CRITERIA.setdefault(mark.args[0], []).append((item.name, ok, notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        checks = _CRITERIA[n]
        status = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        failed = [name for name, ok, _ in checks if not ok]
        tail = f"; failing: {', '.join(failed)}" if failed else ""
        tr.write_line(f"criterion {n}: {status} ({len(checks) - len(failed)}/{len(checks)} checks{tail})")
        for _, _, notes in checks:
            for note in notes:
                tr.write_line(f"    {note}")
