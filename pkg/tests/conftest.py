import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flexsec.channel import NetworkRealization  # noqa: E402


def make_real(H, G, noise=1.0, pmax=1.0):
    H = np.asarray(H, dtype=complex)
    G = np.asarray(G, dtype=complex)
    n_users, k = G.shape
    return NetworkRealization(np.zeros((n_users, 2)), np.zeros((k, 2)), H, G,
                              np.ones((n_users, k)), noise, pmax)


def random_real(rng, n_pairs, n_eves, noise=1.0, pmax=1.0):
    n = 2 * n_pairs
    H = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    np.fill_diagonal(H, 0)
    G = rng.normal(size=(n, n_eves)) + 1j * rng.normal(size=(n, n_eves))
    return make_real(H, G, noise, pmax)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


# -- acceptance reporting ---------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    entry = _CRITERIA.setdefault(mark.args[0], {"ok": True, "notes": []})
    entry["ok"] &= report.passed
    entry["notes"] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  " + "; ".join(dict.fromkeys(entry["notes"])))
