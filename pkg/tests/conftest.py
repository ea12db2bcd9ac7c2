import numpy as np
import pytest


def random_spd(rng, d, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    ev = np.exp(rng.uniform(0, np.log(cond), d))
    return (Q * ev) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    key = (mark.args[0], item.name)
    _CRITERIA[key] = (mark.args[1], "PASS" if call.excinfo is None else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    numbers = sorted({number for number, _ in _CRITERIA})
    for number in numbers:
        parts = [(name, *_CRITERIA[(n, name)]) for n, name in sorted(_CRITERIA) if n == number]
        verdict = "PASS" if all(v == "PASS" for _, _, v in parts) else "FAIL"
        detail = "; ".join(f"{title}: {v}" if len(parts) > 1 else title for _, title, v in parts)
        terminalreporter.write_line(f"criterion {number:>3}: {verdict}  {detail}")
