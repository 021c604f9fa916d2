import numpy as np
import pytest

from ppfredholm.geometry import Window, triangulate

HOLE_P1 = np.array([[0.35, 0.35], [0.65, 0.35], [0.65, 0.65], [0.35, 0.65]])
HOLE_P2 = np.array([[0.05, 0.36], [0.95, 0.36], [0.95, 0.64], [0.05, 0.64]])


@pytest.fixture(scope="session")
def unit_square():
    return Window.rectangle(0, 0, 1, 1)


@pytest.fixture(scope="session")
def w_obs_p1():
    return Window.rectangle(0, 0, 1, 1, holes=[HOLE_P1])


@pytest.fixture(scope="session")
def w_obs_p2():
    return Window.rectangle(0, 0, 1, 1, holes=[HOLE_P2])


@pytest.fixture(scope="session")
def coarse_mesh_p1(w_obs_p1):
    return triangulate(w_obs_p1, 0.05)


@pytest.fixture(scope="session")
def fine_mesh_p1(w_obs_p1):
    return triangulate(w_obs_p1, 0.012)


# ---------------------------------------------------------------- acceptance report

_CRITERIA = {}
# module suites whose results make up the property criterion
PROPERTY_SUITES = {"test_geometry", "test_pointprocess", "test_moments", "test_fredholm",
                   "test_oracle", "test_study", "test_cli"}
PROPERTY_TITLE = "module invariant and property suites"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if not (rep.when == "call" or rep.outcome != "passed"):
        return
    if mark is not None:
        n, title = mark.args
    elif item.module.__name__.rsplit(".", 1)[-1] in PROPERTY_SUITES:
        n, title = 12, PROPERTY_TITLE
    else:
        return
    entry = _CRITERIA.setdefault(n, {"title": title, "status": [], "notes": []})
    if hasattr(rep, "wasxfail"):
        status = "FAIL (expected; see decisions ledger)" if rep.skipped else "PASS (unexpected)"
    else:
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
    entry["status"].append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        states = {s for _, s in e["status"]}
        overall = "PASS" if states == {"PASS"} else sorted(states - {"PASS"})[0]
        tr.write_line(f"criterion {n:2d}  {overall:<40s} {e['title']}")
        if n == 12:
            bad = [name for name, s in e["status"] if s != "PASS"]
            tr.write_line(f"              {len(e['status'])} tests, {len(bad)} not passing"
                          + (f": {', '.join(bad)}" if bad else ""))
        for text in e["notes"]:
            tr.write_line(f"              {text}")


@pytest.fixture
def note(request):
    """Record a measured value for the acceptance summary."""
    mark = request.node.get_closest_marker("criterion")

    def add(text):
        n, title = mark.args
        _CRITERIA.setdefault(n, {"title": title, "status": [], "notes": []})["notes"].append(text)

    return add
