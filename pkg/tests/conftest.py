import numpy as np
import pytest

from uwbpose.geometry import Pose, random_rotation, regular_layout
from uwbpose.ranging import SensorLayout

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def endpoint_layout():
    """Anchor tetrahedron L_a = 2.5 m, tag triangle L_t = 3.2 m (circumradii)."""
    return SensorLayout(regular_layout("tetrahedron", 2.5).vertices,
                        regular_layout("triangle", 3.2).vertices)


def random_layout(rng, n_anchors=4, n_tags=3, scale=2.0):
    return SensorLayout(rng.uniform(-scale, scale, size=(n_anchors, 3)),
                        rng.uniform(-scale, scale, size=(n_tags, 3)))


def random_pose(rng, distance=10.0):
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return Pose(random_rotation(rng), distance * direction)


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for the acceptance summary."""
    label = request.node.get_closest_marker("criterion").args[0]
    detail = {}
    yield detail
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    extra = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                      for k, v in detail.items())
    line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f" ({extra})" if extra else "")
    _ACCEPTANCE.append(line)
    print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
