import numpy as np
import pytest


def random_rect(rng, center_range=(20, 80), side_range=(5, 40)):
    """Random rotated rectangle as 4 clockwise (image frame) points."""
    cx, cy = rng.uniform(*center_range, 2)
    w, h = rng.uniform(*side_range, 2)
    a = rng.uniform(-np.pi, np.pi)
    c, s = np.cos(a), np.sin(a)
    local = np.array([[-w, -h], [w, -h], [w, h], [-w, h]]) / 2
    return local @ np.array([[c, s], [-s, c]]) + np.array([cx, cy])


def random_convex_quad(rng, center=(50, 50), radius=(10, 30)):
    """Convex quad from 4 sorted angles on a jittered circle."""
    ang = np.sort(rng.uniform(0, 2 * np.pi, 4))
    while np.max(np.diff(np.r_[ang, ang[0] + 2 * np.pi])) > np.pi * 0.95:
        ang = np.sort(rng.uniform(0, 2 * np.pi, 4))
    r = rng.uniform(*radius)
    return np.stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_line(request):
    """Record one acceptance line; all of them are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{label}: {'PASS' if ok else 'FAIL'} {detail}"
        lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
