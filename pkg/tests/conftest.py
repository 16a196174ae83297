import numpy as np
import pytest
from scipy import ndimage

from roadpf.core import Frame


def smooth_texture(h=96, w=96, seed=0, sigma=3.0):
    """Band-limited random image rescaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((h, w)), sigma, mode="wrap")
    img -= img.min()
    return img / img.max()


def shifted_pair(dx, dy, size=96, seed=0, sigma=3.0):
    """Two frames where the second is the first translated by integer (dx, dy) px."""
    big = smooth_texture(size + 40, size + 40, seed, sigma)
    a = big[20:20 + size, 20:20 + size]
    b = big[20 - dy:20 - dy + size, 20 - dx:20 - dx + size]
    return Frame(a.copy()), Frame(b.copy())


@pytest.fixture
def texture():
    return smooth_texture()


# --- acceptance reporting --------------------------------------------------------

_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.get_closest_marker("acceptance") is None:
        return
    title = (item.function.__doc__ or item.name).strip().splitlines()[0]
    entry = _criteria.setdefault(item.name, {"title": title, "passed": True, "seconds": 0.0})
    entry["seconds"] += report.duration
    if report.failed or (report.when == "call" and report.skipped):
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, e in sorted(_criteria.items(), key=lambda kv: int(kv[0].split("_")[2])):
        number = name.split("_")[2]
        status = "PASS" if e["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']} ({e['seconds']:.1f} s)")
